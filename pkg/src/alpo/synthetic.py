"""Seeded synthetic bilingual subtitle programs and a matching stub lexicon.

Source words are invented syllable strings; each maps to a few target-side
synonyms of different lengths, so the dictionary generator produces varied
candidates and the length evaluator spreads their scores.
"""
from __future__ import annotations

import os
import random

from alpo.corpus import SubtitleLine, SubtitleTrack, serialize_srt

_SYLLABLES = ["ka", "lo", "mi", "ten", "sha", "ru", "po", "zen", "fu", "ya", "qi", "do"]
_TARGET_WORDS = [
    ["go", "leave", "depart"],
    ["eat", "dine", "devour"],
    ["house", "home", "dwelling"],
    ["friend", "pal", "companion"],
    ["night", "evening", "nightfall"],
    ["run", "dash", "sprint away"],
    ["look", "see", "take a look"],
    ["water", "drink", "refreshment"],
    ["now", "right now", "immediately"],
    ["city", "town", "metropolis"],
    ["rain", "storm", "downpour"],
    ["happy", "glad", "overjoyed"],
    ["road", "street", "avenue"],
    ["money", "cash", "fortune"],
    ["old", "aged", "ancient"],
    ["quiet", "calm", "silent"],
    ["fast", "quick", "lightning fast"],
    ["door", "gate", "entrance"],
    ["sky", "heaven", "firmament"],
    ["king", "ruler", "sovereign"],
    ["tea", "brew", "hot tea"],
    ["boat", "ship", "vessel"],
    ["fire", "flame", "blaze"],
    ["song", "tune", "melody"],
]


def make_lexicon(seed: int = 0) -> dict[str, list[str]]:
    rng = random.Random(seed)
    words = set()
    while len(words) < len(_TARGET_WORDS):
        words.add("".join(rng.sample(_SYLLABLES, 2)))
    return {src: list(tgt) for src, tgt in zip(sorted(words), _TARGET_WORDS)}


def make_program(
    lexicon: dict[str, list[str]],
    n_lines: int = 40,
    seed: int = 0,
    jitter: float = 0.3,
    drop_rate: float = 0.05,
) -> tuple[SubtitleTrack, SubtitleTrack]:
    """Source and target tracks for one program.

    Target cues start within ``jitter`` seconds of their source cue; a few
    target cues are dropped so alignment has unmatched lines to report.
    """
    rng = random.Random(seed)
    src_words = sorted(lexicon)
    src, tgt = [], []
    t = 1.0
    for _ in range(n_lines):
        words = [rng.choice(src_words) for _ in range(rng.randint(3, 6))]
        dur = round(rng.uniform(1.2, 2.5), 3)
        src.append(SubtitleLine(round(t, 3), round(t + dur, 3), " ".join(words)))
        if rng.random() >= drop_rate:
            shift = round(rng.uniform(-jitter, jitter), 3)
            start = max(0.0, round(t + shift, 3))
            tgt.append(SubtitleLine(start, round(start + dur, 3), " ".join(lexicon[w][0] for w in words)))
        t += dur + rng.uniform(0.8, 1.5)
    return SubtitleTrack(tuple(src), "zh"), SubtitleTrack(tuple(tgt), "en")


def write_programs(directory, count: int = 2, n_lines: int = 40, seed: int = 0) -> list[tuple[str, str]]:
    """Write ``count`` program pairs as SRT files; returns their (source, target) paths."""
    os.makedirs(directory, exist_ok=True)
    lexicon = make_lexicon(seed)
    paths = []
    for p in range(count):
        src, tgt = make_program(lexicon, n_lines, seed=seed * 1000 + p)
        sp = os.path.join(directory, f"program{p}.zh.srt")
        tp = os.path.join(directory, f"program{p}.en.srt")
        with open(sp, "w", encoding="utf-8") as fh:
            fh.write(serialize_srt(src))
        with open(tp, "w", encoding="utf-8") as fh:
            fh.write(serialize_srt(tgt))
        paths.append((sp, tp))
    return paths
