"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v -s`` or as a script.
"""
import hashlib
import json
import os
import random
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

import oracles  # noqa: E402
from acceptance_log import verdict  # noqa: E402

from alpo import cli, metrics  # noqa: E402
from alpo.corpus import SubtitleLine, SubtitleTrack, align_tracks  # noqa: E402
from alpo.losses import (  # noqa: E402
    PromptBatch,
    SegmentPreference,
    alpo_dpo_loss,
    dynamic_beta,
    gae_advantages,
    importance,
    lambda_at,
    mix_prefix,
    vanilla_dpo_loss,
)
from alpo.prefs import PreferenceRecord, extract_preferences  # noqa: E402
from alpo.sampling import SampledLine, SampledPrompt, select_chosen, select_rejected  # noqa: E402
from alpo.toy import ToyPolicy, alpo_train_step, dpo_loss_and_grad, preference_rate, records_to_batches  # noqa: E402

DEMO_SCORES = [70, 85, 88, 82, 92]


def _toy_config(seed):
    """Random policy pair plus 1-2 prompts of up to 8 segments (V <= 6, m <= 2)."""
    rng = np.random.default_rng(seed)
    V = int(rng.integers(2, 7))
    m = int(rng.integers(1, 3))
    vocab = [f"t{i}" for i in range(V)]
    policy = ToyPolicy(vocab, m, rng.normal(0, 1, (V ** m + 1, V)))
    reference = ToyPolicy(vocab, m, rng.normal(0, 1, (V ** m + 1, V)))
    batches, raw = [], []
    for _ in range(int(rng.integers(1, 3))):
        n = int(rng.integers(1, 9))
        w = rng.uniform(0, 1, n)
        w[rng.uniform(size=n) < 0.2] = 0.0
        b = rng.uniform(0.05, 1, n)
        b[int(rng.integers(n))] = 1.0
        segs, rows = [], []
        for i in range(n):
            pre = [int(x) for x in rng.integers(0, V, int(rng.integers(0, 4)))]
            c = [int(x) for x in rng.integers(0, V, int(rng.integers(1, 5)))]
            r = [int(x) for x in rng.integers(0, V, int(rng.integers(1, 5)))]
            text = lambda ids: " ".join(vocab[x] for x in ids)  # noqa: E731
            segs.append(SegmentPreference(text(pre), text(c), text(r), 5, 10, 1, 0))
            rows.append((pre, c, r, float(w[i]), float(b[i])))
        batches.append(PromptBatch(segs, w, b))
        raw.append(rows)
    return policy, reference, batches, raw, m


def test_gradient_correctness():
    t0 = time.perf_counter()
    worst_elem = worst_loss = 0.0
    configs = 100
    for seed in range(configs):
        policy, reference, batches, raw, m = _toy_config(seed)
        loss, grad = dpo_loss_and_grad(policy, reference, batches)
        worst_loss = max(worst_loss, abs(loss.total - float(oracles.naive_alpo_loss(policy.logits, reference.logits, m, raw))))
        fd = oracles.central_difference(
            lambda x: oracles.naive_alpo_loss(x, reference.logits, m, raw),
            policy.logits.astype(np.longdouble),
            h=1e-5,
        ).astype(np.float64)
        mask = np.abs(grad) > 1e-8
        if mask.any():
            rel = np.abs(fd - grad)[mask] / np.maximum(np.abs(grad), np.abs(fd))[mask]
            worst_elem = max(worst_elem, float(rel.max()))
    elapsed = time.perf_counter() - t0
    ok = worst_elem < 1e-5 and worst_loss < 1e-12 and elapsed < 30
    verdict("gradient correctness", ok,
            f"{configs} configs, max rel err {worst_elem:.2e}, loss diff {worst_loss:.1e}, {elapsed:.1f}s")
    assert ok


def test_gate_nullity():
    rng = np.random.default_rng(11)
    vocab = ["a", "b", "c", "d"]
    policy = ToyPolicy.random(vocab, 1, seed=1, scale=1.0)
    reference = ToyPolicy.random(vocab, 1, seed=2, scale=1.0)
    worst_val = worst_grad = 0.0
    gated_seen = 0
    for _ in range(200):
        n = int(rng.integers(2, 9))
        segs = []
        for _ in range(n):
            count = int(rng.integers(1, 10))
            spread = int(rng.integers(0, 20))
            segs.append(SegmentPreference(
                " ".join(rng.choice(vocab, 2)), " ".join(rng.choice(vocab, 3)), " ".join(rng.choice(vocab, 2)),
                count, spread, spread, 0))
        gates = [int(s.candidate_count > 3 and s.score_range > 5) for s in segs]
        if not any(gates):
            segs[0].candidate_count, segs[0].score_range, segs[0].reward_chosen = 9, 20, 20
            gates[0] = 1
        batch = PromptBatch.build(segs)
        loss = alpo_dpo_loss(batch, policy.logprob_fn(), reference.logprob_fn())
        gated = [i for i, g in enumerate(gates) if not g]
        gated_seen += len(gated)
        for i in gated:
            worst_val = max(worst_val, abs(loss.segments[i].value))
        only = PromptBatch([segs[i] for i in gated], batch.weights[gated], batch.betas[gated])
        if gated:
            _, g = dpo_loss_and_grad(policy, reference, [only])
            worst_grad = max(worst_grad, float(np.linalg.norm(g)))
    ok = worst_val == 0.0 and worst_grad < 1e-12 and gated_seen > 0
    verdict("gate nullity", ok, f"{gated_seen} gated segments, max |term| {worst_val}, max grad norm {worst_grad}")
    assert ok


def test_beta_normalization():
    rng = random.Random(5)
    batches = 0
    worst = 0.0
    in_range = True
    for t in range(2000):
        n = rng.randint(1, 12)
        lines = []
        for _ in range(n):
            k = rng.randint(1, 15)
            scores = [rng.randint(0, 100) for _ in range(k)]
            lines.append(SampledLine("s", [f"c{j}" for j in range(k)], scores, select_chosen(scores, rng), False))
        records = extract_preferences(SampledPrompt(f"p{t}", "prompt", lines), seed=t)
        if not records:
            continue
        betas = [r.beta for r in records]
        batches += 1
        worst = max(worst, abs(max(betas) - 1.0))
        in_range &= all(0.0 <= b <= 1.0 for b in betas)
        # the batch builder path
        segs = [SegmentPreference("", "c", "r", rng.randint(1, 15), rng.randint(0, 40), rng.randint(0, 90), 0)
                for _ in range(n)]
        for s in segs:
            s.reward_chosen = max(s.reward_chosen, 1)
        pb = PromptBatch.build(segs)
        active = pb.betas[pb.weights > 0]
        if active.size:
            worst = max(worst, abs(active.max() - 1.0))
            in_range &= bool(np.all((pb.betas >= 0) & (pb.betas <= 1)))
    ok = batches > 100 and worst <= 1e-12 and in_range
    verdict("beta normalization", ok, f"{batches} batches, max |max beta - 1| = {worst:.1e}")
    assert ok


def test_reduction_identity():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        pc, pr, rc, rr = rng.normal(-5, 3, 4)
        beta = float(rng.uniform(0.01, 5))
        seg = SegmentPreference("x", "c", "r", 5, 10, 10, 0)
        batch = PromptBatch([seg], np.array([1.0]), np.array([beta]))
        policy = {"c": pc, "r": pr}
        ref = {"c": rc, "r": rr}
        ours = alpo_dpo_loss(batch, lambda t, p: policy[t], lambda t, p: ref[t]).total
        worst = max(worst, abs(ours - vanilla_dpo_loss(pc, pr, rc, rr, beta)))
    ok = worst < 1e-12
    verdict("reduction identity", ok, f"1000 inputs, max diff {worst:.1e}")
    assert ok


def _synthetic_preferences(seed=7, prompts=10, per_prompt=10):
    """Pairs ordered by a hidden tabular model, so a perfect ranking exists."""
    rng = np.random.default_rng(seed)
    vocab = [f"w{i}" for i in range(6)]
    hidden = ToyPolicy(vocab, 1, rng.normal(0, 2, (7, 6)))
    records = []
    for p in range(prompts):
        counts = rng.integers(4, 16, per_prompt)
        w = importance(counts)
        b = dynamic_beta(rng.integers(6, 60, per_prompt))
        for i in range(per_prompt):
            prefix = vocab[rng.integers(6)]
            while True:
                a = " ".join(vocab[x] for x in rng.integers(0, 6, 2))
                c = " ".join(vocab[x] for x in rng.integers(0, 6, 2))
                if a != c:
                    break
            if hidden.sequence_logprob(prefix, a) < hidden.sequence_logprob(prefix, c):
                a, c = c, a
            records.append(PreferenceRecord(f"p{p}", i, "", prefix, a, c, float(w[i]), float(b[i]),
                                            int(counts[i]), 40, 50, 10))
    return vocab, records


def test_preference_acquisition():
    t0 = time.perf_counter()
    vocab, records = _synthetic_preferences()
    reference = ToyPolicy.random(vocab, 1, seed=3)
    policy = reference.copy()
    batches = records_to_batches(records)
    loss0 = dpo_loss_and_grad(policy, reference, batches)[0].total
    rate0 = preference_rate(policy, records)
    steps = 500
    for _ in range(steps):
        alpo_train_step(policy, reference, records, learning_rate=20.0)
    loss1 = dpo_loss_and_grad(policy, reference, batches)[0].total
    rate1 = preference_rate(policy, records)

    gated = [PreferenceRecord(r.prompt_id, r.line, r.context, r.prefix, r.chosen, r.rejected, 0.0, 0.0,
                              2, 3, r.r_chosen, r.r_rejected) for r in records]
    frozen = reference.copy()
    before = frozen.logits.tobytes()
    for _ in range(5):
        alpo_train_step(frozen, reference, gated, learning_rate=20.0)
    unchanged = frozen.logits.tobytes() == before
    elapsed = time.perf_counter() - t0
    ok = len(records) == 100 and rate1 >= 0.95 and loss1 < loss0 and unchanged and elapsed < 60
    verdict("preference acquisition", ok,
            f"rate {rate0:.2f}->{rate1:.2f}, loss {loss0:.4f}->{loss1:.4f}, gated-only unchanged={unchanged}, "
            f"{elapsed:.1f}s")
    assert ok


def test_mixing_schedule():
    draws = 10_000
    worst = 0.0
    for lam in (0.2, 0.4, 0.6):
        rng = random.Random(int(lam * 10))
        hits = 0
        for _ in range(draws):
            # pool excludes the chosen text so every chosen slot came from the lambda branch
            hits += mix_prefix(1, ["CHOSEN"], [["x", "y", "z"]], lam, rng)[0] == "CHOSEN"
        worst = max(worst, abs(hits / draws - lam))
    endpoints = lambda_at(0) == 0.2 and lambda_at(1) == 0.6
    ok = worst <= 0.02 and endpoints
    verdict("mixing schedule", ok, f"max |freq - lambda| {worst:.4f}, endpoints exact={endpoints}")
    assert ok


def _random_tracks(rng):
    n = rng.randint(1, 200)
    t = 0.0
    src = []
    for _ in range(n):
        t += rng.uniform(0.2, 3.0)
        src.append(round(t, 3))
    tgt = sorted(max(0.0, round(s + rng.uniform(-1.5, 1.5), 3)) for s in src if rng.random() > 0.1)
    tgt += sorted(round(rng.uniform(0, t + 1), 3) for _ in range(rng.randint(0, 10)))
    tgt.sort()
    if not tgt:
        tgt = [0.0]
    return src, tgt


def _track(starts, lang):
    return SubtitleTrack(tuple(SubtitleLine(s, s + 0.5, f"{lang}{i}") for i, s in enumerate(starts)), lang)


def test_alignment_oracle():
    rng = random.Random(2024)
    mismatches = 0
    for _ in range(200):
        src, tgt = _random_tracks(rng)
        s_track, t_track = _track(src, "s"), _track(tgt, "t")
        result = align_tracks(s_track, t_track, 0.7)
        ours = [(int(p.src.text[1:]), int(p.tgt.text[1:])) for p in result.pairs]
        mismatches += ours != oracles.brute_force_align(src, tgt, 0.7)
    near = len(align_tracks(_track([10.0], "s"), _track([10.70], "t")).pairs)
    far = len(align_tracks(_track([10.0], "s"), _track([10.71], "t")).pairs)
    ok = mismatches == 0 and near == 1 and far == 0
    verdict("alignment oracle", ok, f"200 instances, {mismatches} mismatches, 0.70 s matched={near == 1}, "
                                    f"0.71 s matched={far == 1}")
    assert ok


def test_selection_rules():
    rejected = select_rejected(DEMO_SCORES)
    rng = random.Random(0)
    picked = {DEMO_SCORES[select_chosen(DEMO_SCORES, rng)] for _ in range(10_000)}
    ok = DEMO_SCORES[rejected] == 85 and picked == {85, 88, 92}
    verdict("selection rules", ok, f"rejected score {DEMO_SCORES[rejected]}, chosen scores {sorted(picked)}")
    assert ok


def test_gae_oracle():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 51))
        e = rng.uniform(0, 100, n)
        v = rng.normal(0, 10, n + 1)
        gamma, lam = float(rng.uniform(0.5, 1)), float(rng.uniform(0.5, 1))
        deltas, adv = gae_advantages(e, v, gamma, lam)
        od, oa = oracles.gae_double_loop(list(e), list(v), gamma, lam)
        worst = max(worst, float(np.max(np.abs(adv - oa))), float(np.max(np.abs(deltas - od))))
    exact = True
    for _ in range(50):
        e = [int(x) for x in rng.integers(0, 101, int(rng.integers(1, 51)))]
        _, adv = gae_advantages(e, [0.0] * (len(e) + 1), 1.0, 1.0)
        suffix = [-sum(e[i:]) for i in range(len(e))]
        exact &= list(adv) == suffix
    _, example = gae_advantages([1, 2, 3], [0, 0, 0, 0], 1.0, 1.0)
    exact &= list(example) == [-6.0, -5.0, -3.0]
    ok = worst < 1e-12 and exact
    verdict("GAE oracle", ok, f"100 instances, max diff {worst:.1e}, zero-value suffix sums exact={exact}")
    assert ok


def test_metric_fixtures():
    checks = {
        "bleu identical": metrics.bleu("the quick brown fox", ["the quick brown fox"]).value == 100.0,
        "bleu hand-counted": abs(metrics.bleu("the cat sat", ["the cat sat down"]).value - oracles.BLEU_CAT) < 1e-9,
        "chrf identical": metrics.chrf_pp("the quick brown fox", ["the quick brown fox"]).value == 100.0,
        "chrf hand-counted": abs(metrics.chrf_pp("ab", ["abc"]).value - oracles.CHRF_AB) < 1e-9,
        "spearman 0.8": abs(metrics.spearman_rho([1, 2, 3, 4], [1, 3, 2, 4]).value - 0.8) < 1e-12,
    }
    ba = metrics.bland_altman([6, 7, 8, 12], [1, 2, 3, 7])
    checks["bland-altman shift"] = (ba.mean_difference, ba.loa_low, ba.loa_high) == (5.0, 5.0, 5.0)
    failed = [k for k, v in checks.items() if not v]
    ok = not failed
    verdict("metric fixtures", ok, f"{len(checks)} fixtures" + (f", failed: {failed}" if failed else ""))
    assert ok


def _e2e(workdir, seed=1):
    d = str(workdir)
    steps = [
        ["synth", f"{d}/srt", "--seed", str(seed)],
        ["align", f"{d}/srt/program0.zh.srt", f"{d}/srt/program0.en.srt",
         f"{d}/srt/program1.zh.srt", f"{d}/srt/program1.en.srt", "-o", f"{d}/corpus.jsonl"],
        ["sample", f"{d}/corpus.jsonl", "--stub", "--seed", str(seed), "-o", f"{d}/sampled.jsonl"],
        ["make-prefs", f"{d}/sampled.jsonl", "--seed", str(seed), "-o", f"{d}/prefs.jsonl"],
        ["train-toy", f"{d}/prefs.jsonl", "--seed", str(seed), "--checkpoint", f"{d}/toy.json"],
    ]
    codes = [cli.main(argv) for argv in steps]
    hashes = {}
    for name in ("corpus.jsonl", "sampled.jsonl", "prefs.jsonl", "toy.json", "toy.loss.csv", "toy.report.json"):
        with open(os.path.join(d, name), "rb") as fh:
            hashes[name] = hashlib.sha256(fh.read()).hexdigest()
    return codes, hashes


def test_end_to_end_offline(tmp_path):
    t0 = time.perf_counter()
    codes_a, hashes_a = _e2e(tmp_path / "a")
    codes_b, hashes_b = _e2e(tmp_path / "b")
    elapsed = time.perf_counter() - t0

    with open(tmp_path / "a" / "sampled.jsonl.manifest.json") as fh:
        cfg = json.load(fh)["config"]
    defaults = cfg["k"] == 15 and cfg["n"] == 35
    ok = codes_a == [0] * 5 and codes_b == [0] * 5 and hashes_a == hashes_b and defaults and elapsed < 120
    verdict("end-to-end offline run", ok,
            f"exit codes {codes_a}, hashes reproducible={hashes_a == hashes_b}, k=15/n=35={defaults}, "
            f"{elapsed:.1f}s for two runs")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
