"""Command-line driver: ``alpo <subcommand> ...``.

Exit status is 0 on success, 1 on error and 2 when the run finished but the
result is degenerate (nothing aligned, every segment gated, no records).
Every run writes a JSON manifest next to its main output.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import random
import sys
import time
from concurrent.futures import ThreadPoolExecutor

from alpo import __version__, codec, corpus, kernels, metrics, prefs, sampling, synthetic, toy
from alpo.backends import (
    CompletionClient,
    DictionaryGenerator,
    EchoGenerator,
    HttpEvaluator,
    HttpGenerator,
    LengthEvaluator,
)
from alpo.config import PipelineConfig, load_config
from alpo.errors import AlpoError, ConfigError, SamplingError
from alpo.losses import gate

logger = logging.getLogger("alpo")

EXIT_OK, EXIT_ERROR, EXIT_WARN = 0, 1, 2
MANIFEST_SCHEMA = "alpo/manifest/v1"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def prompt_seed(seed: int, prompt_id: str) -> int:
    """Per-prompt seed, independent of scheduling order."""
    digest = hashlib.sha256(f"{seed}:{prompt_id}".encode()).digest()
    return int.from_bytes(digest[:4], "big") & 0x7FFFFFFF


class Run:
    """Collects what a manifest needs while a subcommand executes."""

    def __init__(self, command: str, cfg: PipelineConfig, argv):
        self.command = command
        self.cfg = cfg
        self.argv = list(argv)
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.counts: dict[str, int | float] = {}
        self.warnings: list[str] = []
        self.failed: dict[str, str] = {}
        self.seeds = {"seed": cfg.seed}
        self.started = time.perf_counter()

    def warn(self, message: str) -> None:
        logger.warning(message)
        self.warnings.append(message)

    def manifest(self, exit_code: int, error: str | None = None) -> dict:
        return {
            "schema": MANIFEST_SCHEMA,
            "version": __version__,
            "command": self.command,
            "argv": self.argv,
            "config": self.cfg.to_dict(),
            "seeds": self.seeds,
            "kernel_backend": kernels.BACKEND,
            "inputs": [{"path": p, "sha256": sha256_file(p)} for p in self.inputs if os.path.isfile(p)],
            "outputs": [{"path": p, "sha256": sha256_file(p)} for p in self.outputs if os.path.isfile(p)],
            "counts": self.counts,
            "warnings": self.warnings,
            "failed": self.failed,
            "error": error,
            "exit_code": exit_code,
            "wall_time_s": round(time.perf_counter() - self.started, 4),
        }


# --- helpers -------------------------------------------------------------------

def _open_out(path):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="\n")


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as exc:
                raise AlpoError(f"{path}:{line_no}: invalid JSON ({exc.msg})") from None


def _check_schema(path, line_no, rec, kind=None):
    if not isinstance(rec, dict) or rec.get("schema") != corpus.SCHEMA:
        raise AlpoError(f"{path}:{line_no}: missing or unsupported schema (expected {corpus.SCHEMA!r})")
    if kind is not None and rec.get("kind") != kind:
        raise AlpoError(f"{path}:{line_no}: expected kind {kind!r}, found {rec.get('kind')!r}")


def _program_id(path: str) -> str:
    return os.path.basename(path).split(".")[0]


def _load_lexicon(args, cfg):
    if getattr(args, "lexicon", None):
        with open(args.lexicon, encoding="utf-8") as fh:
            return json.load(fh)
    return synthetic.make_lexicon(cfg.stub_lexicon_seed)


def _backends(args, cfg):
    if args.stub:
        return (
            DictionaryGenerator(_load_lexicon(args, cfg), seed=cfg.seed, drop_rate=cfg.stub_drop_rate),
            LengthEvaluator(cfg.stub_score_scale),
        )
    gen_client = CompletionClient(cfg.generator_url, cfg.generator_model,
                                  timeout=cfg.request_timeout, max_in_flight=cfg.max_in_flight)
    eval_client = CompletionClient(cfg.evaluator_url or cfg.generator_url,
                                   cfg.evaluator_model or cfg.generator_model,
                                   timeout=cfg.request_timeout, max_in_flight=cfg.max_in_flight)
    return HttpGenerator(gen_client), HttpEvaluator(eval_client, cfg.direction, cfg.eval_dimension)


def _load_blocks(path, cfg, run):
    """Prompt blocks from a build-prompts file or, for a corpus file, chunked on the fly."""
    with open(path, encoding="utf-8") as fh:
        first = next((line for line in fh if line.strip()), "")
    if not first:
        return []
    if "lines" in json.loads(first):
        blocks = []
        for line_no, rec in _read_jsonl(path):
            _check_schema(path, line_no, rec)
            try:
                blocks.append(corpus.PromptBlock.from_dict(rec))
            except (KeyError, TypeError, ValueError) as exc:
                raise AlpoError(f"{path}:{line_no}: bad prompt record: {exc}") from None
        return blocks
    with open(path, encoding="utf-8") as fh:
        programs = corpus.read_corpus_jsonl(fh)
    return [b for c in programs for b in corpus.chunk_into_prompts(c, cfg.n)]


# --- subcommands -----------------------------------------------------------------

def cmd_synth(args, cfg, run):
    paths = synthetic.write_programs(args.directory, args.programs, args.lines, cfg.stub_lexicon_seed)
    for sp, tp in paths:
        run.outputs += [sp, tp]
    run.counts["programs"] = len(paths)
    print("\n".join(f"{sp} {tp}" for sp, tp in paths))
    return EXIT_OK


def cmd_align(args, cfg, run):
    if len(args.files) % 2:
        raise ConfigError("align expects source/target file pairs")
    corpora = []
    matched = unmatched_src = unmatched_tgt = 0
    for sp, tp in zip(args.files[::2], args.files[1::2]):
        run.inputs += [sp, tp]
        tracks = []
        for path, lang in ((sp, cfg.src_lang), (tp, cfg.tgt_lang)):
            fmt = args.format or corpus.guess_format(path)
            with open(path, "rb") as fh:
                try:
                    tracks.append(corpus.parse_subtitle_file(fh.read(), fmt, lang))
                except AlpoError as exc:
                    raise AlpoError(f"{path}: {exc}") from None
        result = corpus.align_tracks(tracks[0], tracks[1], cfg.align_threshold)
        corpora.append(corpus.ParallelCorpus(list(result.pairs), _program_id(sp), cfg.direction))
        matched += len(result.pairs)
        unmatched_src += result.unmatched_src
        unmatched_tgt += result.unmatched_tgt
    with _open_out(args.output) as fh:
        corpus.write_corpus_jsonl(corpora, fh)
    run.outputs.append(args.output)
    run.counts.update(programs=len(corpora), pairs=matched, unmatched_src=unmatched_src,
                      unmatched_tgt=unmatched_tgt)
    if matched == 0:
        run.warn("no subtitle lines could be aligned")
        return EXIT_WARN
    return EXIT_OK


def cmd_split(args, cfg, run):
    run.inputs.append(args.corpus)
    with open(args.corpus, encoding="utf-8") as fh:
        programs = corpus.read_corpus_jsonl(fh)
    sft, pref = corpus.split_corpus(programs, cfg.sft_fraction, cfg.seed)
    for path, part in ((args.sft_out, sft), (args.pref_out, pref)):
        with _open_out(path) as fh:
            corpus.write_corpus_jsonl(part, fh)
        run.outputs.append(path)
    run.counts.update(sft_programs=len(sft), pref_programs=len(pref),
                      sft_pairs=sum(len(c) for c in sft), pref_pairs=sum(len(c) for c in pref))
    return EXIT_OK


def cmd_build_prompts(args, cfg, run):
    run.inputs.append(args.corpus)
    with open(args.corpus, encoding="utf-8") as fh:
        programs = corpus.read_corpus_jsonl(fh)
    header = args.header if args.header is not None else ""
    blocks = [b for c in programs for b in corpus.chunk_into_prompts(c, cfg.n, header)]
    if args.limit is not None:
        blocks = blocks[:args.limit]
    with _open_out(args.output) as fh:
        for b in blocks:
            fh.write(json.dumps(b.to_dict(), ensure_ascii=False) + "\n")
    run.outputs.append(args.output)
    run.counts.update(prompts=len(blocks), lines=sum(b.n for b in blocks))
    if not blocks:
        run.warn("no prompts were built")
        return EXIT_WARN
    return EXIT_OK


def _sample_one(mode, block, gen, evaluator, cfg, seed):
    common = dict(rng_seed=seed, params=cfg.sampling_params(), retry=cfg.retry_policy(),
                  direction=cfg.direction)
    if mode == "alpo":
        return sampling.sample_prompt_alpo(block, gen, evaluator, k=cfg.k,
                                           use_reference=cfg.use_reference, **common).to_dict()
    if mode == "fine-dpo":
        return sampling.sample_fine_dpo(block, gen, evaluator, k=cfg.k,
                                        use_reference=cfg.use_reference, **common).to_dict()
    if mode == "coarse-dpo":
        return sampling.sample_coarse_dpo(block, gen, evaluator, k=cfg.k, **common).to_dict()
    steps = sampling.sample_trajectory(block, gen, evaluator, **common)
    return {
        "schema": corpus.SCHEMA,
        "kind": "ppo",
        "prompt_id": block.block_id,
        "seed": seed,
        "steps": [{"t": s.translation, "score": s.score} for s in steps],
    }


def cmd_sample(args, cfg, run):
    run.inputs.append(args.input)
    blocks = _load_blocks(args.input, cfg, run)
    if args.limit is not None:
        blocks = blocks[:args.limit]
    mode = args.mode or "alpo"
    gen, evaluator = _backends(args, cfg)
    seeds = [prompt_seed(cfg.seed, b.block_id) for b in blocks]
    run.seeds["prompts"] = dict(zip((b.block_id for b in blocks), seeds))

    def attempt(block, seed):
        # a prompt that still fails after retries is dropped; the others carry on
        try:
            return _sample_one(mode, block, gen, evaluator, cfg, seed)
        except SamplingError as exc:
            return exc

    with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
        outcomes = list(pool.map(attempt, blocks, seeds))
    results = [r for r in outcomes if not isinstance(r, Exception)]
    failed = [(b.block_id, r) for b, r in zip(blocks, outcomes) if isinstance(r, Exception)]
    with _open_out(args.output) as fh:
        for rec in results:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    run.outputs.append(args.output)
    run.counts.update(prompts=len(results), failed_prompts=len(failed), mode=mode)
    if failed:
        run.failed = {pid: str(exc) for pid, exc in failed}
        raise AlpoError(f"{len(failed)} of {len(blocks)} prompts failed; first: {failed[0][0]}: {failed[0][1]}")
    if mode == "alpo":
        segments = sum(len(r["lines"]) for r in results)
        gated = sum(
            1 - gate(len(ln["candidates"]), max(ln["scores"]) - min(ln["scores"]))
            for r in results for ln in r["lines"]
        )
        run.counts.update(segments=segments, gated=gated, active=segments - gated)
        if segments and gated == segments:
            run.warn("every segment is gated off; no preference signal")
            return EXIT_WARN
    if not results:
        run.warn("no prompts were sampled")
        return EXIT_WARN
    return EXIT_OK


def cmd_make_prefs(args, cfg, run):
    run.inputs.append(args.input)
    stats = prefs.ExtractionStats()
    records = []
    n_prompts = 0
    for line_no, rec in _read_jsonl(args.input):
        _check_schema(args.input, line_no, rec, kind="alpo")
        try:
            sampled = sampling.SampledPrompt.from_dict(rec)
        except (KeyError, TypeError, ValueError) as exc:
            raise AlpoError(f"{args.input}:{line_no}: bad sampled record: {exc}") from None
        records += prefs.extract_preferences(sampled, cfg.seed, stats)
        n_prompts += 1
    with _open_out(args.output) as fh:
        prefs.write_records(records, fh)
    run.outputs.append(args.output)
    run.counts.update(prompts=n_prompts, segments=stats.segments, gated=stats.gated,
                      active=stats.active, records=len(records), collisions=stats.collisions,
                      skipped_prompts=stats.skipped_prompts)
    if not records:
        run.warn("no preference records survived gating")
        return EXIT_WARN
    return EXIT_OK


def cmd_train_toy(args, cfg, run):
    run.inputs.append(args.prefs)
    with open(args.prefs, encoding="utf-8") as fh:
        records = prefs.read_records(fh)
    if not records:
        raise AlpoError("no preference records to train on")
    vocab = toy.build_vocab(records, cfg.toy_order)
    reference = toy.ToyPolicy.random(vocab, cfg.toy_order, cfg.seed, cfg.toy_init_scale)
    policy = reference.copy()
    mix_seed = prompt_seed(cfg.seed, "mix")
    run.seeds.update(init=cfg.seed, mix=mix_seed)
    rng = random.Random(mix_seed)
    schedule = cfg.mix_schedule()
    batches = toy.records_to_batches(records)
    loss_start = toy.dpo_loss_and_grad(policy, reference, batches)[0].total
    rate_start = toy.preference_rate(policy, records)
    curve = []
    steps = cfg.toy_steps
    for step in range(steps):
        progress = step / (steps - 1) if steps > 1 else 1.0
        _, loss = toy.alpo_train_step(policy, reference, records, cfg.toy_lr, progress, schedule, rng)
        curve.append((step, progress, loss.total))
    loss_end = toy.dpo_loss_and_grad(policy, reference, batches)[0].total
    rate_end = toy.preference_rate(policy, records)
    policy.save(args.checkpoint)
    run.outputs.append(args.checkpoint)
    curve_path = args.curve or os.path.splitext(args.checkpoint)[0] + ".loss.csv"
    with _open_out(curve_path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "progress", "loss"])
        for step, progress, value in curve:
            w.writerow([step, f"{progress:.6f}", repr(value)])
    run.outputs.append(curve_path)
    report = {
        "records": len(records),
        "prompts": len(batches),
        "vocab_size": len(vocab),
        "order": cfg.toy_order,
        "steps": steps,
        "learning_rate": cfg.toy_lr,
        "loss_start": loss_start,
        "loss_end": loss_end,
        "preference_rate_start": rate_start,
        "preference_rate_end": rate_end,
    }
    report_path = args.report or os.path.splitext(args.checkpoint)[0] + ".report.json"
    with _open_out(report_path) as fh:
        metrics.dump_json(report, fh)
    run.outputs.append(report_path)
    run.counts.update(records=len(records), steps=steps, preference_rate=rate_end)
    print(f"loss {loss_start:.6f} -> {loss_end:.6f}; preference rate {rate_start:.3f} -> {rate_end:.3f}")
    return EXIT_OK


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def _score_table(paths):
    rows = []
    for path in paths:
        for line_no, rec in _read_jsonl(path):
            missing = {"system", "evaluator", "dimension", "item_id", "score"} - set(rec)
            if missing:
                raise AlpoError(f"{path}:{line_no}: score row lacks {sorted(missing)}")
            rows.append(rec)
    return rows


def cmd_eval(args, cfg, run):
    mode = args.mode or "pairwise"
    run.inputs += list(args.inputs)
    out = args.output
    result = {"mode": mode}
    status = EXIT_OK
    if mode == "pairwise":
        systems = {_program_id(p): _read_lines(p) for p in args.inputs}
        matrix = metrics.pairwise_similarity(systems)
        result["matrix"] = matrix.to_dict()
        with _open_out(out + ".csv") as fh:
            fh.write(matrix.to_csv())
        run.outputs.append(out + ".csv")
        text = metrics.format_table(
            [""] + matrix.labels,
            [[lab] + [f"{v:.2f}" for v in row] for lab, row in zip(matrix.labels, matrix.values)],
        )
    elif mode == "backtrans":
        if len(args.inputs) != 1:
            raise ConfigError("backtrans takes one corpus file")
        with open(args.inputs[0], encoding="utf-8") as fh:
            programs = corpus.read_corpus_jsonl(fh)
        translator = EchoGenerator() if args.stub else _backends(args, cfg)[0]
        per_program = {}
        for c in programs:
            res = metrics.back_translation_consistency(c, translator, cfg.direction, retry=cfg.retry_policy())
            per_program[c.program_id] = res.to_dict()
            if res.unreliable:
                run.warn(f"{c.program_id}: more than 10% of lines skipped")
                status = EXIT_WARN
        result["programs"] = per_program
        text = metrics.format_table(
            ["program", "bleu", "chrf++", "skipped", "total"],
            [[p, f"{r['bleu']:.2f}", f"{r['chrf_pp']:.2f}", str(r["skipped"]), str(r["total"])]
             for p, r in per_program.items()],
        )
    elif mode == "judge-consistency":
        if len(args.inputs) != 2:
            raise ConfigError("judge-consistency takes exactly two score files")
        tables = [
            {(str(r["system"]), str(r["dimension"]), str(r["item_id"])): float(r["score"]) for r in _score_table([p])}
            for p in args.inputs
        ]
        keys = sorted(set(tables[0]) & set(tables[1]))
        a = [tables[0][k] for k in keys]
        b = [tables[1][k] for k in keys]
        rho = metrics.spearman_rho(a, b)
        agreement = metrics.bland_altman(a, b)
        result.update(items=len(keys), spearman_rho=rho.value, bland_altman=agreement.to_dict())
        text = metrics.format_table(
            ["items", "rho", "md", "loa_low", "loa_high"],
            [[str(len(keys)), f"{rho.value:.4f}", f"{agreement.mean_difference:.4f}",
              f"{agreement.loa_low:.4f}", f"{agreement.loa_high:.4f}"]],
        )
    elif mode == "dims":
        report = metrics.aggregate_dimension_report(_score_table(args.inputs))
        result.update(report.to_dict())
        if report.gaps:
            run.warn(f"{len(report.gaps)} missing (system, dimension, evaluator) cells")
            status = EXIT_WARN
        text = report.to_text()
    else:
        raise ConfigError(f"unknown eval mode {mode!r}")
    with _open_out(out + ".json") as fh:
        metrics.dump_json(result, fh)
    with _open_out(out + ".txt") as fh:
        fh.write(text)
    run.outputs += [out + ".json", out + ".txt"]
    print(text, end="")
    return status


def cmd_report(args, cfg, run):
    rows = []
    for path in args.manifests:
        run.inputs.append(path)
        with open(path, encoding="utf-8") as fh:
            m = json.load(fh)
        if m.get("schema") != MANIFEST_SCHEMA:
            raise AlpoError(f"{path}: not a run manifest")
        counts = ", ".join(f"{k}={v}" for k, v in sorted(m.get("counts", {}).items()))
        rows.append([m["command"], str(m["exit_code"]), f"{m['wall_time_s']:.2f}", counts])
    text = metrics.format_table(["command", "exit", "seconds", "counts"], rows)
    if args.output:
        with _open_out(args.output) as fh:
            fh.write(text)
        run.outputs.append(args.output)
    print(text, end="")
    return EXIT_OK


# --- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with an [alpo] section")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--stub", action="store_true", help="use the offline stub backends")
    common.add_argument("--k", type=int, help="samples per line")
    common.add_argument("--n", type=int, help="lines per prompt")
    common.add_argument("--limit", type=int, help="process at most this many prompts")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any configuration key")
    common.add_argument("--manifest", help="manifest path (default: <output>.manifest.json)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="alpo", description="Segment-level preference data and training toolkit.")
    parser.add_argument("--version", action="version", version=f"alpo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic bilingual SRT corpus")
    p.add_argument("directory")
    p.add_argument("--programs", type=int, default=2)
    p.add_argument("--lines", type=int, default=40)
    p.set_defaults(func=cmd_synth, out_attr="directory")

    p = sub.add_parser("align", parents=[common], help="align source/target subtitle files")
    p.add_argument("files", nargs="+", help="SRC TGT [SRC TGT ...]")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--format", choices=["srt", "ass", "ass-dialogue"])
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("split", parents=[common], help="split programs into SFT and preference parts")
    p.add_argument("corpus")
    p.add_argument("--sft-out", required=True)
    p.add_argument("--pref-out", required=True)
    p.set_defaults(func=cmd_split, out_attr="pref_out")

    p = sub.add_parser("build-prompts", parents=[common], help="chunk a corpus into numbered prompts")
    p.add_argument("corpus")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--header", help="instruction text placed in every prompt")
    p.set_defaults(func=cmd_build_prompts)

    p = sub.add_parser("sample", parents=[common], help="sample and score candidates")
    p.add_argument("input", help="prompt or corpus JSONL")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--mode", choices=["alpo", "fine-dpo", "coarse-dpo", "ppo"], default="alpo")
    p.add_argument("--lexicon", help="JSON lexicon for the stub generator")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("make-prefs", parents=[common], help="extract weighted preference records")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_make_prefs)

    p = sub.add_parser("train-toy", parents=[common], help="train the tabular toy policy")
    p.add_argument("prefs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--curve", help="loss-curve CSV")
    p.add_argument("--report", help="final JSON report")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--order", type=int)
    p.set_defaults(func=cmd_train_toy, out_attr="checkpoint")

    p = sub.add_parser("eval", parents=[common], help="similarity, round-trip and judge statistics")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True, help="output path prefix")
    p.add_argument("--mode", choices=["pairwise", "backtrans", "judge-consistency", "dims"], default="pairwise")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="summarise run manifests")
    p.add_argument("manifests", nargs="+")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_report, out_attr="output")
    return parser


def _config_from_args(args) -> PipelineConfig:
    overrides = dict(seed=args.seed, k=args.k, n=args.n)
    for attr, key in (("steps", "toy_steps"), ("lr", "toy_lr"), ("order", "toy_order")):
        overrides[key] = getattr(args, attr, None)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    return load_config(args.config, **overrides)


def _manifest_path(args):
    if args.manifest:
        return args.manifest
    target = getattr(args, getattr(args, "out_attr", "output"), None)
    if not target:
        return None
    if os.path.isdir(target):
        return os.path.join(target, "manifest.json")
    return target + ".manifest.json"


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from_args(args)
    except AlpoError as exc:
        print(f"alpo {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    run = Run(args.command, cfg, argv)
    error = None
    try:
        code = args.func(args, cfg, run)
    except (AlpoError, OSError, ValueError) as exc:
        error = str(exc)
        print(f"alpo {args.command}: {exc}", file=sys.stderr)
        code = EXIT_ERROR
    path = _manifest_path(args)
    if path:
        with _open_out(path) as fh:
            metrics.dump_json(run.manifest(code, error), fh)
    return code


if __name__ == "__main__":
    sys.exit(main())
