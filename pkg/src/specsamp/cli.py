"""Command-line entry point: ``specsamp {train,sample,bench,verify,sweep}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .core import RandomSource
from .decoding import DecodingMethod, autoregressive_sample
from .errors import SpecSampError
from .models import BYTE_BOS, NGramModel, TabularModel, train_ngram
from .perf import AcceptanceStats, CostModel, k_sweep, sweep_csv
from .speculative import SpsConfig, read_traces, speculative_sample, write_traces


def _load_model(path: str):
    if path.endswith(".json"):
        return TabularModel.load(path)
    return NGramModel.load(path)


def _write_text(text: str, destination: str) -> None:
    if destination == "-":
        sys.stdout.write(text)
    else:
        Path(destination).write_text(text, encoding="utf-8")


def cmd_train(args) -> int:
    corpus = harness.load_corpus(args.corpus)
    model = train_ngram(corpus, args.order, args.alpha, harness.BYTE_VOCAB, BYTE_BOS)
    model.save(args.out)
    print(f"trained order-{model.order} model on {corpus.size} bytes "
          f"({model.contexts.shape[0]} contexts) -> {args.out}", file=sys.stderr)
    return 0


def cmd_sample(args) -> int:
    target = _load_model(args.model)
    method = DecodingMethod.parse(args.method)
    rng = RandomSource(args.seed)
    if isinstance(target, TabularModel):
        prompt = [int(t) for t in args.prompt.split(",") if t.strip()] if args.prompt else []
    else:
        prompt = list(harness.byte_tokenize(args.prompt).tokens)
    T = len(prompt) + args.length
    traces = None
    if args.draft:
        draft = _load_model(args.draft)
        seq, traces = speculative_sample(target, draft, prompt, SpsConfig(args.k, T, method), rng)
    else:
        seq = autoregressive_sample(target, prompt, T, method, rng)

    if args.format == "json":
        doc = {"prompt": list(seq.prompt), "completion": list(seq.completion)}
        if traces is not None:
            doc["loops"] = len(traces)
            doc["tokens_per_loop"] = sum(t.emitted for t in traces) / len(traces)
        text = json.dumps(doc) + "\n"
    elif isinstance(target, TabularModel):
        text = ",".join(map(str, seq.tokens)) + "\n"
    else:
        text = harness.detokenize(seq.tokens) + "\n"
    _write_text(text, args.out)
    if traces is not None and args.traces:
        with open(args.traces, "w", encoding="utf-8") as fh:
            write_traces(traces, fh)
    return 0


def cmd_bench(args) -> int:
    doc = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
    config = harness.with_overrides(
        harness.BenchConfig.from_dict(doc),
        seed=args.seed,
        k=args.k,
        method=args.method,
        corpus=args.corpus,
        num_sequences=args.num_sequences,
    )
    report = harness.run_benchmark(config)
    harness.emit_report(report, args.format, args.out)
    if args.traces:
        with open(args.traces, "w", encoding="utf-8") as fh:
            write_traces(report.traces, fh)
    return 0


def cmd_verify(args) -> int:
    from .verify import run_suite

    result = run_suite(args.instances, args.seed, args.samples, args.identity_pairs)
    if args.format == "json":
        _write_text(json.dumps(result, indent=2) + "\n", args.out)
    else:
        lines = [
            f"lossless: {result['lossless']['cases']} cases, max TV {result['lossless']['max_tv']:.3e}",
            f"identity: {result['identity']['pairs']} pairs, max deviation {result['identity']['max_deviation']:.3e}",
            f"chi-square: statistic {result['chi_square']['statistic']:.3f} "
            f"(dof {result['chi_square']['dof']}, critical {result['chi_square']['quantile']:.3f})",
            f"overall: {'PASS' if result['pass'] else 'FAIL'} in {result['elapsed_s']:.1f}s",
        ]
        _write_text("\n".join(lines) + "\n", args.out)
    return 0 if result["pass"] else 1


def cmd_sweep(args) -> int:
    doc = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
    cost = CostModel.from_dict(doc) if doc else CostModel.reference_default()
    if args.traces:
        with open(args.traces, encoding="utf-8") as fh:
            stats = AcceptanceStats.from_traces(read_traces(fh, args.k))
    else:
        stats = AcceptanceStats(alpha=args.alpha)
    rows = k_sweep(cost, stats, range(args.k_min, args.k_max + 1), args.sequences, seed=args.seed)
    if args.format == "json":
        text = json.dumps([vars(r) for r in rows], indent=2) + "\n"
    else:
        text = sweep_csv(rows)
    _write_text(text, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specsamp", description="Speculative sampling toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a byte-level n-gram model")
    p.add_argument("--corpus", help="text file (default: bundled corpus)")
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--out", required=True, help="output .npz path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample a continuation from a model")
    p.add_argument("--model", required=True, help=".npz n-gram model or .json tabular model")
    p.add_argument("--draft", help="draft model; enables speculative sampling")
    p.add_argument("--prompt", default="")
    p.add_argument("--length", type=int, default=64, help="tokens to generate")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--method", default="plain")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--traces", help="write loop traces (JSON lines) here")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("bench", help="benchmark auto-regressive against speculative sampling")
    p.add_argument("--config", help="JSON benchmark config")
    p.add_argument("--corpus")
    p.add_argument("--num-sequences", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--method")
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--traces", help="write loop traces (JSON lines) here")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run the exact and statistical correctness suites")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--identity-pairs", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="modeled latency over a range of lookaheads")
    p.add_argument("--config", help="JSON cost model (target_ms, draft_ms, scoring_ms, scoring_slope, overhead_ms)")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--alpha", type=float, default=0.7, help="per-position acceptance rate")
    src.add_argument("--traces", help="loop traces (JSON lines) to draw loop sizes from")
    p.add_argument("--k", type=int, help="lookahead the traces were recorded at")
    p.add_argument("--k-min", type=int, default=1)
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--sequences", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SpecSampError, OSError, json.JSONDecodeError) as exc:
        print(f"specsamp {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
