"""Command-line entry point: ``pivotdecode {decode,synth,eval,trace-dump}``.

Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics go to
stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .adapters import RemoteEndpoint, RemoteModel, ScriptedModel, Vocabulary
from .core import DecodeConfig, load_config, parse_overrides, validate_config
from .corpus import dumps_sample, iter_jsonl, read_corpus
from .decoding import trace_records
from .errors import ConfigError, PivotDecodeError
from .experiment import Method, annotation_discriminator, build_report, decode_sample
from .pivots import pivot_token_set
from .synth import MockRewriter, MockScorer, Rejection, RemoteRewriter, RemoteScorer, build_sample, plan_substitutions

log = logging.getLogger("pivotdecode")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pivotdecode", description="Pivot-gated contrastive decoding toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("decode", help="decode every sample of a corpus with one method")
    d.add_argument("--corpus", required=True)
    d.add_argument("--model", required=True, help="scripted:<spec.json> or remote:<base url>")
    d.add_argument("--vocab", help="vocabulary file (required for remote models)")
    d.add_argument("--method", default="rpgd", help="greedy, rpgd or linear:<lambda>")
    d.add_argument("--config", help="flat key=value decode config file")
    d.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
    d.add_argument("--seed", type=int, help="overrides rng_seed")
    d.add_argument("--out", required=True, help="results JSONL ('-' for stdout)")
    d.add_argument("--trace", help="also write per-step traces as JSONL")
    d.add_argument("--top-k", type=int, default=5)
    d.add_argument("--jobs", type=int, default=1)
    d.add_argument("--timeout-ms", type=int, default=30_000)

    s = sub.add_parser("synth", help="build conflict samples from a base corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--client", choices=("mock", "remote"), default="mock")
    s.add_argument("--endpoint", help="base URL of the rewriter/scorer service (remote client)")
    s.add_argument("--out", required=True, help="retained samples JSONL")
    s.add_argument("--rejects", help="rejection records JSONL")
    s.add_argument("--mock-score-base", type=int, default=9)
    s.add_argument("--mock-score-spread", type=int, default=1)

    e = sub.add_parser("eval", help="score decode results against a gold corpus")
    e.add_argument("--results", required=True, nargs="+")
    e.add_argument("--gold", required=True)
    e.add_argument("--report", required=True, help="JSON report path ('-' for stdout)")
    e.add_argument("--table", help="write the text table here instead of stdout")
    e.add_argument("--csv", help="per-sample verdict CSV")
    e.add_argument("--latency", action="store_true", help="include wall-clock latency (not reproducible)")

    t = sub.add_parser("trace-dump", help="pretty-print decode traces")
    t.add_argument("--trace", required=True)
    t.add_argument("--step", type=int)
    t.add_argument("--sample")
    return p


def _open_out(path: str):
    if path == "-":
        return contextlib.nullcontext(sys.stdout)
    return open(path, "w", encoding="utf-8")


def _load_model(uri: str, vocab_path: Optional[str], timeout_ms: int):
    scheme, _, rest = uri.partition(":")
    if scheme == "scripted" and rest:
        return ScriptedModel.from_file(rest)
    if scheme == "remote" and rest:
        if not vocab_path:
            raise ConfigError("remote models need --vocab")
        return RemoteModel(RemoteEndpoint(rest, timeout_ms=timeout_ms), Vocabulary.from_file(vocab_path))
    raise ConfigError(f"bad model URI {uri!r} (expected scripted:<path> or remote:<url>)")


def _config(args) -> DecodeConfig:
    cfg = load_config(args.config) if args.config else DecodeConfig()
    changes = parse_overrides(args.set)
    if args.seed is not None:
        changes["rng_seed"] = args.seed
    return validate_config(cfg.replace(**changes)) if changes else cfg


def cmd_decode(args) -> int:
    cfg = _config(args)
    method = Method.parse(args.method)
    corpus_path = Path(args.corpus)
    samples = read_corpus(corpus_path)
    model = _load_model(args.model, args.vocab, args.timeout_ms)
    want_trace = bool(args.trace)

    def work(sample):
        return decode_sample(sample, model, method, cfg, base_dir=corpus_path.parent, keep_result=want_trace)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            verdicts = list(pool.map(work, samples))
    else:
        verdicts = [work(s) for s in samples]

    with _open_out(args.out) as fh:
        for v in verdicts:
            fh.write(json.dumps({k: x for k, x in v.items() if not k.startswith("_")}, sort_keys=True) + "\n")
    if args.out != "-":
        meta = {"config": cfg.to_dict(), "method": method.name, "model": args.model, "corpus": str(corpus_path)}
        Path(args.out + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    if want_trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            for sample, v in zip(samples, verdicts):
                res = v.get("_result")
                if res is None:
                    continue
                pivots = frozenset()
                if method.kind == "rpgd":
                    pivots = pivot_token_set(annotation_discriminator(sample).conflict_spans, model.vocab)
                for rec in trace_records(res, model.vocab.tokens, pivots, k=args.top_k):
                    rec = {"sample_id": sample.sample_id, "method": method.name, **rec}
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
    failed = sum(v.get("error") is not None for v in verdicts)
    log.info("decoded %d samples with %s (%d failed)", len(verdicts), method.name, failed)
    return 0


def cmd_synth(args) -> int:
    samples = read_corpus(args.corpus)
    if args.client == "mock":
        rewriter, scorer = MockRewriter(), MockScorer(args.mock_score_base, args.mock_score_spread)
    else:
        if not args.endpoint:
            raise ConfigError("--client remote needs --endpoint")
        rewriter, scorer = RemoteRewriter(args.endpoint), RemoteScorer(args.endpoint)
    kept = rejected = 0
    with open(args.out, "w", encoding="utf-8") as out:
        rej_fh = open(args.rejects, "w", encoding="utf-8") if args.rejects else None
        try:
            for sample in samples:
                outcome = build_sample(sample, plan_substitutions(sample, args.seed), rewriter, scorer, args.seed)
                if isinstance(outcome, Rejection):
                    rejected += 1
                    if rej_fh:
                        rej_fh.write(json.dumps(outcome.to_dict(), sort_keys=True) + "\n")
                else:
                    kept += 1
                    out.write(dumps_sample(outcome) + "\n")
        finally:
            if rej_fh:
                rej_fh.close()
    log.info("synth: %d retained, %d rejected", kept, rejected)
    return 0


def cmd_eval(args) -> int:
    gold = read_corpus(args.gold)
    verdicts = []
    cfg = None
    for path in args.results:
        verdicts.extend(iter_jsonl(path))
        meta = Path(path + ".meta.json")
        if cfg is None and meta.exists():
            cfg = DecodeConfig.from_dict(json.loads(meta.read_text(encoding="utf-8"))["config"])
    report = build_report(verdicts, gold, cfg)
    with _open_out(args.report) as fh:
        fh.write(report.to_json(include_timing=args.latency))
    table = report.to_text(include_timing=args.latency)
    if args.table:
        Path(args.table).write_text(table, encoding="utf-8")
    elif args.report != "-":
        sys.stdout.write(table)
    if args.csv:
        Path(args.csv).write_text(report.verdicts_csv(), encoding="utf-8")
    return 0


def _fmt_top(top) -> str:
    if top is None:
        return "-"
    return ", ".join(f"{tok}={val:.3f}" for _, tok, val in top)


def cmd_trace_dump(args) -> int:
    shown = 0
    for rec in iter_jsonl(args.trace):
        if args.sample is not None and rec.get("sample_id") != args.sample:
            continue
        if args.step is not None and rec["step"] != args.step:
            continue
        c = "-" if rec["c"] is None else f"{rec['c']:.6f}"
        alpha = "-" if rec["alpha_pivot_mean"] is None else f"{rec['alpha_pivot_mean']:.6f}"
        print(f"{rec.get('sample_id', '?')} step {rec['step']}: chose {rec['chosen_token']!r} "
              f"(id {rec['chosen_id']})  c={c}  alpha_pivot_mean={alpha}")
        print(f"  std:   {_fmt_top(rec['top_std'])}")
        print(f"  conf:  {_fmt_top(rec['top_conf'])}")
        print(f"  final: {_fmt_top(rec['top_final'])}")
        shown += 1
    if not shown:
        print("no matching trace records", file=sys.stderr)
    return 0


COMMANDS = {"decode": cmd_decode, "synth": cmd_synth, "eval": cmd_eval, "trace-dump": cmd_trace_dump}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (PivotDecodeError, OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"pivotdecode {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
