"""Command-line entry point: ``ctxkd <subcommand> ...``.

Exit status: 0 success, 1 usage error, 2 data error, 3 numerical error.
Results go to files or stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .annotator import MODES, CorruptionSpec, corrupt, extract_custom_entities
from .chunker import PLACEMENTS, chunk_by_time, chunk_to_json, context_window
from .errors import CtxKDError, DataError, NumericalError, SchemaError
from .losses import DistillParams, Example, LossWeights, finite_difference_check
from .metrics import full_report
from .ot import SharedProjection, SinkhornConfig, alignment_cost, to_shared_space
from .toy import ToyTaskSpec, TrainConfig, context_sweep, run
from .transcript import dumps_corpus, load_corpus, parse_tagged_text, serialize_tagged_text

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# I/O helpers


def _write(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def read_logits_csv(path) -> np.ndarray:
    """Logit matrix from CSV: header ``T,V`` then T rows of V decimals."""
    try:
        rows = list(csv.reader(io.StringIO(Path(path).read_text(encoding="utf-8"))))
    except UnicodeDecodeError as exc:
        raise SchemaError(f"{path}: not UTF-8 text") from exc
    rows = [r for r in rows if r]
    if not rows:
        raise SchemaError(f"{path}: empty file")
    try:
        T, V = (int(x) for x in rows[0])
    except ValueError as exc:
        raise SchemaError(f"{path}: line 1 must be 'T,V', got {','.join(rows[0])!r}") from exc
    if T < 1 or V < 1:
        raise SchemaError(f"{path}: T and V must be positive")
    if len(rows) - 1 != T:
        raise SchemaError(f"{path}: header says {T} rows, found {len(rows) - 1}")
    out = np.empty((T, V))
    for i, row in enumerate(rows[1:]):
        if len(row) != V:
            raise SchemaError(f"{path}: line {i + 2} has {len(row)} values, expected {V}")
        try:
            out[i] = [float(x) for x in row]
        except ValueError as exc:
            raise SchemaError(f"{path}: line {i + 2}: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise SchemaError(f"{path}: non-finite logits")
    return out


def format_matrix_csv(M) -> str:
    M = np.asarray(M)
    lines = [f"{M.shape[0]},{M.shape[1]}"]
    lines += [",".join(_fmt(x) for x in row) for row in M]
    return "\n".join(lines) + "\n"


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _convert(key, raw, default):
    try:
        if isinstance(default, bool):
            return _BOOL[raw.lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"config key {key!r}: cannot parse {raw!r}") from exc
    return raw


def parse_config(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"config line {n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise SchemaError(f"config line {n}: duplicate key {key!r}")
        out[key] = value
    return out


def build_toy_run(cfg_map: dict, seed=None):
    """``(ToyTaskSpec, TrainConfig, n, sweep_sizes)`` from a parsed config."""
    spec_d, train_d, weight_d = ToyTaskSpec(), TrainConfig(), LossWeights()
    spec_kw, train_kw, weight_kw = {}, {}, {}
    n, sweep = 300, None
    train_fields = {f.name for f in fields(TrainConfig)} - {"weights"}
    for key, raw in cfg_map.items():
        if key == "n":
            n = _convert(key, raw, 0)
        elif key == "sweep":
            try:
                sweep = [int(x) for x in raw.split(",") if x.strip()]
            except ValueError as exc:
                raise SchemaError(f"config key 'sweep': cannot parse {raw!r}") from exc
        elif key in {f.name for f in fields(ToyTaskSpec)} and key != "seed":
            spec_kw[key] = _convert(key, raw, getattr(spec_d, key))
        elif key in train_fields and key != "seed":
            train_kw[key] = _convert(key, raw, getattr(train_d, key))
        elif key in {f.name for f in fields(LossWeights)}:
            weight_kw[key] = _convert(key, raw, getattr(weight_d, key))
        elif key == "seed":
            seed = _convert(key, raw, 0) if seed is None else seed
        else:
            raise SchemaError(f"unknown config key {key!r}")
    seed = 0 if seed is None else seed
    try:
        spec = ToyTaskSpec(seed=seed, **spec_kw)
        cfg = TrainConfig(seed=seed, weights=LossWeights(**weight_kw), **train_kw)
    except ValueError as exc:
        raise SchemaError(f"invalid config: {exc}") from exc
    if n < 2:
        raise SchemaError("config key 'n' must be >= 2")
    return spec, cfg, n, sweep


# ---------------------------------------------------------------------------
# Subcommands


def _info(args, msg):
    if not args.quiet:
        print(msg, file=sys.stderr)


def cmd_tag(args):
    if args.to_text:
        docs = load_corpus(args.input)
        _write(args.output, "".join(serialize_tagged_text(d) + "\n" for d in docs))
        return EXIT_OK
    text = Path(args.input).read_text(encoding="utf-8")
    docs = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            doc = parse_tagged_text(line, doc_id=f"{args.prefix}{len(docs)}")
        except DataError as exc:
            raise DataError(f"line {n}: {exc}") from exc
        if args.custom:
            doc = extract_custom_entities(doc)
        docs.append(doc)
    _write(args.output, dumps_corpus(docs))
    _info(args, f"tagged {len(docs)} documents")
    return EXIT_OK


def cmd_chunk(args):
    docs = load_corpus(args.corpus)
    out = []
    for doc in docs:
        for ch in chunk_by_time(doc, args.window, keep_entities=args.keep_entities):
            win = context_window(doc, ch, args.context, args.placement) if args.context else None
            out.append(chunk_to_json(ch, win))
    _write(args.output, json.dumps(out, indent=1) + "\n")
    _info(args, f"{len(out)} chunks from {len(docs)} documents")
    return EXIT_OK


def cmd_corrupt(args):
    try:
        base = CorruptionSpec(args.rate, args.mode)
    except ValueError as exc:
        raise UsageError(f"corrupt: {exc}") from exc
    docs = load_corpus(args.corpus)
    out = []
    for k, doc in enumerate(docs):
        # one independent stream per document
        seed = int(np.random.SeedSequence([args.seed, k]).generate_state(1)[0])
        out.append(corrupt(doc, replace(base, seed=seed)))
    _write(args.output, dumps_corpus(out))
    return EXIT_OK


def cmd_align(args):
    W = read_logits_csv(args.student)
    L = read_logits_csv(args.teacher)
    if W.shape[1] == L.shape[1]:
        Ws, Ls = W, L
    else:
        proj = SharedProjection.random(W.shape[1], L.shape[1], args.dim, np.random.default_rng(args.seed))
        Ws, Ls = to_shared_space(W, L, proj)
    try:
        cfg = SinkhornConfig(epsilon=args.epsilon, max_iters=args.max_iters, tol=args.tol)
    except ValueError as exc:
        raise UsageError(f"align: {exc}") from exc
    cost, plan = alignment_cost(Ws, Ls, cfg, strict=args.strict)
    if args.plan:
        Path(args.plan).write_text(format_matrix_csv(plan.P), encoding="utf-8")
    if args.json:
        print(json.dumps({"cost": plan.cost, "converged": plan.converged, "n_iter": plan.n_iter,
                          "residual": plan.residual, "log_domain": plan.log_domain}))
    else:
        print(_fmt(cost))
    if not plan.converged:
        _info(args, f"warning: Sinkhorn residual {plan.residual:.3e} after {plan.n_iter} iterations")
    return EXIT_OK


def cmd_gradcheck(args):
    spec = ToyTaskSpec()
    rng = np.random.default_rng(args.seed)
    params = DistillParams.init(spec.d_feat, spec.d_w, spec.V_w, spec.V_l, spec.d, spec.d_l, rng)
    batch = [Example(rng.normal(size=(spec.T_w, spec.d_feat)), rng.integers(0, spec.V_w, spec.T_w),
                     rng.normal(size=(spec.T_t, spec.d_l)), rng.normal(size=(spec.T_t, spec.V_l)))
             for _ in range(args.batch)]
    try:
        w = LossWeights(args.alpha, args.beta, args.gamma, args.temperature)
    except ValueError as exc:
        raise UsageError(f"gradcheck: {exc}") from exc
    errs = finite_difference_check(params, batch, w, h=args.h)
    worst = max(errs.values())
    if args.json:
        print(json.dumps({"max_rel_error": errs, "tol": args.tol, "ok": worst < args.tol}))
    else:
        for name, e in errs.items():
            print(f"{name:<8}{e:.3e}")
    if worst >= args.tol:
        raise NumericalError(f"gradient check failed: max relative error {worst:.3e} >= {args.tol:g}")
    return EXIT_OK


def cmd_distill_toy(args):
    cfg_map = parse_config(Path(args.config).read_text(encoding="utf-8"))
    spec, cfg, n, sweep = build_toy_run(cfg_map, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run(spec, cfg, n)
    with open(out / "log.jsonl", "w", encoding="utf-8") as fh:
        for rec in result.log:
            fh.write(json.dumps(rec) + "\n")
    final = result.log[-1]
    if sweep is None:
        rows = [{"context": spec.context_tokens, "tag_f1": final["tag_f1"],
                 "heldout_ce": final["heldout_ce"], "teacher_agreement": final["teacher_agreement"]}]
    else:
        rows = context_sweep(spec, cfg, sweep, n)
    lines = ["context,tag_f1,heldout_ce,teacher_agreement"]
    lines += [f"{r['context']},{_fmt(r['tag_f1'])},{_fmt(r['heldout_ce'])},{_fmt(r['teacher_agreement'])}"
              for r in rows]
    (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if args.json:
        print(json.dumps(final))
    else:
        print(f"epoch {final['epoch']}: total {final['total']:.4f}  heldout_ce {final['heldout_ce']:.4f}"
              f"  tag_f1 {final['tag_f1']:.4f}  agreement {final['teacher_agreement']:.4f}")
    if result.teacher.underfit:
        _info(args, f"warning: teacher underfit (CE {result.teacher.final_ce:.3f})")
    return EXIT_OK


def cmd_evaluate(args):
    report = full_report(load_corpus(args.ref), load_corpus(args.hyp))
    if args.json_out:
        Path(args.json_out).write_text(report.dumps(), encoding="utf-8")
    sys.stdout.write(report.dumps() if args.json else report.render())
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ctxkd", description="Contextual distillation toolkit.")
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--quiet", action="store_true", help="suppress informational stderr output")
    p.add_argument("--json", action="store_true", help="machine-readable stdout")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    # global flags are also accepted after the subcommand
    base = _Parser(add_help=False)
    base.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    base.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    full = _Parser(add_help=False, parents=[base])
    full.add_argument("--json", action="store_true", default=argparse.SUPPRESS)

    s = sub.add_parser("tag", parents=[full], help="tagged text lines to a JSON corpus")
    s.add_argument("input")
    s.add_argument("-o", "--output")
    s.add_argument("--custom", action="store_true", help="add URL/EMAIL/PHONE/NUMERIC spans")
    s.add_argument("--to-text", action="store_true", help="read a JSON corpus, write tagged text")
    s.add_argument("--prefix", default="doc", help="doc_id prefix for parsed lines")
    s.set_defaults(func=cmd_tag)

    s = sub.add_parser("chunk", parents=[full], help="time-based chunks and context windows")
    s.add_argument("corpus")
    s.add_argument("-o", "--output")
    s.add_argument("--window", type=float, default=30.0)
    s.add_argument("--keep-entities", action="store_true")
    s.add_argument("--context", type=int, default=0)
    s.add_argument("--placement", choices=PLACEMENTS, default="center")
    s.set_defaults(func=cmd_chunk)

    s = sub.add_parser("corrupt", parents=[full], help="drop or shift entity annotations")
    s.add_argument("corpus")
    s.add_argument("-o", "--output")
    s.add_argument("--rate", type=float, required=True)
    s.add_argument("--mode", choices=MODES, default="drop_tags")
    s.set_defaults(func=cmd_corrupt)

    s = sub.add_parser("align", parents=[full], help="Sinkhorn cost between two logit CSVs")
    s.add_argument("--student", required=True)
    s.add_argument("--teacher", required=True)
    s.add_argument("--epsilon", type=float, default=0.1)
    s.add_argument("--max-iters", type=int, default=200)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--dim", type=int, default=12, help="shared dimension when vocabularies differ")
    s.add_argument("--plan", help="write the transport plan CSV here")
    s.add_argument("--strict", action="store_true", help="fail (exit 3) without convergence")
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("gradcheck", parents=[full], help="finite-difference gradient check")
    s.add_argument("--batch", type=int, default=2)
    s.add_argument("--h", type=float, default=1e-4)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--alpha", type=float, default=0.2)
    s.add_argument("--beta", type=float, default=0.3)
    s.add_argument("--gamma", type=float, default=0.1)
    s.add_argument("--temperature", type=float, default=2.0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("distill-toy", parents=[full], help="train the toy student")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_distill_toy)

    s = sub.add_parser("evaluate", parents=[base], help="score a hypothesis corpus")
    s.add_argument("--ref", required=True)
    s.add_argument("--hyp", required=True)
    s.add_argument("--json", dest="json_out", metavar="PATH", help="also write the JSON report")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        seed_given = args.seed is not None
        if not seed_given:
            args.seed = 0
        if args.command == "distill-toy" and not seed_given:
            args.seed = None
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"ctxkd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"ctxkd: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CtxKDError as exc:
        print(f"ctxkd: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        print(f"ctxkd: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
