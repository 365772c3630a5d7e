"""``streamitn`` command line.

Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from dataclasses import fields
from pathlib import Path
from typing import Sequence

from .errors import ConfigurationError, ItnError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("streamitn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ints(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("values must be positive integers")
    return vals


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _existing(text: str) -> Path:
    p = Path(text)
    if not p.exists():
        raise argparse.ArgumentTypeError(f"no such file or directory: {text}")
    return p


def _out(fmt: str, *args):
    print(fmt.format(*args) if args else fmt)


# ---------------------------------------------------------------------------
# config files


def _parse_value(raw: str):
    low = raw.lower()
    if low in ("none", "null", ""):
        return None
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def read_config(path: Path | None):
    """Flat ``key = value`` file; keys go to the model or the training config."""
    from .tagger import TaggerConfig, TrainConfig

    model_keys = {f.name for f in fields(TaggerConfig)} - {"vocab_size", "num_tags"}
    train_keys = {f.name for f in fields(TrainConfig)}
    model, train = {}, {}
    if path is not None:
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key = value")
            key, value = (x.strip() for x in line.split("=", 1))
            if key in model_keys:
                model[key] = _parse_value(value)
            elif key in train_keys:
                train[key] = _parse_value(value)
            else:
                raise ConfigurationError(f"{path}:{lineno}: unknown setting {key!r}")
    return TaggerConfig(**model), TrainConfig(**train)


# ---------------------------------------------------------------------------
# subcommands


def cmd_compile_rules(args) -> int:
    from . import rules

    pack = rules.load_pack(args.pack)
    if args.out:
        rules.save_pack(pack, args.out)
    for cat in pack.categories:
        _out("{:<14} itn {:>6} states {:>7} arcs", cat, pack.itn[cat].num_states, pack.itn[cat].num_arcs)
    _out("{} categories compiled", len(pack))
    return EXIT_OK


def cmd_synth(args) -> int:
    from . import synth

    cats = args.categories.split(",") if args.categories else None
    sents = synth.generate_written(args.n, seed=args.seed, ambiguous=args.ambiguous, categories=cats)
    Path(args.out).write_text("".join(s.text + "\n" for s in sents), encoding="utf-8")
    _out("{} sentences written to {}", len(sents), args.out)
    return EXIT_OK


def cmd_train_lm(args) -> int:
    from . import datagen, ngram, rules, synth

    lines = [l for l in Path(args.input).read_text(encoding="utf-8").splitlines() if l.strip()]
    if args.kind == "lexical":
        pack = rules.open_pack(args.pack) if args.pack else rules.load_starter_pack()
        extra = [] if args.no_curated else synth.lexical_lm_sentences()
        lm = datagen.train_lexical_lm(lines, pack, order=args.order, extra=extra)
    else:
        corpus = [l.split() for l in lines]
        if not args.no_curated:
            corpus += synth.display_lm_sentences()
        lm = ngram.train(corpus, order=args.order)
    lm.save(args.out)
    _out("{}-gram {} model over {} sentences, vocabulary {}", lm.order, args.kind, len(lines), lm.vocab_size)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    from . import datagen, ngram, rules

    pack = rules.open_pack(args.pack) if args.pack else rules.load_starter_pack()
    lm = ngram.NGramModel.load(args.lm) if args.lm else None
    stats = datagen.generate_corpus(args.input, pack, lm, args.seed, args.out, args.test_out, args.stats_out)
    _out(json.dumps(stats, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    from . import datagen, rules, tagger

    cfg, hyper = read_config(args.config)
    if args.seed is not None:
        hyper.seed = args.seed
    if args.epochs is not None:
        hyper.epochs = args.epochs
    if args.chunk is not None:
        cfg.chunk_size = args.chunk
    pack = rules.open_pack(args.pack) if args.pack else rules.load_starter_pack()
    inventory = datagen.tag_inventory(pack.categories)
    data = datagen.read_tagged_tsv(args.data)
    for s in data:
        datagen.check_well_formed(s, inventory)

    def report(row):
        _out("epoch {:>3}  loss {:.4f}  heldout P {:.4f} R {:.4f} F1 {:.4f}  acc {:.4f}",
             row["epoch"], row["loss"], row["precision"], row["recall"], row["f1"], row["accuracy"])
        sys.stdout.flush()

    model = tagger.train(data, cfg, hyper, inventory, log=report)
    tagger.save(model, args.out)
    best = max(r["f1"] for r in model.history)
    _out("best heldout F1 {:.4f}; model written to {}", best, args.out)
    return EXIT_OK


def _engine(args):
    from . import pipeline, rules, tagger

    pack = rules.open_pack(args.pack) if args.pack else rules.load_starter_pack()
    model = tagger.load(args.model)
    chunk = getattr(args, "chunk", None)
    if chunk is not None and chunk != model.chunk_size:
        if not getattr(args, "force", False):
            raise UsageError(f"--chunk {chunk} differs from the model's trained chunk size "
                             f"{model.chunk_size}; pass --force to override")
        model = model.with_chunk(chunk)
    return pipeline.ItnEngine(model, pack, cache_capacity=getattr(args, "cache", 1024))


def cmd_run(args) -> int:
    engine = _engine(args)
    inp, out = sys.stdin, sys.stdout
    if not args.stream:
        for line in inp:
            out.write(engine.convert(line.split()) + "\n")
        out.flush()
        return EXIT_OK
    # one token per input line; a blank line ends the utterance
    session = engine.open_session()
    for line in inp:
        tok = line.strip()
        released = session.push(tok) if tok else session.flush()
        for t in released:
            out.write(t + "\n")
        if not tok:
            out.write("\n")
        out.flush()
    for t in session.flush():
        out.write(t + "\n")
    out.flush()
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import evaluation as E
    from . import ngram, rules

    items = E.read_test_set(args.test)
    reports = []
    if args.model or args.oracle_tags:
        if args.oracle_tags:
            from .datagen import tag_inventory
            from .pipeline import ItnEngine, ScriptedTagger

            pack = rules.open_pack(args.pack) if args.pack else rules.load_starter_pack()
            engine = ItnEngine(ScriptedTagger(tag_inventory(pack.categories)), pack)
        else:
            engine = _engine(args)
        reports.append(E.evaluate_engine(engine, items, oracle=args.oracle_tags))
    if args.baseline:
        if not args.lm:
            raise UsageError("--baseline wfst-ngram needs --lm")
        pack = rules.open_pack(args.pack) if args.pack else rules.load_starter_pack()
        base = E.WfstBaseline(pack, ngram.NGramModel.load(args.lm), lam=args.lam, nbest=args.nbest)
        reports.append(E.evaluate_baseline(base, items))
    if not reports:
        raise UsageError("nothing to evaluate: give --model, --oracle-tags or --baseline")
    for r in reports:
        _out(r.table())
        _out("")
    doc = [json.loads(r.to_json()) for r in reports]
    text = json.dumps(doc if len(doc) > 1 else doc[0], indent=2, sort_keys=True)
    if args.json:
        Path(args.json).write_text(text + "\n", encoding="utf-8")
    else:
        _out(text)
    return EXIT_OK


def _bench_segments(items, max_len: int = 10):
    from . import evaluation as E

    return [it.lexical for it in items
            if len(it.lexical) <= max_len and len(E.extract_instances(it.lexical, it.display.split())) == 1]


def cmd_bench(args) -> int:
    from . import evaluation as E
    from . import ngram, plotting

    engine = _engine(args)
    base = E.WfstBaseline(engine.pack, ngram.NGramModel.load(args.lm), lam=args.lam, nbest=args.nbest)
    segments = _bench_segments(E.read_test_set(args.test))
    if not segments:
        raise ConfigurationError(f"{args.test} has no single-span sentences to build benchmark inputs from")
    res = E.bench_runtime(args.lengths, args.trials, {"engine": engine.convert, "baseline": base.convert},
                          segments, warmup=args.warmup, seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = ["length\tengine_seconds\tbaseline_seconds"]
    rows += [f"{L}\t{res['seconds']['engine'][L]:.6g}\t{res['seconds']['baseline'][L]:.6g}" for L in args.lengths]
    (out_dir / "bench.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    (out_dir / "bench.json").write_text(json.dumps(res, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    plotting.runtime_figure(res, out_dir / "runtime.png")
    _out("\n".join(rows))
    for name, slope in res["exponents"].items():
        _out("exponent {:<9} {:.3f}", name, slope)
    return EXIT_OK


def cmd_sweep_chunk(args) -> int:
    from . import datagen, evaluation as E
    from . import plotting, rules, tagger

    pack = rules.open_pack(args.pack) if args.pack else rules.load_starter_pack()
    items = E.read_test_set(args.test)
    cfg, hyper = read_config(args.config)
    if args.seed is not None:
        hyper.seed = args.seed
    if args.epochs is not None:
        hyper.epochs = args.epochs
    base = tagger.load(args.model) if args.model else None
    data = None if base else datagen.read_tagged_tsv(args.data)
    inventory = datagen.tag_inventory(pack.categories)
    rows = []
    for c in args.sizes:
        if base is not None:
            model = base.with_chunk(c)
        else:
            cfg.chunk_size = c
            model = tagger.train(data, cfg, hyper, inventory)
        row = E.sweep_row(c, model, pack, items)
        rows.append(row)
        _out("chunk {:>3}  latency {:.2f}  P {:.4f}  R {:.4f}  F1 {:.4f}",
             c, row["latency"], row["precision"], row["recall"], row["f1"])
        sys.stdout.flush()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cols = ["chunk", "latency", "streamed_latency", "precision", "recall", "f1", "ter"]
    lines = ["\t".join(cols)] + ["\t".join(f"{r[c]:.6g}" for c in cols) for r in rows]
    (out_dir / "sweep.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out_dir / "sweep.json").write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    plotting.chunk_sweep_figure(rows, out_dir / "sweep.png")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="streamitn", description="Streaming inverse text normalization toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("compile-rules", help="compile a grammar pack")
    s.add_argument("--pack", type=_existing, required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_compile_rules)

    s = sub.add_parser("synth", help="write a synthetic written-form corpus")
    s.add_argument("--n", type=_positive, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ambiguous", type=float, default=0.25)
    s.add_argument("--categories")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train-lm", help="train an n-gram model")
    s.add_argument("--in", dest="input", type=_existing, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--kind", choices=["lexical", "display"], default="display")
    s.add_argument("--order", type=_positive, default=4)
    s.add_argument("--pack", type=_existing)
    s.add_argument("--no-curated", action="store_true", help="skip the built-in seed sentences")
    s.set_defaults(func=cmd_train_lm)

    s = sub.add_parser("gen-data", help="generate tagged training data")
    s.add_argument("--pack", type=_existing)
    s.add_argument("--lm", type=_existing)
    s.add_argument("--in", dest="input", type=_existing, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--test-out")
    s.add_argument("--stats-out")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train the tagger")
    s.add_argument("--data", type=_existing, required=True)
    s.add_argument("--config", type=_existing)
    s.add_argument("--pack", type=_existing)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=_positive)
    s.add_argument("--chunk", type=_positive)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("run", help="convert stdin to stdout")
    s.add_argument("--model", type=_existing, required=True)
    s.add_argument("--pack", type=_existing)
    s.add_argument("--stream", action="store_true", help="one token per line; blank line ends an utterance")
    s.add_argument("--chunk", type=_positive)
    s.add_argument("--force", action="store_true")
    s.add_argument("--cache", type=int, default=1024)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("eval", help="score a test set")
    s.add_argument("--model", type=_existing)
    s.add_argument("--pack", type=_existing)
    s.add_argument("--test", type=_existing, required=True)
    s.add_argument("--oracle-tags", action="store_true")
    s.add_argument("--baseline", choices=["wfst-ngram"])
    s.add_argument("--lm", type=_existing)
    s.add_argument("--lambda", dest="lam", type=float, default=1.0)
    s.add_argument("--nbest", type=_positive, default=16)
    s.add_argument("--json")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="runtime scaling benchmark")
    s.add_argument("--model", type=_existing, required=True)
    s.add_argument("--pack", type=_existing)
    s.add_argument("--lm", type=_existing, required=True)
    s.add_argument("--test", type=_existing, required=True, help="source of single-span clauses")
    s.add_argument("--lengths", type=_ints, default=[10, 20, 40, 80])
    s.add_argument("--trials", type=_positive, default=30)
    s.add_argument("--warmup", type=int, default=5)
    s.add_argument("--lambda", dest="lam", type=float, default=1.0)
    s.add_argument("--nbest", type=_positive, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("sweep-chunk", help="chunk size against latency and accuracy")
    s.add_argument("--sizes", type=_ints, default=[1, 2, 4, 6, 11])
    s.add_argument("--data", type=_existing)
    s.add_argument("--model", type=_existing, help="re-infer one model instead of retraining")
    s.add_argument("--test", type=_existing, required=True)
    s.add_argument("--pack", type=_existing)
    s.add_argument("--config", type=_existing)
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=_positive)
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_sweep_chunk)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "sweep-chunk" and not (args.data or args.model):
        parser.error("sweep-chunk needs --data (retrain) or --model (re-infer)")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"streamitn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ItnError, OSError, ValueError) as exc:
        print(f"streamitn: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:  # noqa: BLE001 - last-resort reporting
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
