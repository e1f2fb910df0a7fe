"""Command-line entry point: ``mental-perceiver <command> ...``.

Exit status: 0 success, 1 usage/configuration error, 2 data error,
3 numerical error. Diagnostics go to stderr as a single line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from . import config as config_mod
from .checkpoint import atomic_write
from .corpus import (
    SynthSpec,
    featurize_records,
    generate_synthetic,
    max_threads,
    read_corpus,
    split_records,
    write_corpus,
)
from .errors import ConfigError, DataError, NumericalError
from .evaluation import evaluate_records
from .metrics import predictions_csv, report_lines, report_table
from .model import MentalPerceiver
from .trainer import Checkpoint, load_priors, priors_from_records, save_priors, train

log = logging.getLogger("mental_perceiver")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _overrides(args):
    return {"seed": getattr(args, "seed", None),
            "loss.convention": getattr(args, "loss_convention", None)}


def cmd_gen_synth(args):
    kw = dict(separation=args.separation, text_width=args.text_width,
              audio_width=args.audio_width, min_duration_s=args.min_duration,
              max_duration_s=args.max_duration, seed=args.seed)
    if args.participants is not None:
        spec = SynthSpec.from_rate(args.participants, args.positive_rate, **kw)
    else:
        spec = SynthSpec(n_normal=args.per_class, n_disorder=args.per_class, **kw)
    records = generate_synthetic(spec)
    write_corpus(records, args.out)
    log.info("wrote %d participants to %s", len(records), args.out)


def cmd_compute_priors(args):
    cfg = config_mod.load(args.config, _overrides(args))
    priors = priors_from_records(read_corpus(args.corpus), cfg.train)
    save_priors(args.out, priors, {"corpus": str(Path(args.corpus).resolve())})
    log.info("wrote priors (width %d) to %s", priors.width, args.out)


def cmd_train(args):
    cfg = config_mod.load(args.config, _overrides(args))
    records = read_corpus(args.corpus)
    priors = load_priors(args.priors) if args.priors else priors_from_records(records, cfg.train)
    model = MentalPerceiver(cfg.model, priors)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "config.toml", config_mod.dump(cfg).encode("utf-8"))
    lines = []

    def on_epoch(entry):
        lines.append(json.dumps(entry.as_dict()))
        atomic_write(out / "epochs.jsonl", ("\n".join(lines) + "\n").encode("utf-8"))
        print(f"epoch {entry.epoch:3d}  loss {entry.train_loss:.5f}  "
              f"val_uar {entry.val_uar:.4f}  lr_mult {entry.lr_multiplier:.4f}", flush=True)

    result = train(records, model, cfg.train, on_epoch=on_epoch)
    result.best.extra["corpus"] = str(Path(args.corpus).resolve())
    result.best.save(out / "best.ckpt")
    print(f"best epoch {result.best.epoch} val_uar {result.best.best_metric:.4f} "
          f"-> {out / 'best.ckpt'}")


def _load_eval_inputs(args):
    ckpt = Checkpoint.load(args.checkpoint)
    corpus = args.corpus or ckpt.extra.get("corpus")
    if corpus is None:
        raise ConfigError("no --corpus given and the checkpoint does not record one")
    return ckpt, read_corpus(corpus)


def _segment_kw(ckpt):
    return ckpt.train_config.segment_kw() if ckpt.train_config else {}


def cmd_evaluate(args):
    ckpt, records = _load_eval_inputs(args)
    recs = split_records(records, args.split)
    res = evaluate_records(ckpt.model(), recs, args.level or "both", **_segment_kw(ckpt))
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / f"eval-{args.split}"
    atomic_write(out / "report.jsonl",
                 report_lines(res.reports, {"split": args.split}).encode("utf-8"))
    table = report_table(res.reports)
    atomic_write(out / "report.txt", table.encode("utf-8"))
    atomic_write(out / "predictions.csv", predictions_csv(res.predictions).encode("utf-8"))
    print(table, end="")


def cmd_predict(args):
    ckpt, records = _load_eval_inputs(args)
    recs = split_records(records, args.split) if args.split else records
    res = evaluate_records(ckpt.model(), recs, "participant", **_segment_kw(ckpt))
    text = predictions_csv(res.predictions)
    if args.out:
        atomic_write(args.out, text.encode("utf-8"))
    else:
        sys.stdout.write(text)


def cmd_featurize(args):
    records = read_corpus(args.corpus)
    base = Path(args.corpus).resolve().parent
    write_corpus(featurize_records(records, base, max_threads()), args.out)


def build_parser():
    p = _Parser(prog="mental-perceiver", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-synth", help="write a synthetic corpus")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--per-class", type=int, default=100)
    g.add_argument("--participants", type=int, help="total count (use with --positive-rate)")
    g.add_argument("--positive-rate", type=float, default=0.5)
    g.add_argument("--separation", type=float, default=4.0)
    g.add_argument("--text-width", type=int, default=768)
    g.add_argument("--audio-width", type=int, default=80)
    g.add_argument("--min-duration", type=float, default=30.0)
    g.add_argument("--max-duration", type=float, default=90.0)
    g.add_argument("-o", "--out", required=True)
    g.set_defaults(func=cmd_gen_synth)

    c = sub.add_parser("compute-priors", help="category priors from the train split")
    c.add_argument("-c", "--config")
    c.add_argument("--corpus", required=True)
    c.add_argument("--seed", type=int)
    c.add_argument("-o", "--out", required=True)
    c.set_defaults(func=cmd_compute_priors)

    t = sub.add_parser("train", help="train and keep the best validation checkpoint")
    t.add_argument("-c", "--config")
    t.add_argument("--corpus", required=True)
    t.add_argument("--priors", help="prior file from compute-priors (default: recompute)")
    t.add_argument("--seed", type=int)
    t.add_argument("--loss-convention", choices=["prose_consistent", "literal_paper"])
    t.add_argument("-o", "--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="metric reports for one split")
    e.add_argument("checkpoint")
    e.add_argument("--corpus")
    e.add_argument("--split", default="test")
    e.add_argument("--level", choices=["segment", "participant"])
    e.add_argument("-o", "--out", help="report directory")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("predict", help="per-participant predictions as CSV")
    r.add_argument("checkpoint")
    r.add_argument("--corpus")
    r.add_argument("--split")
    r.add_argument("-o", "--out")
    r.set_defaults(func=cmd_predict)

    f = sub.add_parser("featurize", help="turn WAV references into mel frames")
    f.add_argument("--corpus", required=True)
    f.add_argument("-o", "--out", required=True)
    f.set_defaults(func=cmd_featurize)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: file not found", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
