"""Command-line entry point: ``kcln <command> [flags]``.

Exit codes: 0 success, 1 user or configuration error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import ConfigError, load_config, merge
from .graph import UnknownNodeError, load_graph, split, subsample
from .masks import create_mask, dump_masks, match_rule
from .network import CLNConfig, NumericError, forward, load_checkpoint, save_checkpoint
from .rules import RuleSet, load_rules, validate
from .synth import SynthSpec, generate
from .trainer import GATED, COMBINED, TrainConfig, TrainingError, evaluate_probs, train

log = logging.getLogger("kcln")

SEED_HELP = """\
seeding: every random choice derives from --seed.
  weight initialisation      seed
  train/test split           seed + 1
  training subsample         seed + 2
sweeps use a fixed split (seed 0) and, per listed seed s,
  initialisation s and subsample s + 100.
"""
SPLIT_OFFSET = 1
SUBSAMPLE_OFFSET = 2

TRAIN_DEFAULTS = {"vocab": None, "advice": None, "alpha": 1.0, "layers": 10, "hidden": 40,
                  "epochs": 100, "seed": 1, "lr": 1e-3, "mode": GATED, "train_fraction": 0.6,
                  "sample_fraction": 1.0, "checkpoint": "kcln.npz", "log": "train_log.csv",
                  "patience": None, "directed": False}
EVAL_DEFAULTS = {"vocab": None, "ids": None, "directed": False}
SWEEP_DEFAULTS = {"vocab": None, "advice": None, "protocol": None, "out": "reports",
                  "corrupt_advice": False, "fractions": ex.SAMPLE_FRACTIONS,
                  "alphas": ex.ALPHAS, "seeds": ex.SEEDS, "epochs": 100, "layers": 10,
                  "hidden": 40, "lr": 1e-3, "alpha": 1.0, "mode": GATED, "jobs": 1}
GEN_DEFAULTS = {"out": "synth", "entities": 1000, "features": 50, "relations": 2, "labels": 3,
                "rules": 2, "noise": 0.3, "feature_noise": SynthSpec.feature_noise,
                "edge_density": 2.0, "seed": 0}
MATCH_DEFAULTS = {"vocab": None, "directed": False}


class UserError(Exception):
    pass


def _floats(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(t) for t in text.replace(",", " ").split())


def _data_flags(p, advice=True):
    p.add_argument("--nodes", help="nodes TSV: id, label, sparse features")
    p.add_argument("--edges", help="edges TSV: relation, source, target")
    p.add_argument("--vocab", help="feature vocabulary TSV")
    if advice:
        p.add_argument("--advice", help="preference rules file")
    p.add_argument("--directed", action="store_const", const=True,
                   help="keep edges one-way instead of symmetrising")
    p.add_argument("--config", help="flat key = value file; flags override it")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="kcln", epilog=SEED_HELP, formatter_class=fmt,
                                     description="Knowledge-gated column networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network", epilog=SEED_HELP, formatter_class=fmt)
    _data_flags(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--mode", choices=(GATED, COMBINED))
    p.add_argument("--train-fraction", type=float, help="labeled share used for training")
    p.add_argument("--sample-fraction", type=float, help="share of the training split used")
    p.add_argument("--patience", type=int, help="early stop after this many flat epochs")
    p.add_argument("--checkpoint", help="output checkpoint path")
    p.add_argument("--log", help="per-epoch CSV log path")

    p = sub.add_parser("eval", help="score a checkpoint")
    _data_flags(p, advice=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ids", help="file of entity ids; default is the checkpoint's test set")

    p = sub.add_parser("sweep", help="run an experimental protocol", epilog=SEED_HELP,
                       formatter_class=fmt)
    _data_flags(p)
    p.add_argument("--protocol", help="samples, epochs or alpha")
    p.add_argument("--corrupt-advice", action="store_const", const=True)
    p.add_argument("--fractions", type=_floats)
    p.add_argument("--alphas", type=_floats)
    p.add_argument("--seeds", type=_ints)
    p.add_argument("--epochs", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--alpha", type=float, help="alpha for the samples and epochs protocols")
    p.add_argument("--mode", choices=(GATED, COMBINED))
    p.add_argument("--jobs", type=int, help="parallel training cells")
    p.add_argument("--out", help="report directory")

    p = sub.add_parser("match", help="show rule bindings and masks")
    _data_flags(p)
    p.add_argument("--dump-masks", help="write sparse mask triples here")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--out")
    p.add_argument("--entities", type=int)
    p.add_argument("--features", type=int)
    p.add_argument("--relations", type=int)
    p.add_argument("--labels", type=int)
    p.add_argument("--rules", type=int)
    p.add_argument("--noise", type=float, help="label noise on rule-determined entities")
    p.add_argument("--feature-noise", type=float)
    p.add_argument("--edge-density", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")

    p = sub.add_parser("plot-data", help="re-emit a report CSV as gnuplot blocks")
    p.add_argument("report")
    p.add_argument("--out", help="output file (default stdout)")
    return parser


def _settings(args, defaults) -> dict:
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    file_values = load_config(args.config) if getattr(args, "config", None) else {}
    return merge(flags, file_values, defaults)


def _require(s, *keys):
    missing = [k for k in keys if not s.get(k)]
    if missing:
        raise UserError("missing required " + ", ".join("--" + k.replace("_", "-")
                                                        for k in missing))


def _load(s):
    _require(s, "nodes", "edges")
    g = load_graph(s["nodes"], s["edges"], s.get("vocab"), symmetric=not s.get("directed"))
    rules = RuleSet()
    if s.get("advice"):
        rules = load_rules(s["advice"])
        problems = validate(rules, g)
        if problems:
            raise UserError("advice does not match the data:\n  "
                            + "\n  ".join(str(d) for d in problems))
    return g, rules


def cmd_train(s) -> int:
    if not 0.0 <= s["alpha"] <= 1.0:
        raise UserError(f"--alpha must lie in [0, 1], got {s['alpha']}")
    g, rules = _load(s)
    seed = s["seed"]
    data_split = split(g, s["train_fraction"], seed + SPLIT_OFFSET)
    ids = subsample(data_split, s["sample_fraction"], seed + SUBSAMPLE_OFFSET)
    cln = CLNConfig.for_graph(g, s["layers"], s["hidden"])
    t_cfg = TrainConfig(ids, epochs=s["epochs"], alpha=s["alpha"], lr=s["lr"], seed=seed,
                        mode=s["mode"], test_ids=data_split.test_ids, patience=s["patience"])
    if len(rules) == 0:
        log.info("no advice given: training a vanilla column network")
    params, hist = train(g, rules, cln, t_cfg)
    meta = {"train_ids": [g.entity_ids[i] for i in ids],
            "test_ids": [g.entity_ids[i] for i in data_split.test_ids],
            "seed": seed, "alpha": s["alpha"], "label_names": list(g.label_names)}
    save_checkpoint(s["checkpoint"], cln, params, hist.final_gates, meta)
    hist.write_csv(s["log"])
    last = hist.records[-1]
    print(f"epochs {len(hist)}  loss {last.loss:.6f}  train_f1 {last.train_f1:.4f}  "
          f"test_f1 {last.test_f1:.4f}")
    return 0


def cmd_eval(s) -> int:
    ckpt = Path(s["checkpoint"])
    if not ckpt.is_file():
        raise UserError(f"checkpoint not found: {ckpt}")
    _require(s, "nodes", "edges")
    g = load_graph(s["nodes"], s["edges"], s.get("vocab"), symmetric=not s.get("directed"))
    cfg, params, gates, meta = load_checkpoint(ckpt)
    if cfg.feature_dim != g.feature_dim or cfg.num_labels != g.num_labels:
        raise UserError("checkpoint does not fit this graph (feature or label count differs)")
    if gates is not None and gates.gamma_w.shape[0] != g.num_entities:
        raise UserError("checkpoint gates cover a different number of entities")
    if s.get("ids"):
        names = [t for t in Path(s["ids"]).read_text(encoding="utf-8").split() if t]
    else:
        names = meta.get("test_ids", [])
    index = {e: k for k, e in enumerate(g.entity_ids)}
    unknown = [n for n in names if n not in index]
    if unknown:
        raise UserError(f"unknown entity ids: {unknown[:5]}")
    ids = np.array([index[n] for n in names], dtype=np.int64)
    if ids.size == 0:
        raise UserError("no entity ids to evaluate")
    missing = [r for r in cfg.relation_names if r not in g.relations]
    if missing:
        raise UserError(f"graph lacks relations used by the checkpoint: {missing}")
    f1, ap = evaluate_probs(forward(g, cfg, params, gates).probs, g, ids)
    print(f"micro_f1\t{f1:.6f}")
    if g.num_labels == 2:
        print(f"auc_pr\t{ap:.6f}")
    return 0


def cmd_sweep(s) -> int:
    protocol = s.get("protocol")
    if protocol not in ex.PROTOCOLS:
        raise UserError(f"--protocol must be one of {sorted(ex.PROTOCOLS)}, got {protocol!r}")
    _require(s, "nodes", "edges")
    spec = ex.ExperimentSpec(
        nodes=s["nodes"], edges=s["edges"], vocab=s.get("vocab"), advice=s.get("advice"),
        corrupt_advice=bool(s["corrupt_advice"]), fractions=tuple(s["fractions"]),
        alphas=tuple(s["alphas"]), seeds=tuple(s["seeds"]), epochs=s["epochs"],
        out_dir=s["out"], layers=s["layers"], hidden=s["hidden"], lr=s["lr"],
        alpha=s["alpha"], mode=s["mode"], jobs=s["jobs"])
    g, rules = _load(s)
    if protocol == "alpha" and len(rules) == 0:
        raise UserError("--protocol alpha needs --advice")
    report = ex.PROTOCOLS[protocol](spec, g, rules)
    for path in (Path(s["out"]) / f"{report.name}.csv", Path(s["out"]) / f"{report.name}_cells.csv"):
        print(path)
    return 0


def cmd_match(s) -> int:
    _require(s, "advice")
    g, rules = _load(s)
    for k, rule in enumerate(rules, 1):
        bindings = match_rule(g, rule)
        print(f"rule {k} (line {rule.source_line}): {len(bindings)} bindings")
        for b in bindings[:10]:
            print("  " + ", ".join(f"{v}={g.entity_ids[e]}" for v, e in sorted(b.items())))
        if len(bindings) > 10:
            print(f"  ... {len(bindings) - 10} more")
    masks = create_mask(g, rules)
    print("masks " + json.dumps(masks.summary(), sort_keys=True))
    if s.get("dump_masks"):
        dump_masks(masks, s["dump_masks"], g.entity_ids)
    return 0


def cmd_gen(s) -> int:
    spec = SynthSpec(num_entities=s["entities"], feature_dim=s["features"],
                     num_relations=s["relations"], num_labels=s["labels"],
                     planted_rules=s["rules"], label_noise=s["noise"],
                     feature_noise=s["feature_noise"], edge_density=s["edge_density"],
                     seed=s["seed"])
    for path in generate(spec, s["out"]).values():
        print(path)
    return 0


def cmd_plot_data(args) -> int:
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            ex.plot_data(args.report, fh)
    else:
        ex.plot_data(args.report, sys.stdout)
    return 0


COMMANDS = {"train": (cmd_train, TRAIN_DEFAULTS), "eval": (cmd_eval, EVAL_DEFAULTS),
            "sweep": (cmd_sweep, SWEEP_DEFAULTS), "match": (cmd_match, MATCH_DEFAULTS),
            "gen": (cmd_gen, GEN_DEFAULTS)}

LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def main(argv=None) -> int:
    level = os.environ.get("KCLN_LOG", "info").lower()
    if level not in LOG_LEVELS:
        print(f"kcln: KCLN_LOG must be one of {sorted(LOG_LEVELS)}", file=sys.stderr)
        return 1
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plot-data":
            return cmd_plot_data(args)
        func, defaults = COMMANDS[args.command]
        return func(_settings(args, defaults))
    except (TrainingError, NumericError, FloatingPointError) as exc:
        print(f"kcln: numeric failure: {exc}", file=sys.stderr)
        return 2
    except (UserError, ConfigError, ValueError, UnknownNodeError, OSError) as exc:
        print(f"kcln: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
