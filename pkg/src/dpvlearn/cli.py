"""Command-line entry point: simulate, discover, score, validate.

Exit codes: 0 success, 1 I/O or data error, 2 configuration or dimension
error, 3 discovery found no eligible subpopulation.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional

from .config import RunConfig
from .data import chronological_split, discretize, ingest_csv, write_csv
from .errors import ConfigInvalid, DimensionMismatch, DpvError
from .harness import generate_synthetic, model_digest, run_validation
from .search import build_pair_matrix, search_all
from .valuation import EligibleSet, build_model, global_comparison, score_dataset

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_NO_SUBPOPS = 3


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def sidecar(out: Path, suffix: str) -> Path:
    """``runs/data.csv`` + ``.truth.csv`` -> ``runs/data.truth.csv``."""
    return out.with_name(out.stem + suffix)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _load_config(args) -> RunConfig:
    if args.config is None:
        cfg = RunConfig()
    else:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise _Fail(EXIT_IO, f"cannot read config: {exc}") from None
        cfg = RunConfig.from_json(text)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _load_dataset(path: Optional[str], cfg: RunConfig):
    if path is None:
        raise _Fail(EXIT_IO, "--input is required")
    try:
        with open(path, "rb") as fh:
            ds = ingest_csv(fh.read(), cfg.schema)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot read input: {exc}") from None
    return discretize(ds, cfg.discretization)


def _require_out(args) -> Path:
    if args.out is None:
        raise _Fail(EXIT_IO, "--out is required")
    return Path(args.out)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = _require_out(args)
    ds, effects = generate_synthetic(cfg.synthetic)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        write_csv(ds, fh)
    with open(sidecar(out, ".truth.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "true_effect"])
        for ident, e in zip(ds.ids, effects.tolist()):
            w.writerow([ident, repr(e)])
    meta = {"command": "simulate", "seed": cfg.seed, "n_instances": ds.n, "config": cfg.to_dict()}
    _write_text(sidecar(out, ".meta.json"), _dump(meta))
    return EXIT_OK


def cmd_discover(args) -> int:
    cfg = _load_config(args)
    out = _require_out(args)
    data = _load_dataset(args.input, cfg)
    train, _ = chronological_split(data, cfg.train_fraction)
    Z = build_pair_matrix(train, cfg.search.pair_cap, cfg.seed)
    found = search_all(train, cfg.search, Z=Z)
    model = build_model(train, found, cfg.eligibility, cfg.quantization)
    model_json = model.to_json(config=cfg.to_dict(), seed=cfg.seed) + "\n"
    _write_text(out, model_json)
    log = {
        "command": "discover",
        "seed": cfg.seed,
        "model_sha256": model_digest(model_json),
        "n_train": train.n,
        "pairs_total": Z.total_pairs,
        "pairs_used": Z.n_pairs,
        "representations": [{"K": rep.K, "objective": int(obj)} for rep, obj in found],
        "n_eligible_subpops": len(model.subpops),
        "train_global": global_comparison(train, cfg.eligibility).to_dict(),
        "config": cfg.to_dict(),
    }
    _write_text(sidecar(out, ".log.json"), _dump(log))
    if not model.subpops:
        print("discover: no eligible subpopulation found", file=sys.stderr)
        return EXIT_NO_SUBPOPS
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = _load_config(args)
    out = _require_out(args)
    if args.model is None:
        raise _Fail(EXIT_IO, "--model is required")
    try:
        model_text = Path(args.model).read_text(encoding="utf-8")
        model = EligibleSet.from_json(model_text)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot read model: {exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, DpvError):
            raise
        raise _Fail(EXIT_IO, f"malformed model file: {exc!r}") from None
    data = _load_dataset(args.input, cfg)
    scores = score_dataset(data, model)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "dpv"])
        for ident, s in scores:
            w.writerow([ident, repr(float(s))])
    meta = {
        "command": "score",
        "seed": cfg.seed,
        "model_sha256": model_digest(model_text),
        "n_scored": len(scores),
        "config": cfg.to_dict(),
    }
    _write_text(sidecar(out, ".meta.json"), _dump(meta))
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load_config(args)
    out = _require_out(args)
    data = _load_dataset(args.input, cfg)
    train, test = chronological_split(data, cfg.train_fraction)
    report = run_validation(
        train, test, cfg.search, cfg.eligibility, cfg.quantization, metric_name=cfg.metric_name
    )
    report.config = cfg.to_dict()
    d = report.to_dict()
    d["seed"] = cfg.seed
    d["n_train"] = train.n
    d["n_test"] = test.n
    _write_text(out, _dump(d))
    _write_text(sidecar(out, ".txt"), report.to_text())
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "discover": cmd_discover,
    "score": cmd_score,
    "validate": cmd_validate,
}


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpvlearn", description="Subpopulation discovery and DPV scoring for A/B tests.")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "write a synthetic experiment CSV with a ground-truth sidecar",
        "discover": "search representations on the train split and write a model",
        "score": "write per-instance DPV for every row of --input",
        "validate": "learn on the train split, report DPV quartile groups on the test split",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", help="run configuration JSON")
        sp.add_argument("--out", help="output path")
        sp.add_argument("--seed", type=_u64, help="override the configured seed")
        if name != "simulate":
            sp.add_argument("--input", help="experiment CSV")
        if name == "score":
            sp.add_argument("--model", help="model JSON written by discover")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except _Fail as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigInvalid, DimensionMismatch) as exc:
        print(f"{args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DpvError, OSError) as exc:
        print(f"{args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
