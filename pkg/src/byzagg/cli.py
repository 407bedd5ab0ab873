"""Command line entry point: run, sweep, report, selftest."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import subprocess
import sys
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .errors import ByzAggError


def _config(path):
    from .harness.experiment import ExperimentConfig

    return ExperimentConfig.from_yaml(path).with_env()


def cmd_run(args) -> int:
    from .harness.experiment import run_experiment

    cfg = _config(args.config)
    if args.path:
        cfg = replace(cfg, path=args.path)
    result = run_experiment(cfg)
    csv_path, json_path = result.write(args.out, args.stem)
    summary = result.summary()
    print(f"{summary['label']} attack={summary['attack']}: "
          f"max acc {100 * summary['mean_max_acc']:.1f} +- {100 * summary['std_max_acc']:.1f}")
    print(f"wrote {csv_path} and {json_path}")
    return 1 if summary["failed"] else 0


def cmd_sweep(args) -> int:
    from .harness.experiment import ExperimentConfig, run_experiment

    base = _config(args.config).to_dict()
    status = 0
    for raw in args.values:
        value = yaml.safe_load(raw)
        data = dict(base)
        if "." in args.param:
            outer, inner = args.param.split(".", 1)
            data[outer] = {**data[outer], inner: value}
        else:
            data[args.param] = value
        cfg = ExperimentConfig.from_dict(data)
        result = run_experiment(cfg)
        result.write(args.out, f"{args.param}={raw}")
        s = result.summary()
        print(f"{args.param}={raw}: {s['label']} max acc {100 * s['mean_max_acc']:.1f} +- {100 * s['std_max_acc']:.1f}")
        status |= bool(s["failed"])
    return int(status)


def summarize_csv(path) -> dict:
    """Mean and std over seeds of each seed's best test accuracy, in percent."""
    best: dict[int, float] = defaultdict(float)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            seed = int(row["seed"])
            best[seed] = max(best[seed], float(row["test_acc"]))
    accs = np.array([best[s] for s in sorted(best)]) * 100
    return {
        "file": str(path),
        "seeds": len(accs),
        "mean": float(accs.mean()) if accs.size else float("nan"),
        "std": float(accs.std()) if accs.size else float("nan"),
    }


def cmd_report(args) -> int:
    rows = [summarize_csv(p) for p in args.csv]
    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    width = max(len(r["file"]) for r in rows)
    for r in rows:
        print(f"{r['file']:<{width}}  {r['mean']:5.1f} +- {r['std']:4.1f}  ({r['seeds']} seeds)")
    return 0


def selftest_config(seed: int):
    from .harness.experiment import ExperimentConfig

    return ExperimentConfig(
        n=7,
        b=1,
        z=1,
        rule="krum",
        nnm=True,
        levels=256,
        epochs=3,
        seeds=(seed,),
        attack="sf",
        dataset={"kind": "synthetic", "n_train": 300, "n_test": 100, "features": 4, "classes": 3},
        path="protocol",
        deterministic=True,
    )


def quick_checks(seed: int) -> list[tuple[str, bool]]:
    """A few fast end-to-end checks of the core invariants."""
    from .attacks import strategy
    from .field import M61, PrimeField
    from .protocol import ProtocolConfig, plaintext_round, run_round

    F = PrimeField(M61)
    rng = np.random.default_rng(seed)
    out = []
    for rule, n in (("krum", 7), ("multikrum", 8)):
        cfg = ProtocolConfig(n=n, b=2, z=1, d=3, field=F, rule=rule)
        ok = True
        for name in ("honest", "all-shares", "inconsistent-dealing"):
            inputs = [F.embed_signed(rng.integers(-50, 50, 3)) for _ in range(n)]
            res = run_round(cfg, inputs, shared_seed=seed, seed=seed, behavior=strategy(name, {n - 1, n}))
            expect, selected, _ = plaintext_round(cfg, inputs, res.active, res.b_eff)
            ok &= list(expect) == list(res.aggregate_field) and selected == res.selected
        out.append((f"oracle equivalence ({rule})", bool(ok)))
    return out


def cmd_selftest(args) -> int:
    from .harness.experiment import run_experiment

    seed = args.seed if args.seed is not None else int(os.environ.get("BYZAGG_SEED", "0"))
    checks = quick_checks(seed)
    result = run_experiment(selftest_config(seed), parallel=False)
    csv_path, _ = result.write(args.out, "selftest")
    checks.append(("mini training run completes", not result.summary()["failed"]))
    if args.full:
        suite = Path(__file__).resolve().parents[2] / "tests" / "test_acceptance.py"
        if suite.exists():
            code = subprocess.call([sys.executable, "-m", "pytest", "-q", "-s", str(suite)])
            checks.append(("acceptance suite", code == 0))
        else:
            checks.append(("acceptance suite (not found next to the package)", False))
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"wrote {csv_path}")
    return 0 if all(ok for _, ok in checks) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="byzagg", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train with one config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default="results")
    r.add_argument("--stem", default="metrics")
    r.add_argument("--path", choices=("protocol", "plaintext"))
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="rerun a config over values of one parameter")
    s.add_argument("--config", required=True)
    s.add_argument("--param", required=True, help="config key, e.g. n or attack.kind")
    s.add_argument("--values", nargs="+", required=True)
    s.add_argument("--out", default="results")
    s.set_defaults(func=cmd_sweep)

    rep = sub.add_parser("report", help="mean +- std of max accuracy per CSV")
    rep.add_argument("--csv", nargs="+", required=True)
    rep.add_argument("--json", action="store_true")
    rep.set_defaults(func=cmd_report)

    t = sub.add_parser("selftest", help="fast checks plus a deterministic mini run")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", default="selftest-out")
    t.add_argument("--full", action="store_true", help="also run the acceptance suite")
    t.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ByzAggError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
