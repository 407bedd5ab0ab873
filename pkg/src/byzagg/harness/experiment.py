"""Federated training loop around the private aggregation round.

Each epoch every client computes a full-batch (or mini-batch) gradient, the
Byzantine clients replace theirs according to the attack, all inputs are
quantized, aggregated (through the protocol or the plaintext oracle) and
the model takes one step with the normalized aggregate.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .. import robust
from ..attacks import AttackKind, AttackSpec, byzantine_gradients, lf, message_behavior
from ..errors import ByzAggError, ConfigInvalid, ProtocolAbort
from ..field import PrimeField
from ..protocol import ProtocolConfig, check_sizes, comm_accounting, plaintext_round, run_round
from ..quantizer import QuantConfig, choose_field, dequantize, quantize
from ..sharing import SharedRandomness
from ..zo import ZoConfig, compression_ratio, zo_estimate
from . import model
from .data import Dataset, dirichlet_partition, load_csv, load_idx_dataset, synthetic_blobs

CSV_HEADER = ["seed", "epoch", "test_acc", "train_loss", "bytes_user", "bytes_fed", "wall_ms"]
PATHS = ("protocol", "plaintext")


@dataclass
class ExperimentConfig:
    n: int = 15
    b: int = 3
    z: int = 1
    rule: str = "krum"
    nnm: bool = True
    levels: int = 1024
    clip: float = 1.0
    q: int | None = None  # None picks the smallest safe field
    optimizer: str = "sgd"
    zo: ZoConfig = field(default_factory=ZoConfig)
    attack: AttackSpec = field(default_factory=AttackSpec)
    eta: float = 0.5
    epochs: int = 100
    beta: float = 0.1
    batch_size: int | None = None
    dataset: dict = field(default_factory=lambda: {"kind": "synthetic"})
    seeds: tuple = (0, 1, 2, 3, 4)
    path: str = "protocol"
    restart_on_vss_failure: bool = False
    private_final_aggregation: bool = False
    deterministic: bool = False  # zero the wall clock column

    def __post_init__(self):
        if isinstance(self.zo, dict):
            self.zo = ZoConfig(**self.zo)
        if isinstance(self.attack, dict):
            self.attack = AttackSpec(**self.attack)
        elif isinstance(self.attack, str):
            self.attack = AttackSpec(self.attack)
        self.seeds = tuple(int(s) for s in np.atleast_1d(self.seeds))
        self.validate()

    def validate(self) -> None:
        if self.path not in PATHS:
            raise ConfigInvalid(f"path must be one of {PATHS}")
        if self.optimizer not in ("sgd", "zo"):
            raise ConfigInvalid("optimizer must be 'sgd' or 'zo'")
        if self.rule == "mean":
            if self.path != "plaintext":
                raise ConfigInvalid("plain averaging is only available on the plaintext path")
        else:
            check_sizes(self.n, self.b, self.z, self.rule)
        if self.epochs < 1 or not self.eta > 0 or not self.beta > 0:
            raise ConfigInvalid("need epochs >= 1, eta > 0 and beta > 0")
        if not self.seeds:
            raise ConfigInvalid("need at least one seed")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def to_dict(self) -> dict:
        out = asdict(self)
        out["attack"]["kind"] = self.attack.kind.value
        out["attack"]["grid"] = list(self.attack.grid)
        out["seeds"] = list(self.seeds)
        return out

    def with_env(self) -> "ExperimentConfig":
        """Apply ``BYZAGG_SEED`` (replaces the seed list)."""
        seed = os.environ.get("BYZAGG_SEED")
        return replace(self, seeds=(int(seed),)) if seed else self

    @property
    def label(self) -> str:
        name = {"krum": "KR", "multikrum": "MKR", "mean": "AVG"}[self.rule]
        opt = "ZO" if self.optimizer == "zo" else "SGD"
        return f"{opt}-{name}" + ("-NNM" if self.nnm and self.rule != "mean" else "")


@dataclass
class MetricsRow:
    seed: int
    epoch: int
    test_acc: float
    train_loss: float
    bytes_user: float
    bytes_fed: int
    wall_ms: float

    def csv_fields(self) -> list[str]:
        return [
            str(self.seed),
            str(self.epoch),
            f"{self.test_acc:.6f}",
            f"{self.train_loss:.6f}",
            f"{self.bytes_user:.1f}",
            str(self.bytes_fed),
            f"{self.wall_ms:.3f}",
        ]


@dataclass
class SeedRun:
    seed: int
    rows: list[MetricsRow]
    failed: str | None = None
    weights: np.ndarray | None = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list[SeedRun]

    @property
    def rows(self) -> list[MetricsRow]:
        return [r for run in self.runs for r in run.rows]

    def summary(self) -> dict:
        best = [max((r.test_acc for r in run.rows), default=0.0) for run in self.runs]
        out = {
            "label": self.config.label,
            "attack": self.config.attack.kind.value,
            "seeds": [run.seed for run in self.runs],
            "max_acc": best,
            "mean_max_acc": float(np.mean(best)),
            "std_max_acc": float(np.std(best)),
            "failed": {run.seed: run.failed for run in self.runs if run.failed},
        }
        if self.config.optimizer == "zo":
            d = len(self.runs[0].weights) if self.runs and self.runs[0].weights is not None else None
            out["zo_logical_payload"] = self.config.zo.R
            if d:
                out["zo_compression_ratio"] = compression_ratio(d, self.config.zo.R)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow(row.csv_fields())
        return buf.getvalue()

    def write(self, out_dir, stem: str = "metrics") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / f"{stem}.csv"
        json_path = out_dir / f"{stem}.json"
        csv_path.write_text(self.to_csv())
        json_path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return csv_path, json_path


def load_dataset(spec: dict) -> tuple[Dataset, Dataset]:
    spec = dict(spec)
    kind = spec.pop("kind", "synthetic")
    if kind == "synthetic":
        return synthetic_blobs(**spec)
    if kind == "idx":
        classes = spec.get("num_classes", 10)
        return (
            load_idx_dataset(spec["train_images"], spec["train_labels"], classes),
            load_idx_dataset(spec["test_images"], spec["test_labels"], classes),
        )
    if kind == "csv":
        train = load_csv(spec["train"], spec.get("num_classes"))
        return train, load_csv(spec["test"], train.num_classes)
    raise ConfigInvalid(f"unknown dataset kind {kind!r}")


def _seeded(*parts: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(p) for p in parts]))


class _Trainer:
    def __init__(self, cfg: ExperimentConfig, train: Dataset, test: Dataset, seed: int):
        self.cfg, self.train, self.test, self.seed = cfg, train, test, seed
        features = train.x.shape[1]
        self.d = model.model_dim(features, train.num_classes)
        fld = PrimeField(cfg.q) if cfg.q else choose_field(cfg.n, cfg.b, self.d, cfg.levels)
        self.quant = QuantConfig(cfg.levels, cfg.clip, fld)
        self.pcfg = None
        if cfg.rule != "mean":
            self.pcfg = ProtocolConfig(
                n=cfg.n,
                b=cfg.b,
                z=cfg.z,
                d=self.d,
                field=fld,
                rule=cfg.rule,
                nnm=cfg.nnm,
                quant=self.quant,
                restart_on_vss_failure=cfg.restart_on_vss_failure,
                private_final_aggregation=cfg.private_final_aggregation,
            )
        self.parts = dirichlet_partition(train.y, cfg.n, cfg.beta, _seeded(seed, 1))
        self.byzantine = list(range(cfg.n - cfg.b + 1, cfg.n + 1))
        self.local = []
        for i, idx in enumerate(self.parts, start=1):
            data = train.subset(idx)
            if i in self.byzantine and cfg.attack.kind == AttackKind.LF:
                data = data.with_labels(lf(data.y, data.num_classes))
            self.local.append(data)
        self.sr = SharedRandomness(seed)
        self.rule_fn = robust.make_rule(cfg.rule, cfg.b, cfg.nnm)

    def _batch(self, data: Dataset, epoch: int, client: int) -> Dataset:
        bs = self.cfg.batch_size
        if bs is None or bs >= len(data):
            return data
        idx = _seeded(self.seed, 2, epoch, client).choice(len(data), size=bs, replace=False)
        return data.subset(idx)

    def _gradient(self, w, data: Dataset, epoch: int) -> np.ndarray:
        if self.cfg.optimizer == "zo":
            return zo_estimate(model.logreg_loss, w, data, self.cfg.zo, self.sr, epoch)
        return model.logreg_gradient(w, data)

    def inputs(self, w, epoch: int) -> list[np.ndarray]:
        """Quantized field vectors of all n clients for this epoch."""
        cfg = self.cfg
        grads = [self._gradient(w, self._batch(self.local[i - 1], epoch, i), epoch) for i in range(1, cfg.n + 1)]
        if cfg.b and cfg.attack.kind.crafts_gradient:
            honest = np.array([grads[i - 1] for i in range(1, cfg.n + 1) if i not in self.byzantine])
            own = [grads[i - 1] for i in self.byzantine]
            crafted = byzantine_gradients(cfg.attack, honest, own, cfg.b, self.rule_fn, _seeded(self.seed, 3, epoch))
            for i, g in zip(self.byzantine, crafted):
                grads[i - 1] = g
        return [quantize(g, self.quant, _seeded(self.seed, 4, epoch, i)) for i, g in enumerate(grads, start=1)]

    def aggregate(self, inputs, epoch: int):
        """Normalized aggregate and (per-user, federator) bytes."""
        cfg = self.cfg
        if cfg.path == "protocol":
            behavior = message_behavior(cfg.attack, self.byzantine)
            res = run_round(
                self.pcfg, inputs, shared_seed=self.seed, seed=self.seed, round_id=epoch,
                behavior=behavior, keep_payloads=False,
            )
            report = comm_accounting(res.transcript)
            return res.g_sigma, report.per_user(range(1, cfg.n + 1)), report.federator
        if cfg.rule == "mean":
            ints = np.array([self.quant.field.unembed_signed(x) for x in inputs], dtype=np.int64)
            total, norm = ints.sum(axis=0), cfg.n
            return dequantize(self.quant.field.array(total), self.quant, norm) / norm, 0.0, 0
        total, _, norm = plaintext_round(self.pcfg, inputs)
        return dequantize(total, self.quant, norm) / norm, 0.0, 0

    def run(self) -> SeedRun:
        cfg = self.cfg
        w = np.zeros(self.d)
        rows = []
        failed = None
        for epoch in range(cfg.epochs):
            start = time.perf_counter()
            try:
                g, bytes_user, bytes_fed = self.aggregate(self.inputs(w, epoch), epoch)
            except (ProtocolAbort, ByzAggError) as exc:
                failed = f"epoch {epoch}: {type(exc).__name__}: {exc}"
                break
            w = w - cfg.eta * g
            wall = 0.0 if cfg.deterministic else (time.perf_counter() - start) * 1e3
            rows.append(
                MetricsRow(
                    seed=self.seed,
                    epoch=epoch,
                    test_acc=model.accuracy(w, self.test),
                    train_loss=model.logreg_loss(w, self.train),
                    bytes_user=bytes_user,
                    bytes_fed=bytes_fed,
                    wall_ms=wall,
                )
            )
        return SeedRun(self.seed, rows, failed, w)


def run_seed(cfg: ExperimentConfig, seed: int, data: tuple[Dataset, Dataset] | None = None) -> SeedRun:
    train, test = data if data is not None else load_dataset(cfg.dataset)
    return _Trainer(cfg, train, test, seed).run()


def _workers(count: int) -> int:
    cap = os.environ.get("BYZAGG_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, count))


def run_experiment(cfg: ExperimentConfig, parallel: bool = True) -> ExperimentResult:
    """Train once per seed; seeds run in worker processes when allowed."""
    data = load_dataset(cfg.dataset)
    workers = _workers(len(cfg.seeds)) if parallel else 1
    if workers == 1:
        runs = [run_seed(cfg, s, data) for s in cfg.seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(run_seed, [cfg] * len(cfg.seeds), cfg.seeds, [data] * len(cfg.seeds)))
    return ExperimentResult(cfg, runs)
