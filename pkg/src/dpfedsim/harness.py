"""Experiment harness: strict JSON configuration, sweep execution over
compression ratios / noise levels / seeds, and CSV metrics persistence.

Outputs per sweep point and seed: a per-round CSV (columns t, loss, acc,
eps, bits, clip_frac, saturation, ms), one summary row (best accuracy
across rounds, final epsilon, total uplink bits), and an aggregate file
with mean and sample standard deviation of best accuracy across seeds.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, Partition, load_idx, partition_iid, partition_label_shards, synth_classification
from .errors import ConfigError
from .federation import (
    FED_SMP,
    FEDAVG,
    SCHEMES,
    FederationState,
    RoundRecord,
    SchemeConfig,
    comm_cost,
    run_round,
)
from .model import ARCHITECTURES, LocalOptState, ModelSpec, init_params
from .numeric import Purpose, RngStream
from .privacy import PrivacyParams, calibrate_sigma_accountant, calibrate_sigma_theorem1
from .secagg import FixedPointCodec
from .sparsify import RAND_K, TOP_K, SparsifierKind

ROUND_COLUMNS = ["t", "loss", "acc", "eps", "bits", "clip_frac", "saturation", "ms"]
SUMMARY_COLUMNS = [
    "scheme",
    "sparsifier",
    "p",
    "sigma",
    "seed",
    "best_acc",
    "final_eps",
    "total_bits",
    "per_client_bits",
]
AGGREGATE_COLUMNS = [
    "scheme",
    "sparsifier",
    "p",
    "sigma",
    "n_seeds",
    "mean_best_acc",
    "std_best_acc",
    "final_eps",
    "per_client_bits",
]


def _require(section: dict, path: str, key: str):
    if key not in section:
        raise ConfigError(f"{path}.{key}", "missing required key")
    return section[key]


def _check_keys(section, path: str, allowed: set[str]) -> None:
    if not isinstance(section, dict):
        raise ConfigError(path, "must be a JSON object")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown key")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str
    n_examples: int = 0
    input_dim: int = 0
    num_classes: int = 0
    class_sep: float = 1.0
    eval_examples: int = 0
    seed: int | None = None
    images: str = ""
    labels: str = ""
    eval_images: str = ""
    eval_labels: str = ""

    @staticmethod
    def from_dict(section: dict) -> "DatasetConfig":
        kind = _require(section, "dataset", "kind")
        if kind == "synthetic":
            _check_keys(
                section,
                "dataset",
                {"kind", "n_examples", "input_dim", "num_classes", "class_sep",
                 "eval_examples", "seed"},
            )
            return DatasetConfig(
                kind=kind,
                n_examples=int(_require(section, "dataset", "n_examples")),
                input_dim=int(_require(section, "dataset", "input_dim")),
                num_classes=int(_require(section, "dataset", "num_classes")),
                class_sep=float(section.get("class_sep", 1.0)),
                eval_examples=int(section.get("eval_examples", 0)),
                seed=section.get("seed"),
            )
        if kind == "idx":
            _check_keys(
                section,
                "dataset",
                {"kind", "images", "labels", "eval_images", "eval_labels"},
            )
            return DatasetConfig(
                kind=kind,
                images=_require(section, "dataset", "images"),
                labels=_require(section, "dataset", "labels"),
                eval_images=section.get("eval_images", ""),
                eval_labels=section.get("eval_labels", ""),
            )
        raise ConfigError("dataset.kind", f"must be 'synthetic' or 'idx', got '{kind}'")


@dataclass(frozen=True)
class PartitionConfig:
    n_clients: int
    kind: str = "iid"
    public_fraction: float = 0.0
    shards_per_client: int = 1
    seed: int | None = None

    @staticmethod
    def from_dict(section: dict) -> "PartitionConfig":
        _check_keys(
            section,
            "partition",
            {"kind", "n_clients", "public_fraction", "shards_per_client", "seed"},
        )
        kind = section.get("kind", "iid")
        if kind not in ("iid", "label_shards"):
            raise ConfigError("partition.kind", f"must be 'iid' or 'label_shards', got '{kind}'")
        return PartitionConfig(
            n_clients=int(_require(section, "partition", "n_clients")),
            kind=kind,
            public_fraction=float(section.get("public_fraction", 0.0)),
            shards_per_client=int(section.get("shards_per_client", 1)),
            seed=section.get("seed"),
        )


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float
    momentum: float = 0.0
    batch_size: int = 1
    local_steps: int | None = None
    local_epochs: int | None = None
    lr_decay: float = 1.0
    lr_decay_every: int = 1

    @staticmethod
    def from_dict(section: dict) -> "OptimizerConfig":
        _check_keys(
            section,
            "scheme.optimizer",
            {"learning_rate", "momentum", "batch_size", "local_steps",
             "local_epochs", "lr_decay", "lr_decay_every"},
        )
        cfg = OptimizerConfig(
            learning_rate=float(_require(section, "scheme.optimizer", "learning_rate")),
            momentum=float(section.get("momentum", 0.0)),
            batch_size=int(section.get("batch_size", 1)),
            local_steps=section.get("local_steps"),
            local_epochs=section.get("local_epochs"),
            lr_decay=float(section.get("lr_decay", 1.0)),
            lr_decay_every=int(section.get("lr_decay_every", 1)),
        )
        if (cfg.local_steps is None) == (cfg.local_epochs is None):
            raise ConfigError(
                "scheme.optimizer.local_steps",
                "exactly one of local_steps / local_epochs must be given",
            )
        return cfg

    def rate_at(self, round_index: int) -> float:
        return self.learning_rate * self.lr_decay ** (round_index // self.lr_decay_every)

    def steps_for(self, shard_size: int) -> int:
        if self.local_steps is not None:
            return int(self.local_steps)
        return int(self.local_epochs) * math.ceil(shard_size / self.batch_size)

    def state_for(self, round_index: int, shard_size: int) -> LocalOptState:
        return LocalOptState(
            learning_rate=self.rate_at(round_index),
            momentum=self.momentum,
            batch_size=self.batch_size,
            local_steps=self.steps_for(shard_size),
        )


@dataclass(frozen=True)
class SchemeSection:
    name: str
    clients_per_round: int
    rounds: int
    optimizer: OptimizerConfig
    sparsifier: str = RAND_K
    compression_ratio: float = 1.0
    clip: float = 1.0
    noise_multiplier: float | None = None
    epsilon: float | None = None
    calibration: str = "theorem1"
    delta: float | None = None

    @staticmethod
    def from_dict(section: dict) -> "SchemeSection":
        _check_keys(
            section,
            "scheme",
            {"name", "clients_per_round", "rounds", "optimizer", "sparsifier",
             "compression_ratio", "clip", "noise_multiplier", "epsilon",
             "calibration", "delta"},
        )
        name = _require(section, "scheme", "name")
        if name not in SCHEMES:
            raise ConfigError("scheme.name", f"must be one of {SCHEMES}, got '{name}'")
        sparsifier = section.get("sparsifier", RAND_K)
        if sparsifier not in (RAND_K, TOP_K):
            raise ConfigError(
                "scheme.sparsifier", f"must be '{RAND_K}' or '{TOP_K}', got '{sparsifier}'"
            )
        calibration = section.get("calibration", "theorem1")
        if calibration not in ("theorem1", "accountant"):
            raise ConfigError(
                "scheme.calibration",
                f"must be 'theorem1' or 'accountant', got '{calibration}'",
            )
        cfg = SchemeSection(
            name=name,
            clients_per_round=int(_require(section, "scheme", "clients_per_round")),
            rounds=int(_require(section, "scheme", "rounds")),
            optimizer=OptimizerConfig.from_dict(_require(section, "scheme", "optimizer")),
            sparsifier=sparsifier,
            compression_ratio=float(section.get("compression_ratio", 1.0)),
            clip=float(section.get("clip", 1.0)),
            noise_multiplier=section.get("noise_multiplier"),
            epsilon=section.get("epsilon"),
            calibration=calibration,
            delta=section.get("delta"),
        )
        if name != FEDAVG and cfg.noise_multiplier is None and cfg.epsilon is None:
            raise ConfigError(
                "scheme.noise_multiplier",
                f"{name} needs noise_multiplier or epsilon",
            )
        if cfg.noise_multiplier is not None and cfg.epsilon is not None:
            raise ConfigError(
                "scheme.epsilon", "give either noise_multiplier or epsilon, not both"
            )
        return cfg


@dataclass(frozen=True)
class SweepConfig:
    compression_ratios: tuple = ()
    noise_multipliers: tuple = ()
    epsilons: tuple = ()
    seeds: tuple = (0,)

    @staticmethod
    def from_dict(section: dict) -> "SweepConfig":
        _check_keys(
            section,
            "sweep",
            {"compression_ratios", "noise_multipliers", "epsilons", "seeds"},
        )
        cfg = SweepConfig(
            compression_ratios=tuple(section.get("compression_ratios", ())),
            noise_multipliers=tuple(section.get("noise_multipliers", ())),
            epsilons=tuple(section.get("epsilons", ())),
            seeds=tuple(int(s) for s in section.get("seeds", (0,))),
        )
        if cfg.noise_multipliers and cfg.epsilons:
            raise ConfigError(
                "sweep.epsilons", "sweep either noise_multipliers or epsilons, not both"
            )
        if not cfg.seeds:
            raise ConfigError("sweep.seeds", "at least one seed required")
        return cfg


@dataclass(frozen=True)
class ExperimentConfig:
    output_dir: str
    dataset: DatasetConfig
    partition: PartitionConfig
    model: dict
    scheme: SchemeSection
    sweep: SweepConfig = field(default_factory=SweepConfig)

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        _check_keys(
            raw,
            "config",
            {"output_dir", "dataset", "partition", "model", "scheme", "sweep"},
        )
        model = _require(raw, "config", "model")
        _check_keys(model, "model", {"architecture", "hidden_dim"})
        arch = _require(model, "model", "architecture")
        if arch not in ARCHITECTURES:
            raise ConfigError("model.architecture", f"must be one of {ARCHITECTURES}")
        return ExperimentConfig(
            output_dir=str(_require(raw, "config", "output_dir")),
            dataset=DatasetConfig.from_dict(_require(raw, "config", "dataset")),
            partition=PartitionConfig.from_dict(_require(raw, "config", "partition")),
            model=dict(model),
            scheme=SchemeSection.from_dict(_require(raw, "config", "scheme")),
            sweep=SweepConfig.from_dict(raw.get("sweep", {})),
        )

    @staticmethod
    def from_file(path: str) -> "ExperimentConfig":
        with open(path) as f:
            return ExperimentConfig.from_dict(json.load(f))


def build_data(config: ExperimentConfig, run_seed: int):
    """Materialize (train, eval, partition) deterministically for one run."""
    ds = config.dataset
    if ds.kind == "synthetic":
        data_seed = run_seed if ds.seed is None else int(ds.seed)
        train = synth_classification(
            data_seed, ds.n_examples, ds.input_dim, ds.num_classes, ds.class_sep
        )
        eval_data = None
        if ds.eval_examples:
            eval_data = synth_classification(
                data_seed, ds.eval_examples, ds.input_dim, ds.num_classes,
                ds.class_sep, part=1,
            )
    else:
        train = load_idx(ds.images, ds.labels)
        eval_data = load_idx(ds.eval_images, ds.eval_labels) if ds.eval_images else None
    pt = config.partition
    part_seed = run_seed if pt.seed is None else int(pt.seed)
    if pt.kind == "iid":
        partition = partition_iid(train, pt.n_clients, pt.public_fraction, part_seed)
    else:
        partition = partition_label_shards(
            train, pt.n_clients, pt.shards_per_client, pt.public_fraction, part_seed
        )
    return train, eval_data, partition


def resolve_sigma(scheme: SchemeSection, n_clients: int) -> tuple[float, float]:
    """Return (noise multiplier, delta); calibrates from a target epsilon
    when no explicit multiplier is configured."""
    delta = scheme.delta if scheme.delta is not None else n_clients ** -1.1
    if scheme.name == FEDAVG:
        return 0.0, delta
    if scheme.noise_multiplier is not None:
        return float(scheme.noise_multiplier), delta
    q = scheme.clients_per_round / n_clients
    if scheme.calibration == "theorem1":
        sigma = calibrate_sigma_theorem1(scheme.epsilon, delta, q, scheme.rounds)
    else:
        sigma = calibrate_sigma_accountant(scheme.epsilon, delta, q, scheme.rounds)
    return sigma, delta


@dataclass
class RunResult:
    label: str
    p: float
    sigma: float
    seed: int
    records: list[RoundRecord]
    rounds_path: str = ""

    @property
    def best_accuracy(self) -> float:
        return max(rec.eval_accuracy for rec in self.records)

    @property
    def final_epsilon(self) -> float:
        return self.records[-1].epsilon

    @property
    def total_bits(self) -> int:
        return self.records[-1].uplink_bits


def run_single(
    config: ExperimentConfig,
    p: float | None,
    sigma_override: float | None,
    eps_override: float | None,
    run_seed: int,
) -> RunResult:
    """Run one (compression ratio, noise level, seed) point of the sweep."""
    scheme_cfg = config.scheme
    if p is not None:
        scheme_cfg = replace(scheme_cfg, compression_ratio=float(p))
    if sigma_override is not None:
        scheme_cfg = replace(scheme_cfg, noise_multiplier=float(sigma_override), epsilon=None)
    if eps_override is not None:
        scheme_cfg = replace(scheme_cfg, epsilon=float(eps_override), noise_multiplier=None)

    train, eval_data, partition = build_data(config, run_seed)
    n = config.partition.n_clients
    sigma, delta = resolve_sigma(scheme_cfg, n)

    spec = ModelSpec(
        architecture=config.model["architecture"],
        input_dim=train.input_dim,
        num_classes=int(train.labels.max()) + 1,
        hidden_dim=int(config.model.get("hidden_dim", 0)),
    )
    privacy = None
    if scheme_cfg.name != FEDAVG:
        privacy = PrivacyParams(
            clip=scheme_cfg.clip,
            noise_multiplier=sigma,
            sampling_ratio=scheme_cfg.clients_per_round / n,
            rounds=scheme_cfg.rounds,
            delta=delta,
        )
    opt = scheme_cfg.optimizer
    shards = [train.subset(s) for s in partition.shards]
    shard_sizes = [len(s) for s in shards]
    public = (
        train.subset(partition.public_indices)
        if len(partition.public_indices)
        else None
    )
    fed_config = SchemeConfig(
        scheme=scheme_cfg.name,
        n_clients=n,
        clients_per_round=scheme_cfg.clients_per_round,
        rounds=scheme_cfg.rounds,
        opt=opt.state_for(0, shard_sizes[0]),
        sparsifier=(
            SparsifierKind(scheme_cfg.sparsifier, scheme_cfg.compression_ratio)
            if scheme_cfg.name == FED_SMP
            else None
        ),
        privacy=privacy,
    )
    state = FederationState(
        model=spec,
        params=init_params(spec, RngStream(run_seed, 0, 0, Purpose.INIT)),
        shards=shards,
        public=public,
        train_eval=train,
        eval_data=eval_data if eval_data is not None else train,
        codec=FixedPointCodec(),
        master_seed=run_seed,
    )

    records = []
    for t in range(scheme_cfg.rounds):
        def client_opt(c, _t=t):
            return opt.state_for(_t, shard_sizes[c])

        proxy_opt = opt.state_for(t, len(public)) if public is not None else None
        _, record = run_round(
            fed_config,
            state,
            t,
            opt=opt.state_for(t, shard_sizes[0]),
            client_opt=client_opt,
            proxy_opt=proxy_opt,
        )
        records.append(record)

    label = _point_label(scheme_cfg, sigma)
    return RunResult(
        label=label,
        p=scheme_cfg.compression_ratio,
        sigma=sigma,
        seed=run_seed,
        records=records,
    )


def _point_label(scheme: SchemeSection, sigma: float) -> str:
    parts = [scheme.name]
    if scheme.name == FED_SMP:
        parts.append(scheme.sparsifier)
        parts.append(f"p{scheme.compression_ratio:g}")
    if scheme.name != FEDAVG:
        parts.append(f"sigma{sigma:g}")
    return "_".join(parts)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def write_round_csv(path: str, records: list[RoundRecord]) -> None:
    rows = [
        [
            rec.round,
            rec.train_loss,
            rec.eval_accuracy,
            rec.epsilon,
            rec.uplink_bits,
            rec.clipped_fraction,
            rec.saturation,
            rec.wall_ms,
        ]
        for rec in records
    ]
    _write_csv(path, ROUND_COLUMNS, rows)


def run_experiment(config: ExperimentConfig) -> dict:
    """Execute the configured sweep; returns paths and summary rows."""
    os.makedirs(config.output_dir, exist_ok=True)
    sweep = config.sweep
    ratios = sweep.compression_ratios or (config.scheme.compression_ratio,)
    if config.scheme.name != FED_SMP:
        ratios = (1.0,)
    if sweep.noise_multipliers:
        noise_axis = [("sigma", s) for s in sweep.noise_multipliers]
    elif sweep.epsilons:
        noise_axis = [("eps", e) for e in sweep.epsilons]
    else:
        noise_axis = [(None, None)]

    results: list[RunResult] = []
    summary_rows = []
    for p, (noise_kind, noise_val), seed in itertools.product(
        ratios, noise_axis, sweep.seeds
    ):
        result = run_single(
            config,
            p,
            noise_val if noise_kind == "sigma" else None,
            noise_val if noise_kind == "eps" else None,
            seed,
        )
        rounds_path = os.path.join(
            config.output_dir, f"rounds_{result.label}_seed{seed}.csv"
        )
        write_round_csv(rounds_path, result.records)
        result.rounds_path = rounds_path
        results.append(result)
        summary_rows.append(
            [
                config.scheme.name,
                config.scheme.sparsifier if config.scheme.name == FED_SMP else "",
                result.p,
                result.sigma,
                seed,
                result.best_accuracy,
                result.final_epsilon,
                result.total_bits,
                result.total_bits / config.partition.n_clients,
            ]
        )

    summary_path = os.path.join(config.output_dir, "summary.csv")
    _write_csv(summary_path, SUMMARY_COLUMNS, summary_rows)

    aggregate_rows = []
    for key, group in itertools.groupby(results, key=lambda r: (r.p, r.sigma)):
        group = list(group)
        accs = np.array([g.best_accuracy for g in group])
        aggregate_rows.append(
            [
                config.scheme.name,
                config.scheme.sparsifier if config.scheme.name == FED_SMP else "",
                key[0],
                key[1],
                len(group),
                float(np.mean(accs)),
                float(np.std(accs, ddof=1)) if len(group) > 1 else 0.0,
                group[-1].final_epsilon,
                group[-1].total_bits / config.partition.n_clients,
            ]
        )
    aggregate_path = os.path.join(config.output_dir, "aggregate.csv")
    _write_csv(aggregate_path, AGGREGATE_COLUMNS, aggregate_rows)

    return {
        "results": results,
        "summary_path": summary_path,
        "aggregate_path": aggregate_path,
    }
