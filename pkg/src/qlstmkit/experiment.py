"""Experiment configs, config hashing, run directories and sweeps.

An experiment config is one JSON object::

    {
      "dataset": {"format": "synthetic", "n_samples": 200, "seed": 0},
      "model": {"n_qubits": 2, "seq_len": 4, "fp_bits": 256},
      "train": {"model": "qlstm", "epochs": 5, "lr": 0.05, "batch_size": 32},
      "noise": null,
      "error_table": null,
      "output_dir": "runs",
      "seed": 0
    }

``dataset.format`` is ``smiles_csv``, ``fingerprint_csv`` or ``synthetic``.
Relative dataset paths are resolved against the config file's directory.

Each run lands in ``<output_dir>/<model>-<hash12>/``::

    config.json       canonical config echo
    config_hash.txt   full hash, then one "section hash" line per section
    report.csv        per-epoch metrics, one block per split seed
    summary.json      final accuracies and wall time
    checkpoint.json   final parameters for every split seed
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DatasetTable, load_dataset, make_separable_dataset
from .data.fingerprint import DEFAULT_RADIUS
from .errors import ConfigError, QlstmError
from .model import QlstmConfig, param_shapes
from .noise import GateErrorTable, NoiseConfig
from .training import INIT_STREAM, RunReport, TrainConfig, train_model

log = logging.getLogger(__name__)

DATASET_FORMATS = ("smiles_csv", "fingerprint_csv", "synthetic")
SECTIONS = ("dataset", "model", "train", "noise", "error_table", "seed")
SWEEP_AXES = ("qubits", "noise", "lr")
CHECKPOINT_FORMAT = "qlstmkit-checkpoint"
CHECKPOINT_VERSION = 1
FAILED = "FAILED"

_DATASET_KEYS = {
    "smiles_csv": {"format", "path", "radius", "label_columns"},
    "fingerprint_csv": {"format", "path", "label_columns"},
    "synthetic": {"format", "n_samples", "seed", "on_rate", "off_rate"},
}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ConfigHash:
    digest: str
    components: dict[str, str]

    @property
    def short(self) -> str:
        return self.digest[:12]

    def to_text(self) -> str:
        lines = [self.digest] + [f"{k} {v}" for k, v in sorted(self.components.items())]
        return "\n".join(lines) + "\n"


@dataclass
class ExperimentConfig:
    dataset: dict
    model: QlstmConfig
    train: TrainConfig
    noise: NoiseConfig | None = None
    error_table: GateErrorTable | None = None
    output_dir: str = "runs"
    seed: int = 0
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def __post_init__(self):
        self.dataset = _check_dataset(self.dataset)
        if self.noise is not None and self.train.model != "qlstm":
            raise ConfigError("noise: bit-flip noise applies to the qlstm model only")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("experiment config must be a JSON object")
        unknown = set(data) - set(SECTIONS) - {"output_dir"}
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        if "dataset" not in data:
            raise ConfigError("dataset: section is required")
        train = dict(data.get("train") or {})
        if "noise" in train:
            raise ConfigError("train.noise: put noise settings in the top-level noise section")
        noise = data.get("noise")
        table = data.get("error_table")
        return cls(
            dataset=dict(data["dataset"]),
            model=QlstmConfig.from_dict(data.get("model") or {}),
            train=TrainConfig.from_dict(train),
            noise=None if noise is None else NoiseConfig.from_dict(noise),
            error_table=None if table is None else GateErrorTable.from_dict(table),
            output_dir=str(data.get("output_dir", "runs")),
            seed=data.get("seed", 0),
            base_dir=Path(base_dir),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(data, base_dir=path.parent)

    def to_dict(self) -> dict:
        return {
            "dataset": dict(self.dataset),
            "model": self.model.to_dict(),
            "train": {k: v for k, v in self.train.to_dict().items() if k != "noise"},
            "noise": None if self.noise is None else self.noise.to_dict(),
            "error_table": None if self.error_table is None else self.error_table.to_dict(),
            "output_dir": self.output_dir,
            "seed": self.seed,
        }

    def with_changes(self, **sections) -> "ExperimentConfig":
        data = copy.deepcopy(self.to_dict())
        for key, value in sections.items():
            data[key] = value
        return ExperimentConfig.from_dict(data, base_dir=self.base_dir)

    def train_config(self) -> TrainConfig:
        data = self.train.to_dict()
        data["noise"] = self.noise
        return TrainConfig(**data)

    def dataset_path(self) -> Path | None:
        if "path" not in self.dataset:
            return None
        path = Path(self.dataset["path"])
        return path if path.is_absolute() else self.base_dir / path

    def dataset_name(self) -> str:
        path = self.dataset_path()
        return "synthetic" if path is None else path.stem

    def validate(self) -> None:
        """Checks that need the filesystem; field checks run at construction."""
        path = self.dataset_path()
        if path is not None and not path.is_file():
            raise ConfigError(f"dataset.path: file not found: {path}")

    def output_root(self) -> Path:
        out = Path(self.output_dir)
        return out if out.is_absolute() else self.base_dir / out

    def config_hash(self) -> ConfigHash:
        data = self.to_dict()
        del data["output_dir"]
        return ConfigHash(
            digest=_digest(data),
            components={k: _digest(data[k]) for k in SECTIONS},
        )


def _check_dataset(ds: dict) -> dict:
    if not isinstance(ds, dict):
        raise ConfigError("dataset: must be an object")
    fmt = ds.get("format")
    if fmt not in DATASET_FORMATS:
        raise ConfigError(f"dataset.format: must be one of {DATASET_FORMATS}, got {fmt!r}")
    unknown = set(ds) - _DATASET_KEYS[fmt]
    if unknown:
        raise ConfigError(f"dataset: unknown field(s) for {fmt}: {sorted(unknown)}")
    if fmt != "synthetic" and not ds.get("path"):
        raise ConfigError("dataset.path: required for file-backed datasets")
    if fmt == "synthetic" and int(ds.get("n_samples", 200)) < 2:
        raise ConfigError("dataset.n_samples: need at least 2 samples")
    return ds


def load_experiment_dataset(cfg: ExperimentConfig) -> DatasetTable:
    ds = cfg.dataset
    n_bits = cfg.model.fp_bits
    if ds["format"] == "synthetic":
        table = make_separable_dataset(
            n_samples=int(ds.get("n_samples", 200)),
            n_bits=n_bits,
            seed=int(ds.get("seed", 0)),
            on_rate=float(ds.get("on_rate", 0.5)),
            off_rate=float(ds.get("off_rate", 0.1)),
        )
    else:
        table = load_dataset(
            cfg.dataset_path(),
            format=ds["format"],
            radius=int(ds.get("radius", DEFAULT_RADIUS)),
            n_bits=n_bits,
            label_columns=ds.get("label_columns"),
        )
    if table.n_tasks != cfg.model.n_tasks:
        raise ConfigError(
            f"model.n_tasks: dataset has {table.n_tasks} label column(s), config says {cfg.model.n_tasks}"
        )
    if len(table) < 2:
        raise ConfigError(f"dataset: need at least 2 usable rows, got {len(table)}")
    return table


# -- checkpoints --------------------------------------------------------------

def checkpoint_dict(cfg: ExperimentConfig, report: RunReport) -> dict:
    kind = cfg.train.model
    order = list(param_shapes(kind, cfg.model))
    splits = []
    for split_seed, params in report.final_params.items():
        splits.append({
            "split_seed": split_seed,
            "init_seed": [cfg.seed, split_seed, INIT_STREAM],
            "params": [
                {"name": name, "shape": list(params[name].shape),
                 "data": params[name].ravel().tolist()}
                for name in order
            ],
        })
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_hash": cfg.config_hash().digest,
        "model": kind,
        "model_config": cfg.model.to_dict(),
        "seed": cfg.seed,
        "splits": splits,
    }


def load_checkpoint(path) -> dict[int, dict[str, np.ndarray]]:
    """Parameters per split seed from a checkpoint file."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format") != CHECKPOINT_FORMAT or data.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: not a version {CHECKPOINT_VERSION} checkpoint")
    out = {}
    for split in data["splits"]:
        out[int(split["split_seed"])] = {
            p["name"]: np.asarray(p["data"], dtype=float).reshape(p["shape"])
            for p in split["params"]
        }
    return out


# -- runs ---------------------------------------------------------------------

@dataclass
class RunResult:
    run_dir: Path
    config_hash: ConfigHash
    report: RunReport


def run_dir_for(cfg: ExperimentConfig) -> Path:
    return cfg.output_root() / f"{cfg.train.model}-{cfg.config_hash().short}"


def _write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)


def run_experiment(cfg: ExperimentConfig, on_epoch=None) -> RunResult:
    cfg.validate()
    dataset = load_experiment_dataset(cfg)
    chash = cfg.config_hash()
    run_dir = run_dir_for(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    # a stale summary would claim success for a run that is about to be redone
    (run_dir / "summary.json").unlink(missing_ok=True)
    _write_json(run_dir / "config.json", cfg.to_dict())
    (run_dir / "config_hash.txt").write_text(chash.to_text(), encoding="utf-8")

    report = train_model(cfg.train_config(), cfg.model, dataset, seed=cfg.seed, on_epoch=on_epoch)

    report.write_csv(run_dir / "report.csv")
    _write_json(run_dir / "checkpoint.json", checkpoint_dict(cfg, report))
    summary = report.summary()
    summary.update(
        config_hash=chash.digest,
        dataset=cfg.dataset_name(),
        dataset_rows=len(dataset),
        dataset_provenance={k: v for k, v in dataset.provenance.items() if k != "skipped_lines"},
        std_val_accuracy=float(np.std(list(report.final_val_accuracy.values()))),
    )
    # written last: its presence marks a complete run directory
    _write_json(run_dir / "summary.json", summary)
    return RunResult(run_dir, chash, report)


# -- sweeps -------------------------------------------------------------------

def leg_config(cfg: ExperimentConfig, axis: str, value, model: str) -> ExperimentConfig:
    data = cfg.to_dict()
    data["train"]["model"] = model
    if axis == "qubits":
        if float(value) != int(value):
            raise ConfigError(f"qubits sweep values must be integers, got {value!r}")
        data["model"]["n_qubits"] = int(value)
    elif axis == "noise":
        noise = dict(data["noise"] or {})
        noise["bit_flip_p"] = float(value)
        data["noise"] = noise
    elif axis == "lr":
        data["train"]["lr"] = float(value)
    else:
        raise ConfigError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    return ExperimentConfig.from_dict(data, base_dir=cfg.base_dir)


@dataclass
class SweepLeg:
    axis_value: float
    model: str
    status: str
    run_dir: str | None = None
    config_hash: str | None = None
    mean_val_accuracy: float | None = None
    std_val_accuracy: float | None = None
    error: str | None = None


def _run_leg(cfg: ExperimentConfig, axis: str, value, model: str) -> SweepLeg:
    try:
        leg = leg_config(cfg, axis, value, model)
        result = run_experiment(leg)
    except (QlstmError, OSError, ValueError, FloatingPointError) as exc:
        log.error("sweep leg %s=%s model=%s failed: %s", axis, value, model, exc)
        return SweepLeg(value, model, FAILED, error=f"{type(exc).__name__}: {exc}")
    accs = list(result.report.final_val_accuracy.values())
    return SweepLeg(
        value, model, "ok",
        run_dir=str(result.run_dir),
        config_hash=result.config_hash.digest,
        mean_val_accuracy=float(np.mean(accs)),
        std_val_accuracy=float(np.std(accs)),
    )


def format_axis_value(value) -> str:
    value = float(value)
    return str(int(value)) if value.is_integer() else repr(value)


def table_column(dataset: str, model: str) -> str:
    return f"{dataset}/{model}"


def write_sweep_table(path, axis: str, dataset: str, legs: Sequence[SweepLeg]) -> None:
    """Rows are axis values, columns ``<dataset>/<model>``; cells are mean validation accuracy."""
    models = list(dict.fromkeys(leg.model for leg in legs))
    values = list(dict.fromkeys(leg.axis_value for leg in legs))
    cells = {(leg.axis_value, leg.model): leg for leg in legs}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([axis] + [table_column(dataset, m) for m in models])
        for value in values:
            row = [format_axis_value(value)]
            for m in models:
                leg = cells[(value, m)]
                row.append(FAILED if leg.status == FAILED else f"{leg.mean_val_accuracy:.4f}")
            writer.writerow(row)


def run_sweep(cfg: ExperimentConfig, axis: str, values: Sequence, models: Sequence[str] | None = None,
              parallel: int = 1) -> tuple[Path, list[SweepLeg]]:
    """Run one training leg per (value, model); failures are recorded, not raised."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = [float(v) for v in values]
    if not values:
        raise ConfigError("values: a sweep needs at least one value")
    if any(not math.isfinite(v) for v in values):
        raise ConfigError("values: sweep values must be finite")
    if len(set(values)) != len(values):
        raise ConfigError("values: duplicate sweep values")
    models = list(models or [cfg.train.model])
    if axis == "noise" and "lstm" in models:
        raise ConfigError("models: the noise axis applies to qlstm only")
    if parallel < 1:
        raise ConfigError(f"parallel must be >= 1, got {parallel}")
    cfg.validate()

    jobs = [(v, m) for v in values for m in models]
    if parallel == 1:
        legs = [_run_leg(cfg, axis, v, m) for v, m in jobs]
    else:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = [pool.submit(_run_leg, cfg, axis, v, m) for v, m in jobs]
            legs = [f.result() for f in futures]

    sweep_dir = cfg.output_root() / f"sweep-{axis}-{cfg.config_hash().short}"
    sweep_dir.mkdir(parents=True, exist_ok=True)
    write_sweep_table(sweep_dir / "table.csv", axis, cfg.dataset_name(), legs)
    _write_json(sweep_dir / "sweep.json", {
        "axis": axis,
        "dataset": cfg.dataset_name(),
        "base_config_hash": cfg.config_hash().digest,
        "legs": [leg.__dict__ for leg in legs],
    })
    return sweep_dir, legs
