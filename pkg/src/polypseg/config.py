"""Experiment configuration and its flat key=value file form.

The config file is INI-style with one section per concern. Unknown sections
or keys are rejected. ``ExperimentSpec`` round-trips losslessly through
``to_ini`` / ``from_ini``.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import dataclass, field

from .backbone import EncoderConfig
from .errors import ConfigError
from .fusion import FUSION_METHODS


@dataclass
class Toggles:
    convnext: bool = True
    dbfeb: bool = True
    lfsa: bool = True


@dataclass
class OptimizerSpec:
    lr: float = 1e-3          # desk default; the full-scale value is 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AttentionSpec:
    window: int = 3       # neighbourhood radius (7x7 window)
    heads: int = 2        # shortest-path attention heads
    max_hops: int = 3


@dataclass
class DataSpec:
    kind: str = "synthetic"   # synthetic | directory
    n_samples: int = 8
    noise: float = 0.04
    directory: str = ""

    def __post_init__(self):
        if self.kind not in ("synthetic", "directory"):
            raise ConfigError(f"data kind must be synthetic or directory; got {self.kind!r}")


@dataclass
class ExperimentSpec:
    seed: int = 0
    image_size: int = 32
    fusion: str = "fnf"
    epochs: int = 200
    batch_size: int = 2
    val_fraction: float = 0.25
    out_dir: str = "runs/exp"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    toggles: Toggles = field(default_factory=Toggles)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    attention: AttentionSpec = field(default_factory=AttentionSpec)
    data: DataSpec = field(default_factory=DataSpec)

    def __post_init__(self):
        if self.fusion not in FUSION_METHODS:
            raise ConfigError(f"fusion must be one of {FUSION_METHODS}; got {self.fusion!r}")
        if self.image_size % self.encoder.total_downsample:
            raise ConfigError(f"image_size {self.image_size} must be divisible by "
                              f"{self.encoder.total_downsample}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0, 1); got {self.val_fraction}")

    @property
    def head_channels(self) -> int:
        return self.encoder.stage_channels[0]

    # -- model-identity hash (checkpoint compatibility) --------------------
    def model_signature(self) -> dict:
        return {
            "image_size": self.image_size,
            "encoder": {"channels": list(self.encoder.stage_channels),
                        "depths": list(self.encoder.stage_depths),
                        "stem_stride": self.encoder.stem_stride},
            "toggles": {"convnext": self.toggles.convnext,
                        "dbfeb": self.toggles.dbfeb,
                        "lfsa": self.toggles.lfsa},
            "fusion": self.fusion,
            "attention": {"window": self.attention.window,
                          "heads": self.attention.heads,
                          "max_hops": self.attention.max_hops},
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.model_signature(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # -- file form ----------------------------------------------------------
    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["experiment"] = {
            "seed": str(self.seed),
            "image_size": str(self.image_size),
            "fusion": self.fusion,
            "epochs": str(self.epochs),
            "batch_size": str(self.batch_size),
            "val_fraction": repr(self.val_fraction),
            "out_dir": self.out_dir,
        }
        cp["encoder"] = {
            "stage_channels": ",".join(map(str, self.encoder.stage_channels)),
            "stage_depths": ",".join(map(str, self.encoder.stage_depths)),
            "stem_stride": str(self.encoder.stem_stride),
        }
        cp["toggles"] = {k: str(getattr(self.toggles, k)).lower()
                         for k in ("convnext", "dbfeb", "lfsa")}
        cp["optimizer"] = {
            "lr": repr(self.optimizer.lr),
            "beta1": repr(self.optimizer.beta1),
            "beta2": repr(self.optimizer.beta2),
            "eps": repr(self.optimizer.eps),
        }
        cp["attention"] = {
            "window": str(self.attention.window),
            "heads": str(self.attention.heads),
            "max_hops": str(self.attention.max_hops),
        }
        cp["data"] = {
            "kind": self.data.kind,
            "n_samples": str(self.data.n_samples),
            "noise": repr(self.data.noise),
            "directory": self.data.directory,
        }
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_ini())


_SCHEMA = {
    "experiment": {"seed": int, "image_size": int, "fusion": str, "epochs": int,
                   "batch_size": int, "val_fraction": float, "out_dir": str},
    "encoder": {"stage_channels": "intlist", "stage_depths": "intlist",
                "stem_stride": int},
    "toggles": {"convnext": "bool", "dbfeb": "bool", "lfsa": "bool"},
    "optimizer": {"lr": float, "beta1": float, "beta2": float, "eps": float},
    "attention": {"window": int, "heads": int, "max_hops": int},
    "data": {"kind": str, "n_samples": int, "noise": float, "directory": str},
}


def _convert(kind, raw: str, where: str):
    try:
        if kind == "intlist":
            return tuple(int(v) for v in raw.split(","))
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {where}: {raw!r}") from exc


def spec_from_ini(text: str) -> ExperimentSpec:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file: {exc}") from exc
    values: dict[str, dict] = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        values[section] = {}
        for key, raw in cp[section].items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values[section][key] = _convert(_SCHEMA[section][key], raw, f"[{section}] {key}")

    exp = values.get("experiment", {})
    enc = values.get("encoder", {})
    spec = ExperimentSpec(
        seed=exp.get("seed", 0),
        image_size=exp.get("image_size", 32),
        fusion=exp.get("fusion", "fnf"),
        epochs=exp.get("epochs", 200),
        batch_size=exp.get("batch_size", 2),
        val_fraction=exp.get("val_fraction", 0.25),
        out_dir=exp.get("out_dir", "runs/exp"),
        encoder=EncoderConfig(
            stage_channels=enc.get("stage_channels", (16, 32, 64, 128)),
            stage_depths=enc.get("stage_depths", (1, 1, 2, 1)),
            stem_stride=enc.get("stem_stride", 4),
        ),
        toggles=Toggles(**values.get("toggles", {})),
        optimizer=OptimizerSpec(**values.get("optimizer", {})),
        attention=AttentionSpec(**values.get("attention", {})),
        data=DataSpec(**values.get("data", {})),
    )
    return spec


def load_spec(path: str) -> ExperimentSpec:
    with open(path) as fh:
        return spec_from_ini(fh.read())
