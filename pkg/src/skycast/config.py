"""Layered run configuration: built-in defaults < config file < command-line flags."""

from __future__ import annotations

import copy
import difflib
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .clearsky import ClearSkyParams, Site
from .dataset import SplitSpec, parse_cutoff
from .model import NetworkConfig, default_filters
from .synth import GenConfig
from .training import TrainConfig

DEFAULTS: dict = {
    "seed": 0,
    "out": None,  # falls back to $SKYCAST_OUT, then ./skycast_runs
    "site": {"lat_deg": 48.713, "lon_deg": 2.208, "elevation_m": 156.0},
    "clearsky": {"model": "esra", "linke_turbidity": 3.0},
    "dataset": {"root": None, "image_size": 64},
    "synth": {
        "days": 30,
        "start_date": "2018-03-01",
        "end_date": "2018-09-30",
        "regime_weights": [0.25, 0.45, 0.30],
        "wind_speed": [0.02, 0.06],
        "diffuse_floor": 0.25,
    },
    "split": {"kind": "distinct_days", "ratio": 0.8, "cutoff": "13:00"},
    "network": {
        "horizon_min": 10,
        "filters": None,  # 16 for horizons <= 4 min, else 32
        "cnn_dense": [512, 64],
        "ann_widths": [16, 16],
        "head_widths": [64, 32],
    },
    "train": {
        "learning_rate": 1e-3,
        "batch_size": 32,
        "max_epochs": 100,
        "early_stop_patience": 10,
        "optimizer": "adam",
    },
    "sweep": {"horizons": list(range(2, 21, 2))},
    "visualize": {"layers": [0], "steps": 40, "step_size": 1.0, "probe_size": 64, "variance_eps": 1e-6},
    "forecast": {"timestamp": None},
}

SPLIT_ALIASES = {"distinct-days": "distinct_days", "afternoon": "afternoon_validation"}


class ConfigError(ValueError):
    pass


def derive_seed(seed: int, label: str) -> int:
    """Deterministic sub-seed for one component (split, init, shuffle, noise, synth)."""
    digest = hashlib.sha256(f"{int(seed)}/{label}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _leaf_paths(tree: dict, prefix: str = "") -> list[str]:
    out = []
    for k, v in tree.items():
        path = f"{prefix}{k}"
        if isinstance(v, dict):
            out.extend(_leaf_paths(v, path + "."))
        else:
            out.append(path)
    return out


VALID_KEYS = _leaf_paths(DEFAULTS)


def _unknown(path: str) -> ConfigError:
    leaf = path.rsplit(".", 1)[-1]
    by_leaf = {k.rsplit(".", 1)[-1]: k for k in VALID_KEYS}
    near = difflib.get_close_matches(path, VALID_KEYS, n=1) or [
        by_leaf[m] for m in difflib.get_close_matches(leaf, list(by_leaf), n=1)
    ]
    hint = f"; did you mean '{near[0]}'?" if near else ""
    return ConfigError(f"unknown config key '{path}'{hint} valid keys: {', '.join(VALID_KEYS)}")


def _merge(base: dict, update: dict, prefix: str = "") -> None:
    for k, v in update.items():
        path = f"{prefix}{k}"
        if k not in base:
            raise _unknown(path)
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key '{path}' must be a table")
            _merge(base[k], v, path + ".")
        else:
            base[k] = v


def _set_dotted(tree: dict, path: str, value) -> None:
    if path not in VALID_KEYS:
        raise _unknown(path)
    node = tree
    parts = path.split(".")
    for p in parts[:-1]:
        node = node[p]
    node[parts[-1]] = value


@dataclass
class RunConfig:
    tree: dict

    # typed views, each validated by its module's own constructor
    @property
    def seed(self) -> int:
        return int(self.tree["seed"])

    @property
    def out_dir(self) -> Path:
        return Path(self.tree["out"])

    @property
    def data_root(self) -> Path:
        root = self.tree["dataset"]["root"]
        return Path(root) if root else self.out_dir / "data"

    @property
    def image_size(self) -> int:
        return int(self.tree["dataset"]["image_size"])

    @property
    def site(self) -> Site:
        return Site(**self.tree["site"])

    @property
    def clearsky(self) -> ClearSkyParams:
        cs = self.tree["clearsky"]
        tl = cs["linke_turbidity"]
        return ClearSkyParams(site=self.site, model=cs["model"], linke_turbidity=tuple(tl) if isinstance(tl, list) else tl)

    @property
    def split(self) -> SplitSpec:
        sp = self.tree["split"]
        kind = SPLIT_ALIASES.get(sp["kind"], sp["kind"])
        return SplitSpec(kind=kind, ratio=float(sp["ratio"]), cutoff_hours=parse_cutoff(sp["cutoff"]),
                         seed=derive_seed(self.seed, "split"))

    @property
    def horizon(self) -> int:
        return int(self.tree["network"]["horizon_min"])

    def network_config(self, horizon_min: int | None = None) -> NetworkConfig:
        net = self.tree["network"]
        h = self.horizon if horizon_min is None else horizon_min
        return NetworkConfig(
            horizon_min=h,
            filters_per_conv=net["filters"],
            input_size=self.image_size,
            cnn_dense=list(net["cnn_dense"]),
            ann_widths=list(net["ann_widths"]),
            head_widths=list(net["head_widths"]),
            init_seed=derive_seed(self.seed, "init"),
        )

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.tree["train"], shuffle_seed=derive_seed(self.seed, "shuffle"))

    @property
    def gen_config(self) -> GenConfig:
        s = self.tree["synth"]
        cs = self.tree["clearsky"]
        tl = cs["linke_turbidity"]
        return GenConfig(
            days=int(s["days"]), image_size=self.image_size, start_date=s["start_date"], end_date=s["end_date"],
            regime_weights=list(s["regime_weights"]), wind_speed=list(s["wind_speed"]),
            diffuse_floor=float(s["diffuse_floor"]), lat_deg=self.site.lat_deg, lon_deg=self.site.lon_deg,
            elevation_m=self.site.elevation_m, linke_turbidity=float(tl if not isinstance(tl, list) else tl[0]),
        )

    def echo(self) -> dict:
        """Effective configuration with derived values filled in."""
        tree = copy.deepcopy(self.tree)
        if tree["network"]["filters"] is None:
            tree["network"]["filters"] = default_filters(self.horizon)
        tree["dataset"]["root"] = str(self.data_root)
        tree["derived_seeds"] = {k: derive_seed(self.seed, k) for k in ("split", "init", "shuffle", "noise", "synth")}
        return tree

    def write_echo(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / "config.echo.json"
        path.write_text(json.dumps(self.echo(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def validate(self) -> None:
        checks = {
            "site": lambda: self.site,
            "clearsky": lambda: self.clearsky,
            "split": lambda: self.split,
            "network": self.network_config,
            "train": lambda: self.train_config,
            "synth": lambda: self.gen_config,
        }
        for name, check in checks.items():
            try:
                check()
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"invalid '{name}' settings: {exc}") from None
        horizons = self.tree["sweep"]["horizons"]
        if not horizons or any(h % 2 or not 2 <= h <= 20 for h in horizons):
            raise ConfigError("invalid 'sweep.horizons': must be even minutes in [2, 20]")
        if self.image_size < 1:
            raise ConfigError("invalid 'dataset.image_size': must be positive")


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults, an optional JSON file and dotted-key overrides, then validate."""
    tree = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        _merge(tree, data)
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(tree, key, value)
    if tree["out"] is None:
        tree["out"] = os.environ.get("SKYCAST_OUT", "skycast_runs")
    cfg = RunConfig(tree)
    cfg.validate()
    return cfg
