"""Model scoring against smart persistence and the multi-horizon sweep."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .clearsky import CLEAR_SKY_FLOOR, ClearSkyParams, smart_persistence_batch
from .dataset import GHI_SCALE, SplitSpec, build_sample_set, make_split
from .model import NetworkConfig, build_network, predict_samples
from .training import TrainConfig, train_model

log = logging.getLogger(__name__)

REPORT_HEADER = ["horizon_min", "split", "n", "mse_model", "mse_persistence", "skill", "seed"]
DEFAULT_HORIZONS = list(range(2, 21, 2))


class UndefinedSkillError(ZeroDivisionError):
    pass


@dataclass
class EvaluationReport:
    horizon_min: int
    split: str
    n_samples: int
    mse_model: float  # (W/m2)^2
    mse_persistence: float
    forecast_skill: float
    seed: int = 0
    predictions_wm2: np.ndarray | None = field(default=None, repr=False)
    persistence_wm2: np.ndarray | None = field(default=None, repr=False)
    targets_wm2: np.ndarray | None = field(default=None, repr=False)
    error: str | None = None

    def csv_row(self) -> list[str]:
        return [
            str(self.horizon_min), self.split, str(self.n_samples), f"{self.mse_model:.6f}",
            f"{self.mse_persistence:.6f}", f"{self.forecast_skill:.6f}", str(self.seed),
        ]


def forecast_skill(mse_model: float, mse_persistence: float) -> float:
    if not mse_persistence > 0:
        raise UndefinedSkillError(f"skill undefined for persistence MSE {mse_persistence}")
    return 1.0 - mse_model / mse_persistence


def score_predictions(pred_wm2, samples, split: str = "", seed: int = 0) -> EvaluationReport:
    """Paired MSE of predictions and smart persistence on the floor-passing samples."""
    pred = np.asarray(pred_wm2, dtype=np.float64)
    keep = np.asarray(samples.clear_t) >= CLEAR_SKY_FLOOR
    if not keep.any():
        raise ValueError("no samples left after the clear-sky floor")
    target = samples.target.astype(np.float64)[keep] * GHI_SCALE
    pers = smart_persistence_batch(
        np.asarray(samples.ghi_wm2)[keep], np.asarray(samples.clear_t)[keep], np.asarray(samples.clear_t_plus_h)[keep]
    )
    pred = pred[keep]
    mse_m = float(np.mean((pred - target) ** 2))
    mse_p = float(np.mean((pers - target) ** 2))
    return EvaluationReport(
        horizon_min=samples.horizon_min, split=split, n_samples=int(keep.sum()), mse_model=mse_m,
        mse_persistence=mse_p, forecast_skill=forecast_skill(mse_m, mse_p), seed=seed,
        predictions_wm2=pred, persistence_wm2=pers, targets_wm2=target,
    )


def evaluate_model(network, val_set, split: str = "", seed: int = 0) -> EvaluationReport:
    pred = predict_samples(network, val_set).astype(np.float64) * GHI_SCALE
    return score_predictions(pred, val_set, split, seed)


def write_report_csv(reports, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in reports:
        w.writerow(r.csv_row())
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_report_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def plot_skill(reports, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ok = [r for r in reports if r.error is None]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot([r.horizon_min for r in ok], [r.forecast_skill for r in ok], "o-")
    ax.axhline(0.0, color="grey", lw=0.8)
    ax.set_xlabel("forecast horizon (min)")
    ax.set_ylabel("forecast skill (MSE)")
    ax.set_xticks(DEFAULT_HORIZONS)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def run_horizon(index, horizon_min: int, split: SplitSpec, net_cfg: NetworkConfig, train_cfg: TrainConfig,
                clearsky: ClearSkyParams | None = None, frames=None):
    """Train a fresh network for one horizon and score it. Returns (report, network, history)."""
    size = net_cfg.input_size
    samples = build_sample_set(index, horizon_min, clearsky, size=size, frames=frames)
    train_idx, val_idx = make_split(samples, split)
    train_set, val_set = samples.subset(train_idx), samples.subset(val_idx)
    net = build_network(net_cfg)
    net, hist = train_model(net, train_set, val_set, train_cfg)
    report = evaluate_model(net, val_set, split.kind, split.seed)
    return report, net, hist


def horizon_sweep(index, horizons=None, split: SplitSpec | None = None, base_config: NetworkConfig | None = None,
                  train_config: TrainConfig | None = None, clearsky: ClearSkyParams | None = None,
                  out_dir=None, frames=None, filters: int | None = None) -> list[EvaluationReport]:
    """One independently trained model per horizon; failures are recorded, not raised.

    The filter count follows the per-horizon default (16 up to 4 min, else 32)
    unless ``filters`` pins it for every horizon.
    """
    horizons = list(DEFAULT_HORIZONS if horizons is None else horizons)
    for h in horizons:
        if h % 2 or not 2 <= h <= 20:
            raise ValueError(f"horizon {h} not in 2, 4, ..., 20")
    split = split or SplitSpec()
    base_config = base_config or NetworkConfig()
    train_config = train_config or TrainConfig()

    reports = []
    for h in horizons:
        cfg = replace(base_config, horizon_min=h, filters_per_conv=filters)
        try:
            report, _, _ = run_horizon(index, h, split, cfg, train_config, clearsky, frames)
        except Exception as exc:  # noqa: BLE001 - one failing leg must not abort the sweep
            log.error("horizon %d failed: %s", h, exc)
            report = EvaluationReport(h, split.kind, 0, math.nan, math.nan, math.nan, split.seed,
                                      error=f"{type(exc).__name__}: {exc}")
        reports.append(report)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_report_csv(reports, out_dir / "sweep_report.csv")
        plot_skill(reports, out_dir / "skill_vs_horizon.png")
    return reports
