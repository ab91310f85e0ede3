"""``skycast`` command-line entry point.

Errors are reported on stderr as one line ``ERROR <category> <message>``
with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import dataset as ds
from .config import ConfigError, RunConfig, derive_seed, load_config
from .evaluation import evaluate_model, horizon_sweep, write_report_csv
from .introspection import (
    activation_maps,
    dead_filter_report,
    filter_visualization,
    save_activation_grid,
    save_filter_image,
    write_dead_filter_csv,
)
from .model import ConfigError as NetworkConfigError
from .model import build_network, predict_samples
from .synth import synth_generate
from .training import CheckpointFormatError, TrainingDiverged, load_checkpoint, save_checkpoint, train_model

log = logging.getLogger("skycast")

VERBS = ("synth", "train", "eval", "sweep", "visualize", "forecast")
CHECKPOINT = "model.skycnn"


class CommandError(Exception):
    def __init__(self, category: str, message: str, code: int = 1):
        super().__init__(message)
        self.category = category
        self.code = code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skycast", description="Sky-image irradiance forecasting experiments.")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", help="run output directory (default $SKYCAST_OUT or ./skycast_runs)")
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=int, help="forecast horizon in minutes")
    p.add_argument("--split", choices=["distinct-days", "afternoon"])
    p.add_argument("--cutoff", help="afternoon cutoff, local solar time HH:MM")
    p.add_argument("--filters", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--timestamp", help="forecast: UTC time of the sample (default: latest usable)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def overrides_from_args(args) -> dict:
    return {
        "out": args.out,
        "seed": args.seed,
        "network.horizon_min": args.horizon,
        "split.kind": args.split,
        "split.cutoff": args.cutoff,
        "network.filters": args.filters,
        "train.learning_rate": args.lr,
        "train.max_epochs": args.epochs,
        "forecast.timestamp": args.timestamp,
    }


# --------------------------------------------------------------------------
# verbs


def _index(cfg: RunConfig):
    try:
        return ds.ingest_directory(cfg.data_root)
    except ds.IngestError as exc:
        raise CommandError("ingest", str(exc), 3) from None


def _samples(cfg: RunConfig, index=None, horizon=None):
    index = index if index is not None else _index(cfg)
    try:
        samples = ds.build_sample_set(index, horizon or cfg.horizon, cfg.clearsky, size=cfg.image_size)
        train_idx, val_idx = ds.make_split(samples, cfg.split)
    except ds.DecodeError as exc:
        raise CommandError("decode", str(exc), 3) from None
    except ds.SplitError as exc:
        raise CommandError("split", str(exc), 3) from None
    except ValueError as exc:
        raise CommandError("dataset", str(exc), 3) from None
    return samples, samples.subset(train_idx), samples.subset(val_idx)


def _load(cfg: RunConfig):
    path = cfg.out_dir / CHECKPOINT
    if not path.is_file():
        raise CommandError("checkpoint-missing", f"no checkpoint at {path}; run 'skycast train' first", 4)
    try:
        return load_checkpoint(path)[0]
    except CheckpointFormatError as exc:
        raise CommandError("checkpoint-format", str(exc), 4) from None


def cmd_synth(cfg: RunConfig) -> None:
    manifest = synth_generate(cfg.gen_config, derive_seed(cfg.seed, "synth"), cfg.data_root)
    regimes = [d["regime"] for d in manifest["days"]]
    print(f"wrote {manifest['n_stamps']} stamps over {len(regimes)} days to {cfg.data_root}")


def cmd_train(cfg: RunConfig) -> None:
    _, train_set, val_set = _samples(cfg)
    net = build_network(cfg.network_config())
    tc = cfg.train_config
    try:
        net, hist = train_model(net, train_set, val_set, tc)
    except TrainingDiverged as exc:
        save_checkpoint(exc.network, cfg.out_dir / CHECKPOINT, tc)
        raise CommandError("training-diverged", str(exc), 5) from None
    save_checkpoint(net, cfg.out_dir / CHECKPOINT, tc)
    history = {
        "initial_train_mse": hist.initial_train_mse,
        "train_mse": hist.train_mse,
        "val_mse": hist.val_mse,
        "best_epoch": hist.best_epoch,
        "n_train": len(train_set),
        "n_val": len(val_set),
    }
    (cfg.out_dir / "history.json").write_text(json.dumps(history, indent=1) + "\n", encoding="utf-8")
    print(f"best epoch {hist.best_epoch}: val MSE {hist.best_val_mse:.6f} (normalized); "
          f"checkpoint {cfg.out_dir / CHECKPOINT}")


def cmd_eval(cfg: RunConfig) -> None:
    net = _load(cfg)
    _, _, val_set = _samples(cfg, horizon=net.config.horizon_min)
    report = evaluate_model(net, val_set, cfg.split.kind, cfg.seed)
    write_report_csv([report], cfg.out_dir / "report.csv")
    print(f"horizon {report.horizon_min} min, n={report.n_samples}: skill {report.forecast_skill:.4f} "
          f"(MSE model {report.mse_model:.1f}, persistence {report.mse_persistence:.1f} W2/m4)")


def cmd_sweep(cfg: RunConfig) -> None:
    index = _index(cfg)
    frames = ds.load_frames(index, cfg.image_size)
    reports = horizon_sweep(
        index, cfg.tree["sweep"]["horizons"], cfg.split, cfg.network_config(), cfg.train_config,
        cfg.clearsky, out_dir=cfg.out_dir, frames=frames, filters=cfg.tree["network"]["filters"],
    )
    for r in reports:
        status = f"skill {r.forecast_skill:.4f}" if r.error is None else f"failed: {r.error}"
        print(f"horizon {r.horizon_min:2d} min: {status}")


def cmd_visualize(cfg: RunConfig) -> None:
    net = _load(cfg)
    _, _, val_set = _samples(cfg, horizon=net.config.horizon_min)
    vz = cfg.tree["visualize"]
    probe_idx = np.linspace(0, len(val_set) - 1, min(int(vz["probe_size"]), len(val_set))).astype(int)
    probe = val_set.images(probe_idx)
    noise_seed = derive_seed(cfg.seed, "noise")
    reports = []
    for layer in vz["layers"]:
        grid = activation_maps(net, probe, layer)
        save_activation_grid(grid, cfg.out_dir)
        rep = dead_filter_report(net, probe, layer, vz["variance_eps"])
        reports.append(rep)
        for k in range(net.convs[layer].out_ch):
            fi = filter_visualization(net, layer, k, steps=vz["steps"], step_size=vz["step_size"], seed=noise_seed)
            save_filter_image(fi, cfg.out_dir)
        print(f"layer {layer}: {rep.dead.sum()} of {len(rep.dead)} filters dead")
    write_dead_filter_csv(reports, cfg.out_dir / "dead_filters.csv")


def cmd_forecast(cfg: RunConfig) -> None:
    net = _load(cfg)
    index = _index(cfg)
    h = net.config.horizon_min
    stamp = cfg.tree["forecast"]["timestamp"]
    if stamp:
        candidates = [ds.parse_timestamp(stamp)]
    else:
        candidates = [index.timestamps[i] for i in np.flatnonzero(index.complete)[::-1]]
    sample = None
    last_reason = "no complete entries"
    for t in candidates:
        try:
            sample = ds.assemble_sample(index, t, h, cfg.clearsky, size=cfg.image_size)
            break
        except ds.SampleSkipped as exc:
            last_reason = str(exc)
    if sample is None:
        raise CommandError("sample-skipped", f"no usable sample: {last_reason}", 3)
    pred = float(predict_samples(net, _OneSample(sample))[0]) * ds.GHI_SCALE
    print(f"{sample.timestamp:%Y-%m-%dT%H:%M:%SZ} +{h} min: {pred:.1f} W/m2")


class _OneSample:
    """Adapter so a single SkySample can go through predict_samples."""

    def __init__(self, s: ds.SkySample):
        self._s = s

    def __len__(self) -> int:
        return 1

    def batch(self, idx):
        s = self._s
        return s.image_stack[None].astype(np.float32), s.metadata[None].astype(np.float32), np.array([[s.target]])


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "visualize": cmd_visualize,
    "forecast": cmd_forecast,
}


def run_command(verb: str, cfg: RunConfig) -> int:
    try:
        cfg.write_echo()
        COMMANDS[verb](cfg)
    except CommandError as exc:
        print(f"ERROR {exc.category} {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, NetworkConfigError) as exc:
        print(f"ERROR config {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"ERROR io {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, overrides_from_args(args))
    except ConfigError as exc:
        print(f"ERROR config {exc}", file=sys.stderr)
        return 2
    return run_command(args.verb, cfg)


if __name__ == "__main__":
    sys.exit(main())
