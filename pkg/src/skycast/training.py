"""Supervised MSE training with early stopping, plus the checkpoint format.

Checkpoint layout (little-endian)::

    b"SKYCNN01"
    uint32  length of the JSON block in bytes
    JSON    {"network": NetworkConfig, "train": TrainConfig | null, "shapes": [...]}
    float32 parameter buffers, declaration order, row-major
"""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .model import Network, NetworkConfig, build_network, predict_samples

log = logging.getLogger(__name__)

MAGIC = b"SKYCNN01"


class CheckpointFormatError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    """Loss became non-finite; ``network`` holds the last good parameters."""

    def __init__(self, message: str, network: Network, history: "TrainHistory"):
        super().__init__(message)
        self.network = network
        self.history = history


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_patience: int = 10
    shuffle_seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        for name in ("batch_size", "max_epochs", "early_stop_patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.early_stop_patience > self.max_epochs:
            raise ValueError("early_stop_patience must not exceed max_epochs")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainHistory:
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    initial_train_mse: float = math.nan
    best_epoch: int = -1
    wall_time_s: float = 0.0

    @property
    def best_val_mse(self) -> float:
        return self.val_mse[self.best_epoch] if self.val_mse else math.nan


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Shuffle keyed by (seed, epoch), so any epoch's order is reproducible on its own."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def sample_mse(network: Network, samples) -> float:
    pred = predict_samples(network, samples).astype(np.float64)
    return float(np.mean((pred - samples.target.astype(np.float64)) ** 2))


def _snapshot(network: Network) -> list[np.ndarray]:
    return [p.data.copy() for p in network.parameters()]


def _restore(network: Network, snap: list[np.ndarray]) -> None:
    for p, s in zip(network.parameters(), snap):
        p.data[...] = s


def train_model(network: Network, train_set, val_set, config: TrainConfig | None = None,
                callback=None) -> tuple[Network, TrainHistory]:
    """Minimize plain MSE on normalized targets; restores the best-validation epoch."""
    config = config or TrainConfig()
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if train_set.horizon_min != val_set.horizon_min or train_set.horizon_min != network.config.horizon_min:
        raise ValueError("horizon mismatch between network and sample sets")

    params = network.parameters()
    adam = T.AdamState(learning_rate=config.learning_rate)
    history = TrainHistory(initial_train_mse=sample_mse(network, train_set))
    best = _snapshot(network)
    best_val = math.inf
    stale = 0
    t0 = time.perf_counter()

    for epoch in range(config.max_epochs):
        order = epoch_order(len(train_set), config.shuffle_seed, epoch)
        total, count = 0.0, 0
        for s in range(0, len(order), config.batch_size):
            idx = order[s : s + config.batch_size]
            img, meta, target = train_set.batch(idx)
            for p in params:
                p.zero_grad()
            loss = T.mse(network(img, meta), T.Tensor(target))
            lv = float(loss.data)
            if not math.isfinite(lv):
                _restore(network, best)
                raise TrainingDiverged(f"loss became {lv} in epoch {epoch}", network, history)
            loss.backward()
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            if config.optimizer == "adam":
                T.adam_step(params, grads, adam)
            else:
                T.sgd_step(params, grads, config.learning_rate)
            total += lv * len(idx)
            count += len(idx)

        history.train_mse.append(total / count)
        val = sample_mse(network, val_set)
        history.val_mse.append(val)
        if not math.isfinite(val):
            _restore(network, best)
            raise TrainingDiverged(f"validation MSE became {val} in epoch {epoch}", network, history)
        if val < best_val:
            best_val, best, stale = val, _snapshot(network), 0
            history.best_epoch = epoch
        else:
            stale += 1
        log.info("epoch %d train %.6f val %.6f", epoch, history.train_mse[-1], val)
        if callback is not None:
            callback(epoch, history)
        if stale >= config.early_stop_patience:
            break

    _restore(network, best)
    history.wall_time_s = time.perf_counter() - t0
    return network, history


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(network: Network, path, train_config: TrainConfig | None = None) -> None:
    params = network.parameters()
    header = {
        "network": network.config.to_dict(),
        "train": asdict(train_config) if train_config is not None else None,
        "shapes": {name: list(p.shape) for name, p in network.params.items()},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[Network, TrainConfig | None]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {data[:8]!r}")
    pos = len(MAGIC)
    if len(data) < pos + 4:
        raise CheckpointFormatError(f"{path}: truncated header")
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    try:
        header = json.loads(data[pos : pos + n].decode("utf-8"))
        config = NetworkConfig(**header["network"])
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header ({exc})") from None
    pos += n

    network = build_network(config)
    for name, p in network.params.items():
        if list(p.shape) != header["shapes"].get(name):
            raise CheckpointFormatError(f"{path}: shape mismatch for {name}")
        nbytes = p.size * 4
        if len(data) < pos + nbytes:
            raise CheckpointFormatError(f"{path}: truncated parameter data at {name}")
        p.data[...] = np.frombuffer(data, dtype="<f4", count=p.size, offset=pos).reshape(p.shape)
        pos += nbytes
    if pos != len(data):
        raise CheckpointFormatError(f"{path}: {len(data) - pos} trailing bytes")
    train = TrainConfig(**header["train"]) if header.get("train") else None
    return network, train
