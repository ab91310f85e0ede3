"""Looking inside a trained network: activation maps, dead filters, filter ascent."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import tensor as T
from .model import Network


class LayerError(ValueError):
    pass


@dataclass
class ActivationGrid:
    layer: int
    maps: np.ndarray  # (F, H, W) float activations for the first probe image
    variance: np.ndarray  # (F,) per-filter variance over the probe batch

    @property
    def maps_uint8(self) -> np.ndarray:
        return np.stack([normalize_uint8(m) for m in self.maps])


@dataclass
class FilterImage:
    layer: int
    filter_index: int
    image: np.ndarray  # model input shape (C, S, S), values in [0, 1]
    initial_loss: float
    final_loss: float
    steps: int
    degenerate: bool = False


@dataclass
class DeadFilterReport:
    layer: int
    variance: np.ndarray
    dead: np.ndarray

    @property
    def fraction_dead(self) -> float:
        return float(self.dead.mean())


def normalize_uint8(a: np.ndarray) -> np.ndarray:
    """Per-map min-max scaling to 0..255; constant maps become all zero."""
    a = np.asarray(a, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if hi - lo <= 0:
        return np.zeros(a.shape, dtype=np.uint8)
    return np.round((a - lo) / (hi - lo) * 255).astype(np.uint8)


def tile(maps: np.ndarray, cols: int | None = None, pad: int = 1) -> np.ndarray:
    n, h, w = maps.shape
    cols = cols or int(math.ceil(math.sqrt(n)))
    rows = int(math.ceil(n / cols))
    out = np.zeros((rows * (h + pad) - pad, cols * (w + pad) - pad), dtype=maps.dtype)
    for k in range(n):
        r, c = divmod(k, cols)
        out[r * (h + pad) : r * (h + pad) + h, c * (w + pad) : c * (w + pad) + w] = maps[k]
    return out


def _check_layer(network: Network, layer: int) -> None:
    if not 0 <= layer < len(network.convs):
        raise LayerError(f"layer {layer} is not a convolutional layer (0..{len(network.convs) - 1})")


def layer_activations(network: Network, images: np.ndarray, layer: int) -> np.ndarray:
    """Post-activation output of conv layer ``layer`` for a batch, (N, F, H, W)."""
    _check_layer(network, layer)
    with T.no_grad():
        return network.conv_features(T.Tensor(images), stop_at=layer)[layer].data


def activation_maps(network: Network, images: np.ndarray, layer: int) -> ActivationGrid:
    """``images`` is one (C, S, S) stack or a (N, C, S, S) probe batch."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    acts = layer_activations(network, images, layer)
    return ActivationGrid(layer=layer, maps=acts[0], variance=_filter_variance(acts))


def _filter_variance(acts: np.ndarray) -> np.ndarray:
    # over batch and space, per filter
    a = acts.astype(np.float64).transpose(1, 0, 2, 3).reshape(acts.shape[1], -1)
    return a.var(axis=1)


def dead_filter_report(network: Network, probe: np.ndarray, layer: int, variance_eps: float = 1e-6) -> DeadFilterReport:
    probe = np.asarray(probe, dtype=np.float32)
    if len(probe) == 0:
        raise ValueError("probe batch is empty")
    var = _filter_variance(layer_activations(network, probe, layer))
    return DeadFilterReport(layer=layer, variance=var, dead=var < variance_eps)


def filter_visualization(network: Network, layer: int, filter_index: int, steps: int = 40,
                         step_size: float = 1.0, seed: int = 0) -> FilterImage:
    """Gradient ascent on the input pixels to maximize one filter's mean activation.

    Starts from uniform noise in [0.45, 0.55]; each step moves by
    ``step_size * g / (rms(g) + 1e-8)`` and clamps to [0, 1]. Metadata does
    not enter: the conv trunk depends on pixels only.
    """
    _check_layer(network, layer)
    c = network.config
    n_filters = network.convs[layer].out_ch
    if not 0 <= filter_index < n_filters:
        raise LayerError(f"filter {filter_index} out of range for layer {layer} ({n_filters} filters)")
    rng = np.random.default_rng(seed)
    img = rng.uniform(0.45, 0.55, size=(1, c.image_channels, c.input_size, c.input_size)).astype(np.float32)
    initial = img.copy()

    def objective(x: np.ndarray, with_grad: bool):
        xt = T.Tensor(x, requires_grad=with_grad)
        out = network.conv_features(xt, stop_at=layer)[layer]
        loss = T.mean(T.select_channel(out, filter_index))
        if with_grad:
            T.backward(loss)
            return float(loss.data), xt.grad
        return float(loss.data), None

    first_loss = None
    degenerate = True
    for _ in range(steps):
        loss, g = objective(img, True)
        if first_loss is None:
            first_loss = loss
        if g is None or not np.any(g):
            continue
        degenerate = False
        rms = float(np.sqrt(np.mean(np.square(g, dtype=np.float64))))
        img = np.clip(img + step_size * g / (rms + 1e-8), 0.0, 1.0).astype(np.float32)
    for p in network.parameters():
        p.zero_grad()
    if first_loss is None:
        first_loss = objective(img, False)[0]
    if degenerate:
        img = initial
    with T.no_grad():
        final_loss, _ = objective(img, False)
    return FilterImage(layer=layer, filter_index=filter_index, image=img[0], initial_loss=first_loss,
                       final_loss=final_loss, steps=steps, degenerate=degenerate)


# --------------------------------------------------------------------------
# export


def save_activation_grid(grid: ActivationGrid, out_dir) -> Path:
    path = Path(out_dir) / f"activations_L{grid.layer}.png"
    Image.fromarray(tile(grid.maps_uint8)).save(path)
    return path


def save_filter_image(fi: FilterImage, out_dir) -> Path:
    """2x2 grid, one tile per input channel."""
    path = Path(out_dir) / f"filter_L{fi.layer}_F{fi.filter_index}.png"
    tiles = np.round(np.clip(fi.image, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(tile(tiles, cols=2, pad=2)).save(path)
    return path


def write_dead_filter_csv(reports, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "filter", "variance", "dead"])
        for rep in reports:
            for k, (v, d) in enumerate(zip(rep.variance, rep.dead)):
                w.writerow([rep.layer, k, f"{v:.6g}", int(d)])
