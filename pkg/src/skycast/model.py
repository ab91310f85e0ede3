"""Dual-branch irradiance network.

CNN branch over the 4-channel image stack::

    stem conv (stride 2)
    5 x [downsample conv (stride 2) -> residual block (two stride-1 convs + identity)]
    flatten -> dense 512 -> dense 64

ANN branch over the 8-value metadata vector::

    h1 = relu(dense 16);  out = relu(dense16(h1) + h1)

Head: concat(64 + 16) -> dense 64 -> dense 32 -> dense 1 (linear).
All hidden layers use ReLU.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

N_STAGES = 5


class ConfigError(ValueError):
    pass


class ActivationError(FloatingPointError):
    pass


def default_filters(horizon_min: int) -> int:
    return 16 if horizon_min <= 4 else 32


@dataclass
class NetworkConfig:
    horizon_min: int = 10
    filters_per_conv: int | None = None  # None -> 16 for horizons <= 4 min, else 32
    input_size: int = 150
    image_channels: int = 4
    metadata_dim: int = 8
    cnn_dense: list[int] = field(default_factory=lambda: [512, 64])
    ann_widths: list[int] = field(default_factory=lambda: [16, 16])
    head_widths: list[int] = field(default_factory=lambda: [64, 32])
    init_seed: int = 0

    def __post_init__(self):
        if self.filters_per_conv is None:
            self.filters_per_conv = default_filters(self.horizon_min)
        if self.filters_per_conv <= 0:
            raise ConfigError("filters_per_conv must be positive")
        if len(self.ann_widths) != 2 or self.ann_widths[0] != self.ann_widths[1]:
            raise ConfigError("ann_widths must be two equal widths (the residual skip adds them)")
        if len(self.cnn_dense) < 1 or len(self.head_widths) < 1:
            raise ConfigError("cnn_dense and head_widths need at least one layer")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ConvSpec:
    name: str
    stride: int
    in_ch: int
    out_ch: int
    role: str  # stem | down | res_a | res_b


def conv_layout(cfg: NetworkConfig) -> list[ConvSpec]:
    f = cfg.filters_per_conv
    specs = [ConvSpec("conv0", 2, cfg.image_channels, f, "stem")]
    for s in range(1, N_STAGES + 1):
        specs.append(ConvSpec(f"stage{s}.down", 2, f, f, "down"))
        specs.append(ConvSpec(f"stage{s}.res_a", 1, f, f, "res_a"))
        specs.append(ConvSpec(f"stage{s}.res_b", 1, f, f, "res_b"))
    return specs


def receptive_field(strides, kernel: int = 3) -> int:
    rf, jump = 1, 1
    for s in strides:
        rf += (kernel - 1) * jump
        jump *= s
    return rf


def spatial_trace(input_size: int, strides) -> list[int]:
    sizes = [input_size]
    for s in strides:
        sizes.append(-(-sizes[-1] // s))
    return sizes


class Network:
    """Parameters live in ``self.params`` in declaration order (also the checkpoint order)."""

    def __init__(self, config: NetworkConfig, params: dict[str, Tensor], branches: dict[str, str]):
        self.config = config
        self.params = params
        self.branches = branches
        self.convs = conv_layout(config)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    @property
    def flat_size(self) -> int:
        side = spatial_trace(self.config.input_size, [c.stride for c in self.convs])[-1]
        return side * side * self.config.filters_per_conv

    def astype(self, dtype) -> "Network":
        params = {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad, dtype=dtype)
                  for k, v in self.params.items()}
        return Network(self.config, params, dict(self.branches))

    def copy(self) -> "Network":
        return self.astype(next(iter(self.params.values())).data.dtype)

    def _conv(self, x: Tensor, spec: ConvSpec) -> Tensor:
        return T.conv2d(x, self.params[f"{spec.name}.w"], self.params[f"{spec.name}.b"], spec.stride)

    def _dense(self, x: Tensor, name: str) -> Tensor:
        return T.dense(x, self.params[f"{name}.w"], self.params[f"{name}.b"])

    def _checked(self, x: Tensor, layer: str) -> Tensor:
        if not np.all(np.isfinite(x.data)):
            raise ActivationError(f"non-finite activation after layer {layer}")
        return x

    def conv_features(self, images: Tensor, stop_at: int | None = None) -> list[Tensor]:
        """Post-activation outputs of conv layers, in order, up to ``stop_at`` inclusive.

        For the second conv of a residual block the output is
        relu(conv + skip), i.e. the block output.
        """
        outs: list[Tensor] = []
        x = images
        skip = None
        for i, spec in enumerate(self.convs):
            y = self._conv(x, spec)
            if spec.role == "res_a":
                skip = x
            if spec.role == "res_b":
                y = T.add(y, skip)
            x = self._checked(T.relu(y), spec.name)
            outs.append(x)
            if stop_at is not None and i >= stop_at:
                break
        return outs

    def forward(self, images, metadata) -> Tensor:
        images = images if isinstance(images, Tensor) else Tensor(images)
        metadata = metadata if isinstance(metadata, Tensor) else Tensor(metadata)
        c = self.config
        if images.data.ndim != 4 or images.shape[1:] != (c.image_channels, c.input_size, c.input_size):
            raise T.ShapeError(
                f"images shape {images.shape} does not match (N, {c.image_channels}, {c.input_size}, {c.input_size})"
            )

        x = T.flatten(self.conv_features(images)[-1])
        for i in range(len(c.cnn_dense)):
            x = self._checked(T.relu(self._dense(x, f"cnn_fc{i}")), f"cnn_fc{i}")

        h1 = T.relu(self._dense(metadata, "ann_fc0"))
        h2 = self._dense(h1, "ann_fc1")
        a = self._checked(T.relu(T.add(h2, h1)), "ann_fc1")

        z = T.concat(x, a, axis=1)
        for i in range(len(c.head_widths)):
            z = self._checked(T.relu(self._dense(z, f"head_fc{i}")), f"head_fc{i}")
        return self._checked(self._dense(z, "out"), "out")

    __call__ = forward


def receptive_field_check(network_or_config) -> int:
    """Receptive field (pixels) of the last conv layer."""
    cfg = network_or_config.config if isinstance(network_or_config, Network) else network_or_config
    return receptive_field([c.stride for c in conv_layout(cfg)])


def _validate_geometry(cfg: NetworkConfig) -> None:
    specs = conv_layout(cfg)
    sizes = spatial_trace(cfg.input_size, [c.stride for c in specs])
    for spec, size_in in zip(specs, sizes):
        if spec.role == "down" and size_in <= 1:
            raise ConfigError(
                f"input_size {cfg.input_size}: {spec.name} would downsample a 1x1 map; "
                "deeper stages degenerate before the trunk is complete"
            )
    rf = receptive_field_check(cfg)
    if rf < cfg.input_size:
        raise ConfigError(f"receptive field {rf} px does not cover input_size {cfg.input_size} px")


def build_network(config: NetworkConfig) -> Network:
    """He-normal weights drawn in declaration order from ``init_seed``; zero biases."""
    _validate_geometry(config)
    rng = np.random.default_rng(config.init_seed)
    params: dict[str, Tensor] = {}
    branches: dict[str, str] = {}

    def add_param(name, shape, fan_in, branch):
        w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        params[f"{name}.w"] = Tensor(w, requires_grad=True)
        params[f"{name}.b"] = Tensor(np.zeros(shape[0]), requires_grad=True)
        branches[name] = branch

    for spec in conv_layout(config):
        add_param(spec.name, (spec.out_ch, spec.in_ch, 3, 3), spec.in_ch * 9, "cnn")

    side = spatial_trace(config.input_size, [c.stride for c in conv_layout(config)])[-1]
    width = side * side * config.filters_per_conv
    for i, n in enumerate(config.cnn_dense):
        add_param(f"cnn_fc{i}", (n, width), width, "cnn")
        width = n
    cnn_out = width

    width = config.metadata_dim
    for i, n in enumerate(config.ann_widths):
        add_param(f"ann_fc{i}", (n, width), width, "ann")
        width = n
    ann_out = width

    width = cnn_out + ann_out
    for i, n in enumerate(config.head_widths):
        add_param(f"head_fc{i}", (n, width), width, "head")
        width = n
    add_param("out", (1, width), width, "head")
    return Network(config, params, branches)


def forward_batch(network: Network, images: np.ndarray, metadata: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Inference without graph recording; returns (N, 1) normalized predictions."""
    outs = []
    with T.no_grad():
        for s in range(0, len(images), batch_size):
            outs.append(network.forward(images[s : s + batch_size], metadata[s : s + batch_size]).data)
    if not outs:
        return np.zeros((0, 1), dtype=np.float32)
    return np.concatenate(outs)


def predict_samples(network: Network, samples, batch_size: int = 256) -> np.ndarray:
    """Normalized predictions for every sample of a SampleSet, shape (N,)."""
    outs = []
    with T.no_grad():
        for s in range(0, len(samples), batch_size):
            idx = np.arange(s, min(s + batch_size, len(samples)))
            img, meta, _ = samples.batch(idx)
            outs.append(network.forward(img, meta).data[:, 0])
    return np.concatenate(outs) if outs else np.zeros(0, dtype=np.float32)
