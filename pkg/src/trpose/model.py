"""Relative pose regressor.

A convolutional stack over the 12-channel stacked input (two RGB stereo
pairs), a spatial pyramid pooling layer producing a fixed-length vector
independent of input size, and a fully connected head ending in a linear
3-output layer for (x, y, theta).  The loss is the weighted quadratic
0.5 * (xi - xi_hat)^T W (xi - xi_hat).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import torch
from torch import nn

from .geometry import DEFAULT_WEIGHTS, LossWeights

INPUT_CHANNELS = 12
OUTPUT_DIM = 3

CHECKPOINT_FORMAT = "trpose-checkpoint-v1"


@dataclass(frozen=True)
class ConvStage:
    """One conv stage: conv + ReLU, optionally followed by 3x3 stride-2 max
    pooling.  padding defaults to kernel // 2."""

    kernel: int
    stride: int
    in_channels: int
    out_channels: int
    pool: bool = False
    padding: int | None = None

    def pad(self) -> int:
        return self.kernel // 2 if self.padding is None else self.padding

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1:
            raise ValueError("kernel and stride must be >= 1")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if self.padding is not None and self.padding < 0:
            raise ValueError("padding must be >= 0")


def _conv_out(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


_POOL_KERNEL = 3
_POOL_STRIDE = 2


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture description; all sizes are resolved up front so shape
    errors surface at configuration time, not mid-forward."""

    input_height: int
    input_width: int
    conv_spec: tuple[ConvStage, ...]
    spp_bins: tuple[int, ...] = (5, 3, 2, 1)
    fc_widths: tuple[int, ...] = (4096, 4096)
    input_channels: int = INPUT_CHANNELS
    output_dim: int = OUTPUT_DIM

    def __post_init__(self):
        if self.input_channels != INPUT_CHANNELS:
            raise ValueError(
                f"input_channels must be {INPUT_CHANNELS} (two RGB stereo pairs), "
                f"got {self.input_channels}")
        if self.output_dim != OUTPUT_DIM:
            raise ValueError(f"output_dim must be {OUTPUT_DIM}, got {self.output_dim}")
        if not self.spp_bins or any(b < 1 for b in self.spp_bins):
            raise ValueError("spp_bins must be nonempty with every bin >= 1")
        if not self.conv_spec:
            raise ValueError("conv_spec must contain at least one stage")
        if self.conv_spec[0].in_channels != self.input_channels:
            raise ValueError(
                f"first conv stage expects {self.conv_spec[0].in_channels} channels, "
                f"input has {self.input_channels}")
        for a, b in zip(self.conv_spec, self.conv_spec[1:]):
            if a.out_channels != b.in_channels:
                raise ValueError(
                    f"conv stage channel mismatch: {a.out_channels} -> {b.in_channels}")
        c, h, w = self.feature_map_size()
        need = max(self.spp_bins)
        if h < need or w < need:
            raise ValueError(
                f"final feature map {h}x{w} is smaller than the largest "
                f"pyramid grid {need}x{need}")

    def feature_map_size(self) -> tuple[int, int, int]:
        """(channels, height, width) of the conv stack's output."""
        h, w = self.input_height, self.input_width
        for st in self.conv_spec:
            h = _conv_out(h, st.kernel, st.stride, st.pad())
            w = _conv_out(w, st.kernel, st.stride, st.pad())
            if st.pool:
                h = _conv_out(h, _POOL_KERNEL, _POOL_STRIDE, 0)
                w = _conv_out(w, _POOL_KERNEL, _POOL_STRIDE, 0)
            if h < 1 or w < 1:
                raise ValueError(f"conv stack collapses the spatial map at stage {st}")
        return self.conv_spec[-1].out_channels, h, w

    @property
    def spp_length(self) -> int:
        c, _, _ = self.feature_map_size()
        return c * sum(b * b for b in self.spp_bins)


def desk_config() -> NetworkConfig:
    """Reduced-depth stack for 128x96 inputs; final map 5x7, pyramid vector
    64 * 39 = 2496."""
    return NetworkConfig(
        input_height=96, input_width=128,
        conv_spec=(
            ConvStage(7, 4, 12, 24, pool=True),
            ConvStage(5, 1, 24, 48, pool=True),
            ConvStage(3, 1, 48, 64),
        ),
        spp_bins=(5, 3, 2, 1),
        fc_widths=(256, 128),
    )


def full_config() -> NetworkConfig:
    """AlexNet-style stack for 512x384 inputs; final map 11x15, pyramid
    vector 256 * 39 = 9984."""
    return NetworkConfig(
        input_height=384, input_width=512,
        conv_spec=(
            ConvStage(11, 4, 12, 96, pool=True, padding=2),
            ConvStage(5, 1, 96, 256, pool=True),
            ConvStage(3, 1, 256, 384),
            ConvStage(3, 1, 384, 384),
            ConvStage(3, 1, 384, 256, pool=True),
        ),
        spp_bins=(5, 3, 2, 1),
        fc_widths=(4096, 4096),
    )


def tiny_config() -> NetworkConfig:
    """Two-stage throwaway network on 8x8 inputs, small enough for
    finite-difference gradient checks in double precision."""
    return NetworkConfig(
        input_height=8, input_width=8,
        conv_spec=(ConvStage(3, 2, 12, 4), ConvStage(3, 1, 4, 6)),
        spp_bins=(2, 1),
        fc_widths=(8,),
    )


def spp(feature_map: torch.Tensor, bins) -> torch.Tensor:
    """Spatial pyramid max pooling.

    For each bin count b the h x w map is partitioned into a b x b grid with
    cell boundaries floor(i*h/b) .. ceil((i+1)*h/b), so cells overlap by at
    most one row/column and every pixel is covered.  Accepts (C, h, w) or
    (N, C, h, w); returns a vector of length C * sum(b^2) per map.
    """
    squeeze = feature_map.dim() == 3
    x = feature_map.unsqueeze(0) if squeeze else feature_map
    if x.dim() != 4:
        raise ValueError(f"expected a (C,h,w) or (N,C,h,w) map, got shape {tuple(feature_map.shape)}")
    n, c, h, w = x.shape
    need = max(bins)
    if h < need or w < need:
        raise ValueError(f"feature map {h}x{w} is smaller than the largest bin grid {need}x{need}")
    pieces = []
    for b in bins:
        level = x.new_empty((n, c, b, b))
        for i in range(b):
            r0 = (i * h) // b
            r1 = -(-((i + 1) * h) // b)
            for j in range(b):
                c0 = (j * w) // b
                c1 = -(-((j + 1) * w) // b)
                level[:, :, i, j] = x[:, :, r0:r1, c0:c1].amax(dim=(2, 3))
        pieces.append(level.reshape(n, c * b * b))
    out = torch.cat(pieces, dim=1)
    return out.squeeze(0) if squeeze else out


def pose_loss(pred: torch.Tensor, target: torch.Tensor,
              weights: LossWeights = DEFAULT_WEIGHTS) -> torch.Tensor:
    """0.5 * (xi - xi_hat)^T W (xi - xi_hat), averaged over the batch."""
    if pred.shape != target.shape or pred.shape[-1] != OUTPUT_DIM:
        raise ValueError(f"pose batches must both be (..., {OUTPUT_DIM}); "
                         f"got {tuple(pred.shape)} vs {tuple(target.shape)}")
    w = torch.tensor([weights.w_x, weights.w_y, weights.w_theta],
                     dtype=pred.dtype, device=pred.device)
    d = target - pred
    per_sample = 0.5 * (w * d * d).sum(dim=-1)
    return per_sample.mean()


class PoseRegressor(nn.Module):
    """Conv stack -> spatial pyramid pooling -> FC head -> linear 3 outputs."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        convs = []
        for st in config.conv_spec:
            convs.append(nn.Conv2d(st.in_channels, st.out_channels, st.kernel,
                                   stride=st.stride, padding=st.pad()))
            convs.append(nn.ReLU(inplace=True))
            if st.pool:
                convs.append(nn.MaxPool2d(_POOL_KERNEL, _POOL_STRIDE))
        self.features = nn.Sequential(*convs)
        widths = [config.spp_length, *config.fc_widths]
        fcs = []
        for a, b in zip(widths, widths[1:]):
            fcs.append(nn.Linear(a, b))
            fcs.append(nn.ReLU(inplace=True))
        fcs.append(nn.Linear(widths[-1], config.output_dim))
        self.head = nn.Sequential(*fcs)
        self.register_buffer("steps", torch.zeros((), dtype=torch.int64))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        expect = (cfg.input_channels, cfg.input_height, cfg.input_width)
        if x.dim() != 4 or tuple(x.shape[1:]) != expect:
            raise ValueError(
                f"expected input of shape (N, {expect[0]}, {expect[1]}, {expect[2]}), "
                f"got {tuple(x.shape)}")
        return self.head(spp(self.features(x), cfg.spp_bins))


def init(config: NetworkConfig, seed: int) -> PoseRegressor:
    """Fresh regressor with fan-in-scaled normal weights and zero biases,
    deterministic in the seed.  Layers feeding a ReLU get std sqrt(2/fan_in);
    the final linear layer gets std sqrt(1/fan_in)."""
    model = PoseRegressor(config)
    gen = torch.Generator().manual_seed(seed)
    linears = [m for m in model.modules() if isinstance(m, (nn.Conv2d, nn.Linear))]
    with torch.no_grad():
        for i, m in enumerate(linears):
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            else:
                fan_in = m.in_features
            gain = 1.0 if i == len(linears) - 1 else 2.0
            m.weight.normal_(0.0, (gain / fan_in) ** 0.5, generator=gen)
            m.bias.zero_()
    return model


def save_checkpoint(model: PoseRegressor, path: str) -> None:
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "config": dataclasses.asdict(model.config),
        "state": model.state_dict(),
    }, path)


def load_checkpoint(path: str) -> PoseRegressor:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    fmt = blob.get("format") if isinstance(blob, dict) else None
    if fmt != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint (header {fmt!r})")
    cdict = dict(blob["config"])
    cdict["conv_spec"] = tuple(ConvStage(**st) for st in cdict["conv_spec"])
    cdict["spp_bins"] = tuple(cdict["spp_bins"])
    cdict["fc_widths"] = tuple(cdict["fc_widths"])
    model = PoseRegressor(NetworkConfig(**cdict))
    model.load_state_dict(blob["state"])
    return model
