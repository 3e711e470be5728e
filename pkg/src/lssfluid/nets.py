"""Encoder, decoder (with curl head) and recurrent predictor.

The differentiable substrate is torch (CPU): float64 for training so the
finite-difference gradient checks are meaningful, float32 for inference and
persistence. The encoder is a strided conv stack with residual pairs and one
fully-connected head; the decoder mirrors it and ends in a curl layer that
turns a stream-function channel into a discretely divergence-free velocity.
The predictor stacks two LSTM layers and two 1D convolutions and outputs a
residual that is added to the last window entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import ContractViolation
from .fields import FieldTensor, _require


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class LatentLayout:
    """Slot bookkeeping of the subdivided code [velocity | density | supervised].

    `v` is the last velocity slot, `d` the last density slot; supervised
    slots fill [d+1, total_dim). `split_fraction = 0` encodes the no-split
    baseline: `v = -1`, no velocity/density subdivision, split losses off.
    """

    total_dim: int
    n_sp: int
    split_fraction: float

    def __post_init__(self):
        _require(self.total_dim >= 2, "latent dimension too small")
        _require(0 <= self.n_sp < self.total_dim - 1, "supervised slots leave no code slots")
        _require(0.0 <= self.split_fraction < 1.0, "split_fraction must be in [0, 1)")
        if self.split_fraction > 0.0:
            _require(0 <= self.v < self.d, "split_fraction leaves an empty slot range")

    @property
    def v(self) -> int:
        if self.split_fraction == 0.0:
            return -1
        return round_half_up(self.split_fraction * (self.total_dim - self.n_sp)) - 1

    @property
    def d(self) -> int:
        return self.total_dim - self.n_sp - 1

    @property
    def has_split(self) -> bool:
        return self.split_fraction > 0.0

    @property
    def vel_slice(self) -> slice:
        return slice(0, self.v + 1)

    @property
    def den_slice(self) -> slice:
        return slice(self.v + 1, self.d + 1)

    @property
    def sup_slice(self) -> slice:
        return slice(self.d + 1, self.total_dim)


@dataclass(frozen=True)
class NetConfig:
    height: int = 64
    width: int = 32
    channels: int = 3
    enc_layers: int = 16
    dec_layers: int = 17
    base_channels: int = 8
    channel_cap: int = 64
    kernel_size: int = 3
    levels: int = 3
    leaky_slope: float = 0.2
    latent_dim: int = 16
    n_sp: int = 1
    split_fraction: float = 0.66
    window: int = 2
    lstm_layers: int = 2
    lstm_hidden: int = 64
    pred_channels: int = 64

    def __post_init__(self):
        _require(self.height % (1 << self.levels) == 0 and self.width % (1 << self.levels) == 0,
                 "resolution must be divisible by 2^levels")
        _require(self.enc_layers >= 1 + self.levels, "enc_layers too small for level count")
        _require(self.dec_layers >= 2 + self.levels, "dec_layers too small for level count")
        _require(self.window >= 1, "window must be >= 1")
        _require(self.channels == 3, "2D build uses 3 channels (u_x, u_y, rho)")

    @property
    def layout(self) -> LatentLayout:
        return LatentLayout(self.latent_dim, self.n_sp, self.split_fraction)

    def level_channels(self, level: int) -> int:
        return min(self.base_channels << level, self.channel_cap)


@dataclass
class NormStats:
    """Dataset normalization frozen into checkpoints (density is already [0,1])."""

    u_max: float = 1.0

    def __post_init__(self):
        _require(self.u_max > 0, "u_max must be positive")


# ---------------------------------------------------------------------------
# layers


class ResidualPair(nn.Module):
    """Two 3x3 convolutions on a skip connection (pre-activation)."""

    def __init__(self, channels: int, kernel: int, slope: float):
        super().__init__()
        pad = kernel // 2
        self.conv1 = nn.Conv2d(channels, channels, kernel, padding=pad)
        self.conv2 = nn.Conv2d(channels, channels, kernel, padding=pad)
        self.act = nn.LeakyReLU(slope)

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(self.act(x))))


def curl_channels(psi: torch.Tensor) -> torch.Tensor:
    """Velocity (B, 2, H, W) of a stream-function batch (B, H, W).

    Matches `fields.curl_stream`: central differences with half-weight
    one-sided stencils at the edges, which makes the discrete divergence of
    the result vanish identically after face averaging.
    """
    dy = 0.5 * torch.cat([
        psi[:, 1:2, :] - psi[:, 0:1, :],
        psi[:, 2:, :] - psi[:, :-2, :],
        psi[:, -1:, :] - psi[:, -2:-1, :],
    ], dim=1)
    dx = 0.5 * torch.cat([
        psi[:, :, 1:2] - psi[:, :, 0:1],
        psi[:, :, 2:] - psi[:, :, :-2],
        psi[:, :, -1:] - psi[:, :, -2:-1],
    ], dim=2)
    return torch.stack([dy, -dx], dim=1)


class CurlLayer(nn.Module):
    """Decoder head: (psi, rho) channels -> (u_x, u_y, rho)."""

    def forward(self, x):
        vel = curl_channels(x[:, 0])
        return torch.cat([vel, x[:, 1:2]], dim=1)


def _split_counts(total_extra: int, buckets: int) -> tuple[list[int], int]:
    """Distribute residual pairs across levels, coarsest level first."""
    pairs, single = divmod(total_extra, 2)
    counts = [0] * buckets
    for k in range(pairs):
        counts[buckets - 1 - (k % buckets)] += 1
    return counts, single


class Encoder(nn.Module):
    """`enc_layers` convolutions with residual pairs, then one dense layer."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        act = nn.LeakyReLU(cfg.leaky_slope)
        pad = cfg.kernel_size // 2
        pair_counts, single = _split_counts(cfg.enc_layers - 1 - cfg.levels, cfg.levels)
        blocks: list[nn.Module] = [nn.Conv2d(cfg.channels, cfg.level_channels(0),
                                             cfg.kernel_size, padding=pad)]
        for lvl in range(cfg.levels):
            c_in = cfg.level_channels(lvl)
            c_out = cfg.level_channels(lvl + 1)
            blocks += [act, nn.Conv2d(c_in, c_out, cfg.kernel_size, stride=2, padding=pad)]
            blocks += [ResidualPair(c_out, cfg.kernel_size, cfg.leaky_slope)
                       for _ in range(pair_counts[lvl])]
        c_bot = cfg.level_channels(cfg.levels)
        if single:
            blocks += [act, nn.Conv2d(c_bot, c_bot, cfg.kernel_size, padding=pad)]
        blocks.append(act)
        self.body = nn.Sequential(*blocks)
        h0, w0 = cfg.height >> cfg.levels, cfg.width >> cfg.levels
        self.head = nn.Linear(c_bot * h0 * w0, cfg.latent_dim)

    def forward(self, x):
        h = self.body(x)
        return self.head(h.flatten(1))


class Decoder(nn.Module):
    """Dense layer, `dec_layers` convolutions with upsampling, curl head."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        act = nn.LeakyReLU(cfg.leaky_slope)
        pad = cfg.kernel_size // 2
        c_bot = cfg.level_channels(cfg.levels)
        self.h0, self.w0 = cfg.height >> cfg.levels, cfg.width >> cfg.levels
        self.c_bot = c_bot
        self.head = nn.Linear(cfg.latent_dim, c_bot * self.h0 * self.w0)
        pair_counts, single = _split_counts(cfg.dec_layers - 1 - cfg.levels, cfg.levels)
        blocks: list[nn.Module] = []
        for lvl in reversed(range(cfg.levels)):
            c_in = cfg.level_channels(lvl + 1)
            c_out = cfg.level_channels(lvl)
            blocks += [ResidualPair(c_in, cfg.kernel_size, cfg.leaky_slope)
                       for _ in range(pair_counts[lvl])]
            blocks += [nn.Upsample(scale_factor=2, mode="nearest"),
                       nn.Conv2d(c_in, c_out, cfg.kernel_size, padding=pad), act]
        if single:
            blocks += [nn.Conv2d(cfg.level_channels(0), cfg.level_channels(0),
                                 cfg.kernel_size, padding=pad), act]
        blocks.append(nn.Conv2d(cfg.level_channels(0), 2, cfg.kernel_size, padding=pad))
        self.body = nn.Sequential(*blocks)
        self.curl = CurlLayer()

    def forward(self, c):
        h = self.head(c).reshape(-1, self.c_bot, self.h0, self.w0)
        return self.curl(self.body(h))


class Predictor(nn.Module):
    """Two LSTM layers over the window, two 1D convolutions, residual output."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.window = cfg.window
        self.lstm = nn.LSTM(cfg.latent_dim, cfg.lstm_hidden, num_layers=cfg.lstm_layers,
                            batch_first=True)
        self.conv1 = nn.Conv1d(cfg.lstm_hidden, cfg.pred_channels, kernel_size=1)
        self.conv2 = nn.Conv1d(cfg.pred_channels, cfg.latent_dim, kernel_size=cfg.window)
        self.act = nn.LeakyReLU(cfg.leaky_slope)

    def forward(self, window):
        # window: (B, w, latent); fresh zero LSTM state per sequence
        out, _ = self.lstm(window)
        h = self.act(self.conv1(out.transpose(1, 2)))
        delta = self.conv2(h).squeeze(2)
        return delta, window[:, -1] + delta


@dataclass
class Networks:
    cfg: NetConfig
    encoder: Encoder
    decoder: Decoder
    predictor: Predictor
    stats: NormStats = field(default_factory=NormStats)

    @property
    def layout(self) -> LatentLayout:
        return self.cfg.layout

    def named_parameters(self):
        for prefix, mod in (("encoder", self.encoder), ("decoder", self.decoder),
                            ("predictor", self.predictor)):
            for name, p in mod.named_parameters():
                yield f"{prefix}.{name}", p

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def to_dtype(self, dtype) -> "Networks":
        self.encoder.to(dtype)
        self.decoder.to(dtype)
        self.predictor.to(dtype)
        return self

    def eval_mode(self) -> "Networks":
        for m in (self.encoder, self.decoder, self.predictor):
            m.eval()
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def build_networks(cfg: NetConfig, dtype=torch.float64) -> Networks:
    nets = Networks(cfg, Encoder(cfg), Decoder(cfg), Predictor(cfg))
    return nets.to_dtype(dtype)


# ---------------------------------------------------------------------------
# initialization


def _fan_in(name: str, p: torch.Tensor) -> int:
    if p.ndim >= 2:
        receptive = 1
        for s in p.shape[2:]:
            receptive *= s
        if "weight_hh" in name:
            return p.shape[1]
        return p.shape[1] * receptive
    return p.shape[0]


def init_params(cfg: NetConfig, seed: int, dtype=torch.float64) -> Networks:
    """Deterministic fan-in-scaled uniform init; biases zero, forget gates 1."""
    nets = build_networks(cfg, dtype)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0xA11CE])
    with torch.no_grad():
        for name, p in sorted(nets.named_parameters(), key=lambda kv: kv[0]):
            if "bias" in name:
                p.zero_()
                if "lstm.bias_ih" in name:
                    hidden = p.shape[0] // 4
                    p[hidden:2 * hidden] = 1.0  # forget gate
            else:
                bound = math.sqrt(3.0 / _fan_in(name, p))
                vals = rng.uniform(-bound, bound, size=tuple(p.shape))
                p.copy_(torch.from_numpy(vals).to(p.dtype))
    return nets


# ---------------------------------------------------------------------------
# functional surface with shape contracts


def tensor_from_field(x: FieldTensor, stats: NormStats, dtype=torch.float64) -> torch.Tensor:
    """FieldTensor (H, W, 3) -> normalized torch input (3, H, W)."""
    data = np.asarray(x.data, dtype=np.float64).copy()
    data[..., 0] /= stats.u_max
    data[..., 1] /= stats.u_max
    return torch.from_numpy(data).permute(2, 0, 1).to(dtype)


def field_from_tensor(t: torch.Tensor, stats: NormStats) -> FieldTensor:
    """Normalized network output (3, H, W) -> physical FieldTensor."""
    data = t.detach().cpu().to(torch.float64).permute(1, 2, 0).numpy().copy()
    data[..., 0] *= stats.u_max
    data[..., 1] *= stats.u_max
    return FieldTensor(data.shape[0], data.shape[1], data)


def _check_batched(x: torch.Tensor, cfg: NetConfig):
    if x.ndim == 3:
        x = x.unsqueeze(0)
    if x.shape[1:] != (cfg.channels, cfg.height, cfg.width):
        raise ContractViolation(
            f"encoder input shape {tuple(x.shape)} != (*, {cfg.channels}, "
            f"{cfg.height}, {cfg.width})")
    return x


def forward_encoder(nets: Networks, x: torch.Tensor) -> torch.Tensor:
    """Normalized field batch -> latent codes (B, total_dim)."""
    return nets.encoder(_check_batched(x, nets.cfg))


def forward_decoder(nets: Networks, c: torch.Tensor) -> torch.Tensor:
    """Latent codes (B, total_dim) -> normalized field batch (B, 3, H, W)."""
    if c.ndim == 1:
        c = c.unsqueeze(0)
    if c.shape[-1] != nets.cfg.latent_dim:
        raise ContractViolation(
            f"code length {c.shape[-1]} != layout total_dim {nets.cfg.latent_dim}")
    return nets.decoder(c)


def forward_predictor(nets: Networks, window: torch.Tensor):
    """Window (B, w, total_dim) -> (delta, next); next = window[:, -1] + delta."""
    if window.ndim == 2:
        window = window.unsqueeze(0)
    if window.shape[1] != nets.cfg.window:
        raise ContractViolation(
            f"window length {window.shape[1]} != configured {nets.cfg.window}")
    if window.shape[2] != nets.cfg.latent_dim:
        raise ContractViolation("window code length mismatch")
    return nets.predictor(window)


def backprop(loss: torch.Tensor, nets: Networks) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients for every parameter; unreachable ones are zero."""
    nets.zero_grad()
    if loss.requires_grad:
        loss.backward()
    return {name: (p.grad.detach().clone() if p.grad is not None
                   else torch.zeros_like(p))
            for name, p in nets.named_parameters()}
