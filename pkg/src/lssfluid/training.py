"""End-to-end training of encoder, decoder and predictor.

Each sample is a run of n = w + n_i consecutive frames. Per step: the first
frame is encoded and reconstructed (direct loss); masked encodes ([u, 0] and
[0, rho]) feed the two split losses; supervised slots of the window-frame
encodes are regressed onto the scene controls; the predictor is unrolled
n_i times autoregressively from the encoded window, every prediction is
decoded with the shared decoder and scored against its ground-truth frame.
The sum (combined loss) is backpropagated and Adam updates all parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import TrainingError
from .fields import _require, mac_to_center
from .losses import LossReport, LossWeights, loss_ae, loss_split, loss_sup, loss_total
from .nets import (
    NetConfig,
    Networks,
    NormStats,
    forward_decoder,
    forward_encoder,
    forward_predictor,
    init_params,
)
from .checkpoint import Checkpoint, checkpoint_from_networks
from .scenes import SceneSequence


@dataclass
class TrainConfig:
    window: int = 2
    n_i: int = 6  # 0 = direct-loss-only autoencoder baseline
    batch_size: int = 8
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 4
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    latent_dim: int = 16
    split_fraction: float = 0.66
    val_fraction: float = 0.1
    windows_per_epoch: int | None = None  # None = exhaustive sweep
    # desk-scale architecture knobs (paper-scale: enc 16 / dec 17)
    enc_layers: int = 8
    dec_layers: int = 9
    base_channels: int = 8
    channel_cap: int = 48
    levels: int = 3
    lstm_hidden: int = 64
    pred_channels: int = 64

    def __post_init__(self):
        _require(self.n_i >= 0, "n_i must be >= 0")
        _require(self.window >= 1, "window must be >= 1")
        _require(self.batch_size >= 1, "batch_size must be >= 1")

    @property
    def sample_frames(self) -> int:
        return self.window + self.n_i

    def net_config(self, height: int, width: int, n_sp: int) -> NetConfig:
        return NetConfig(
            height=height, width=width,
            enc_layers=self.enc_layers, dec_layers=self.dec_layers,
            base_channels=self.base_channels, channel_cap=self.channel_cap,
            levels=self.levels, latent_dim=self.latent_dim, n_sp=n_sp,
            split_fraction=self.split_fraction, window=self.window,
            lstm_hidden=self.lstm_hidden, pred_channels=self.pred_channels,
        )


# ---------------------------------------------------------------------------
# dataset -> tensors


@dataclass
class TensorDataset:
    """Scene frames as co-located channel tensors, plus control tracks."""

    fields: torch.Tensor  # (scenes, frames, 3, H, W) float32, physical units
    controls: torch.Tensor  # (scenes, frames, n_sp) float32
    n_sp: int

    @property
    def scenes(self) -> int:
        return self.fields.shape[0]

    @property
    def frames(self) -> int:
        return self.fields.shape[1]


def to_tensor_dataset(sequences: list[SceneSequence]) -> TensorDataset:
    _require(len(sequences) > 0, "empty dataset")
    h, w = sequences[0].height, sequences[0].width
    frames = len(sequences[0].frames)
    n_sp = sequences[0].kind.n_sp
    fields = np.zeros((len(sequences), frames, 3, h, w), dtype=np.float32)
    controls = np.zeros((len(sequences), frames, n_sp), dtype=np.float32)
    for s, seq in enumerate(sequences):
        _require(len(seq.frames) == frames and seq.height == h and seq.width == w,
                 "sequences must share dims and frame count")
        for k, frame in enumerate(seq.frames):
            vel = mac_to_center(frame.u)
            fields[s, k, 0] = vel[..., 0]
            fields[s, k, 1] = vel[..., 1]
            fields[s, k, 2] = frame.rho.data
        controls[s] = seq.controls.values
    return TensorDataset(torch.from_numpy(fields), torch.from_numpy(controls), n_sp)


def make_windows(data: TensorDataset, w: int, n_i: int, seed: int,
                 scene_ids: list[int] | None = None,
                 count: int | None = None) -> tuple[list[tuple[int, int]], int]:
    """Window start positions, never crossing scene boundaries.

    Exhaustive when `count` is None, otherwise `count` positions sampled
    uniformly. Returns (positions, skipped_scene_count).
    """
    n = w + n_i
    scene_ids = list(range(data.scenes)) if scene_ids is None else scene_ids
    rng = np.random.default_rng([seed & 0xFFFFFFFF, 0x51D])
    usable = [s for s in scene_ids if data.frames >= n]
    skipped = len(scene_ids) - len(usable)
    if not usable:
        return [], skipped
    if count is None:
        positions = [(s, o) for s in usable for o in range(data.frames - n + 1)]
    else:
        scene_pick = rng.integers(0, len(usable), size=count)
        offset_pick = rng.integers(0, data.frames - n + 1, size=count)
        positions = [(usable[s], int(o)) for s, o in zip(scene_pick, offset_pick)]
    return positions, skipped


def gather_batch(data: TensorDataset, positions: list[tuple[int, int]], n: int,
                 stats: NormStats, dtype=torch.float64):
    """Stack windows into ((B, n, 3, H, W), (B, n, n_sp)) normalized tensors."""
    xs = torch.stack([data.fields[s, o:o + n] for s, o in positions]).to(dtype)
    cs = torch.stack([data.controls[s, o:o + n] for s, o in positions]).to(dtype)
    xs[:, :, 0] /= stats.u_max
    xs[:, :, 1] /= stats.u_max
    return xs, cs


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)


def adam_update(nets: Networks, grads: dict[str, torch.Tensor], state: AdamState,
                lr: float, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> Networks:
    """Standard adaptive-moment update, applied in place to the parameters."""
    state.step += 1
    t = state.step
    with torch.no_grad():
        for name, p in nets.named_parameters():
            g = grads[name]
            if name not in state.m:
                state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            m = state.m[name].mul_(beta1).add_(g, alpha=1 - beta1)
            v = state.v[name].mul_(beta2).addcmul_(g, g, value=1 - beta2)
            m_hat = m / (1 - beta1 ** t)
            v_hat = v / (1 - beta2 ** t)
            p.sub_(lr * m_hat / (v_hat.sqrt() + eps))
    return nets


# ---------------------------------------------------------------------------
# one optimization step


def _masked(x: torch.Tensor, keep_velocity: bool) -> torch.Tensor:
    out = x.clone()
    if keep_velocity:
        out[:, 2] = 0.0
    else:
        out[:, 0] = 0.0
        out[:, 1] = 0.0
    return out


def sample_losses(nets: Networks, xs: torch.Tensor, cs: torch.Tensor,
                  cfg: TrainConfig):
    """Forward graph of the combined loss for one batch of samples."""
    layout = nets.layout
    w = cfg.window
    zero = torch.zeros((), dtype=xs.dtype)

    window_codes = [forward_encoder(nets, xs[:, k]) for k in range(w)]
    c0 = window_codes[0]
    x0_hat = forward_decoder(nets, c0)
    ae_direct = loss_ae(xs[:, 0], x0_hat)

    if layout.has_split:
        c_vel_only = forward_encoder(nets, _masked(xs[:, 0], keep_velocity=True))
        c_den_only = forward_encoder(nets, _masked(xs[:, 0], keep_velocity=False))
        split_vel = loss_split(c_vel_only, layout.v + 1, layout.d)
        split_den = loss_split(c_den_only, 0, layout.v)
    else:
        split_vel = zero
        split_den = zero

    if layout.n_sp > 0:
        sup_terms = [loss_sup(code[:, layout.sup_slice], cs[:, k])
                     for k, code in enumerate(window_codes)]
        sup = sum(sup_terms) / len(sup_terms)
    else:
        sup = zero

    pred_terms: list[torch.Tensor] = []
    codes = list(window_codes)
    for k in range(cfg.n_i):
        window = torch.stack(codes[-w:], dim=1)
        _, c_next = forward_predictor(nets, window)
        x_hat = forward_decoder(nets, c_next)
        pred_terms.append(loss_ae(xs[:, w + k], x_hat))
        codes.append(c_next)

    return loss_total(ae_direct, sup, split_vel, split_den, pred_terms, cfg.weights)


def train_step(nets: Networks, xs: torch.Tensor, cs: torch.Tensor, cfg: TrainConfig,
               opt: AdamState) -> LossReport:
    """One optimizer update; raises TrainingError on a non-finite loss."""
    total, report = sample_losses(nets, xs, cs, cfg)
    if not math.isfinite(report.total):
        raise TrainingError(f"non-finite training loss at opt step {opt.step}: {report}")
    nets.zero_grad()
    total.backward()
    grads = {name: (p.grad.detach() if p.grad is not None else torch.zeros_like(p))
             for name, p in nets.named_parameters()}
    adam_update(nets, grads, opt, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    return report


# ---------------------------------------------------------------------------
# full fit


@dataclass
class FitResult:
    checkpoint: Checkpoint
    trace: list[tuple[int, LossReport]]
    val_trace: list[tuple[int, float]]
    train_scenes: list[int]
    val_scenes: list[int]


def split_scenes(n_scenes: int, val_fraction: float, seed: int):
    rng = np.random.default_rng([seed & 0xFFFFFFFF, 0x5B117])
    order = rng.permutation(n_scenes)
    n_val = min(max(1, round(val_fraction * n_scenes)), n_scenes - 1) if n_scenes > 1 else 0
    val = sorted(int(s) for s in order[:n_val])
    train = sorted(int(s) for s in order[n_val:])
    return train, val


def fit(sequences: list[SceneSequence], cfg: TrainConfig,
        progress=None) -> FitResult:
    """Train on the given scenes; returns the best-validation checkpoint."""
    data = to_tensor_dataset(sequences)
    _require(data.frames >= cfg.sample_frames,
             f"scenes have {data.frames} frames < window+n_i = {cfg.sample_frames}")
    train_ids, val_ids = split_scenes(data.scenes, cfg.val_fraction, cfg.seed)

    u_max = float(data.fields[train_ids, :, :2].abs().max())
    stats = NormStats(u_max=max(u_max, 1e-12))

    height, width = data.fields.shape[-2], data.fields.shape[-1]
    net_cfg = cfg.net_config(height, width, data.n_sp)
    nets = init_params(net_cfg, cfg.seed)
    nets.stats = stats
    opt = AdamState()

    val_positions, _ = make_windows(data, cfg.window, cfg.n_i, cfg.seed + 1,
                                    scene_ids=val_ids)
    # cap validation work at a fixed, deterministic subset
    val_positions = val_positions[:: max(1, len(val_positions) // 64)][:64]

    def validation_loss() -> float:
        if not val_positions:
            return math.nan
        total = 0.0
        with torch.no_grad():
            for k in range(0, len(val_positions), cfg.batch_size):
                chunk = val_positions[k:k + cfg.batch_size]
                xs, cs = gather_batch(data, chunk, cfg.sample_frames, stats)
                _, report = sample_losses(nets, xs, cs, cfg)
                total += report.total * len(chunk)
        return total / len(val_positions)

    trace: list[tuple[int, LossReport]] = []
    val_trace: list[tuple[int, float]] = []
    best_val = math.inf
    best = checkpoint_from_networks(nets, cfg.seed, 0)
    step = 0
    for epoch in range(cfg.epochs):
        positions, _ = make_windows(data, cfg.window, cfg.n_i,
                                    cfg.seed + 1000 + epoch, scene_ids=train_ids,
                                    count=cfg.windows_per_epoch)
        rng = np.random.default_rng([cfg.seed & 0xFFFFFFFF, 0xE90C, epoch])
        order = rng.permutation(len(positions))
        for k in range(0, len(order) - cfg.batch_size + 1, cfg.batch_size):
            chunk = [positions[i] for i in order[k:k + cfg.batch_size]]
            xs, cs = gather_batch(data, chunk, cfg.sample_frames, stats)
            report = train_step(nets, xs, cs, cfg, opt)
            step += 1
            trace.append((step, report))
            if progress is not None:
                progress(step, report)
        val = validation_loss()
        val_trace.append((step, val))
        if not math.isnan(val) and val < best_val:
            best_val = val
            best = checkpoint_from_networks(nets, cfg.seed, step)
    if math.isinf(best_val) and step > 0:
        best = checkpoint_from_networks(nets, cfg.seed, step)
    return FitResult(best, trace, val_trace, train_ids, val_ids)


def write_trace_csv(path, trace: list[tuple[int, LossReport]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step," + ",".join(LossReport.ROW_HEADER) + "\n")
        for step, report in trace:
            row = ",".join(f"{v!r}" for v in report.as_row())
            fh.write(f"{step},{row}\n")


def write_val_trace_csv(path, val_trace: list[tuple[int, float]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,val_total\n")
        for step, val in val_trace:
            fh.write(f"{step},{val!r}\n")
