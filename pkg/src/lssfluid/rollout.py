"""Inference-time rollout schemes, PSNR evaluation and latent diagnostics.

Two schemes: `velden` is a pure autoregressive latent rollout whose decoded
density is reported directly; `vel` decodes only the velocity, advects an
externally tracked density with it through the classic solver kernel, and
reinjects the encoded result into the density slots of the code consumed by
the predictor. Scripted control values always overwrite the supervised
slots before prediction.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import Checkpoint, networks_from_checkpoint
from .errors import ContractViolation
from .fields import (
    FieldTensor,
    FlagGrid,
    ScalarField,
    _require,
    center_to_mac,
    field_tensor,
)
from .nets import Networks, field_from_tensor, forward_decoder, forward_encoder, \
    forward_predictor, tensor_from_field
from .scenes import SceneGeometry, SceneSequence
from .solver import advect_scalar, apply_inflow


# ---------------------------------------------------------------------------
# scenario mutators


@dataclass(frozen=True)
class InsertObstacle:
    """Circular solid obstacle: masks density and marks cells Solid."""

    center: tuple[float, float]
    radius: float

    def mask(self, width: int, height: int) -> np.ndarray:
        x, y = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
        return (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2 <= self.radius ** 2


@dataclass(frozen=True)
class AddInflow:
    """Extra density source, applied like the scene inflow."""

    center: tuple[float, float]
    radius: float


@dataclass(frozen=True)
class AddSink:
    """Axis-aligned region whose density is removed every step."""

    region: tuple[float, float, float, float]  # x0, y0, x1, y1

    def mask(self, width: int, height: int) -> np.ndarray:
        x0, y0, x1, y1 = self.region
        x, y = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)


Mutator = InsertObstacle | AddInflow | AddSink


def _validate_mutators(mutators, width, height):
    for m in mutators:
        if isinstance(m, (InsertObstacle, AddInflow)):
            cx, cy = m.center
            _require(0 < cx < width and 0 < cy < height, "mutator region outside domain")
        else:
            x0, y0, x1, y1 = m.region
            _require(0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height,
                     "sink region outside domain")


# ---------------------------------------------------------------------------
# metrics


PSNR_CAP_DB = 99.0


def psnr(a, b, peak: float) -> float:
    """10*log10(peak^2 / MSE), capped at 99 dB for near-identical fields."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"psnr shapes differ: {a.shape} vs {b.shape}")
    _require(peak > 0, "psnr peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse < peak * peak * 10.0 ** (-PSNR_CAP_DB / 10.0):
        return PSNR_CAP_DB
    return 10.0 * math.log10(peak * peak / mse)


def smoothness_metric(codes: np.ndarray, n_sp: int = 0) -> float:
    """Mean consecutive distance of max-normalized codes (supervised dropped)."""
    codes = np.asarray(codes, dtype=np.float64)
    _require(codes.ndim == 2 and codes.shape[0] >= 2, "need >= 2 codes")
    core = codes[:, :codes.shape[1] - n_sp] if n_sp else codes
    scale = np.abs(core).max(axis=0)
    core = np.where(scale > 0, core / np.where(scale > 0, scale, 1.0), 0.0)
    return float(np.linalg.norm(np.diff(core, axis=0), axis=1).mean())


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class RolloutResult:
    mode: str
    fields: list[FieldTensor]  # physical units, one per predicted step
    codes: np.ndarray  # codes consumed by / produced for the predictor
    psnr_u: list[float]
    psnr_rho: list[float]
    solve_seconds: float = 0.0
    total_seconds: float = 0.0

    def mean_psnr(self, horizon: int | None = None) -> tuple[float, float]:
        k = len(self.psnr_u) if horizon is None else min(horizon, len(self.psnr_u))
        _require(k > 0, "no compared steps in rollout")
        return float(np.mean(self.psnr_u[:k])), float(np.mean(self.psnr_rho[:k]))


def _nets_of(ckpt_or_nets) -> Networks:
    if isinstance(ckpt_or_nets, Checkpoint):
        return networks_from_checkpoint(ckpt_or_nets, dtype=torch.float32)
    return ckpt_or_nets


def _dtype_of(nets: Networks):
    return next(nets.parameters()).dtype


def _encode_frame(nets: Networks, frame, dtype) -> torch.Tensor:
    x = tensor_from_field(field_tensor(frame.u, frame.rho), nets.stats, dtype)
    return forward_encoder(nets, x.unsqueeze(0))[0]


def _gt_tensor(frame) -> FieldTensor:
    return field_tensor(frame.u, frame.rho)


def _sequence_peaks(scene: SceneSequence) -> tuple[float, float]:
    peak_u = max(max(np.abs(f.u.u_x).max(), np.abs(f.u.u_y).max())
                 for f in scene.frames)
    return max(float(peak_u), 1e-12), 1.0


def _scripted_controls(scene: SceneSequence, steps: int, w: int) -> np.ndarray:
    have = scene.controls.values
    if len(have) >= w + steps:
        return np.asarray(have, dtype=np.float64)
    # extend by holding the last value (rollout beyond the recorded track)
    pad = np.repeat(have[-1:], w + steps - len(have), axis=0)
    return np.asarray(np.concatenate([have, pad], axis=0), dtype=np.float64)


def _compare(result: RolloutResult, scene: SceneSequence, w: int, peaks):
    peak_u, peak_rho = peaks
    for k, pred in enumerate(result.fields):
        t = w + k
        if t >= len(scene.frames):
            break
        gt = _gt_tensor(scene.frames[t])
        result.psnr_u.append(psnr(pred.data[..., :2], gt.data[..., :2], peak_u))
        result.psnr_rho.append(psnr(pred.data[..., 2], gt.data[..., 2], peak_rho))


def rollout_velden(ckpt_or_nets, scene: SceneSequence, steps: int,
                   controls: np.ndarray | None = None) -> RolloutResult:
    """Pure latent rollout (no physical reinjection), Eq.-7 style."""
    _require(steps >= 1, "steps must be >= 1")
    nets = _nets_of(ckpt_or_nets)
    dtype = _dtype_of(nets)
    layout = nets.layout
    w = nets.cfg.window
    _require(len(scene.frames) >= w, "scene shorter than the predictor window")
    scripted = controls if controls is not None else _scripted_controls(scene, steps, w)

    codes: list[torch.Tensor] = []
    with torch.no_grad():
        for k in range(w):
            c = _encode_frame(nets, scene.frames[k], dtype)
            c[layout.sup_slice] = torch.as_tensor(scripted[k], dtype=dtype)
            codes.append(c)
        result = RolloutResult("velden", [], np.zeros(0), [], [])
        for t in range(w, w + steps):
            window = torch.stack(codes[-w:], dim=0).unsqueeze(0)
            _, c_next = forward_predictor(nets, window)
            c_next = c_next[0].clone()
            c_next[layout.sup_slice] = torch.as_tensor(scripted[t], dtype=dtype)
            decoded = forward_decoder(nets, c_next.unsqueeze(0))[0]
            result.fields.append(field_from_tensor(decoded, nets.stats))
            codes.append(c_next)
    result.codes = torch.stack(codes, dim=0).cpu().numpy()
    _compare(result, scene, w, _sequence_peaks(scene))
    return result


def rollout_vel(ckpt_or_nets, scene: SceneSequence, steps: int,
                mutators: tuple[Mutator, ...] = (),
                controls: np.ndarray | None = None, dt: float = 0.5,
                timings: dict | None = None) -> RolloutResult:
    """Velocity prediction with external density advection and reinjection."""
    _require(steps >= 1, "steps must be >= 1")
    nets = _nets_of(ckpt_or_nets)
    layout = nets.layout
    if not layout.has_split:
        raise ContractViolation("vel rollout needs a subdivided latent space "
                                "(no-split checkpoints support velden only)")
    dtype = _dtype_of(nets)
    w = nets.cfg.window
    _require(len(scene.frames) >= w, "scene shorter than the predictor window")
    width, height = scene.width, scene.height
    _validate_mutators(mutators, width, height)
    geom = SceneGeometry(scene.kind, width, height)
    scripted = controls if controls is not None else _scripted_controls(scene, steps, w)

    obstacle_masks = [m.mask(width, height) for m in mutators
                      if isinstance(m, InsertObstacle)]
    sink_masks = [m.mask(width, height) for m in mutators if isinstance(m, AddSink)]
    extra_inflows = [m for m in mutators if isinstance(m, AddInflow)]

    def flags_for(t: int) -> FlagGrid:
        base = scene.frames[min(t, len(scene.frames) - 1)].flags
        if not obstacle_masks:
            return base
        labels = base.labels.copy()
        for m in obstacle_masks:
            labels[m] = 1
        return FlagGrid(width, height, labels)

    def scrub(rho: ScalarField, flags: FlagGrid) -> ScalarField:
        data = rho.data.copy()
        data[flags.solid] = 0.0
        for m in obstacle_masks:
            data[m] = 0.0
        for m in sink_masks:
            data[m] = 0.0
        return ScalarField(width, height, data)

    result = RolloutResult("vel", [], np.zeros(0), [], [])
    codes: list[torch.Tensor] = []
    t_all = time.perf_counter()
    net_seconds = 0.0
    with torch.no_grad():
        for k in range(w):
            c = _encode_frame(nets, scene.frames[k], dtype)
            c[layout.sup_slice] = torch.as_tensor(scripted[k], dtype=dtype)
            codes.append(c)
        rho = ScalarField(width, height,
                          scene.frames[w - 1].rho.data.astype(np.float64).copy())
        rho = scrub(rho, flags_for(w - 1))
        for t in range(w, w + steps):
            t_net = time.perf_counter()
            window = torch.stack(codes[-w:], dim=0).unsqueeze(0)
            _, c_pred = forward_predictor(nets, window)
            c_pred = c_pred[0].clone()
            c_pred[layout.sup_slice] = torch.as_tensor(scripted[t], dtype=dtype)
            decoded = forward_decoder(nets, c_pred.unsqueeze(0))[0]
            net_seconds += time.perf_counter() - t_net

            # predicted physical velocity; decoded density is discarded
            vel = decoded[:2].to(torch.float64).cpu().numpy().transpose(1, 2, 0)
            vel = vel * nets.stats.u_max
            u_mac = center_to_mac(np.ascontiguousarray(vel))

            flags = flags_for(t)
            source, radius = geom.source_center(scripted[t]), geom.source_radius
            rho = apply_inflow(rho, source, radius)
            for m in extra_inflows:
                rho = apply_inflow(rho, m.center, m.radius)
            rho = advect_scalar(rho, u_mac, dt, flags)
            rho = scrub(rho, flags)

            t_net = time.perf_counter()
            x_reinj = FieldTensor(height, width,
                                  np.concatenate([vel, rho.data[..., None]], axis=-1))
            c_dot = forward_encoder(
                nets, tensor_from_field(x_reinj, nets.stats, dtype).unsqueeze(0))[0]
            net_seconds += time.perf_counter() - t_net

            c_hat = c_pred.clone()
            c_hat[layout.den_slice] = c_dot[layout.den_slice]
            c_hat[layout.sup_slice] = torch.as_tensor(scripted[t], dtype=dtype)
            codes.append(c_hat)
            result.fields.append(x_reinj)
    result.codes = torch.stack(codes, dim=0).cpu().numpy()
    result.solve_seconds = net_seconds
    result.total_seconds = time.perf_counter() - t_all
    if timings is not None:
        timings["solve"] = timings.get("solve", 0.0) + net_seconds
        timings["total"] = timings.get("total", 0.0) + result.total_seconds
    _compare(result, scene, w, _sequence_peaks(scene))
    return result


def encode_scene(ckpt_or_nets, scene: SceneSequence) -> np.ndarray:
    """Full encodes of every frame; rows (frames, total_dim)."""
    nets = _nets_of(ckpt_or_nets)
    dtype = _dtype_of(nets)
    with torch.no_grad():
        codes = [_encode_frame(nets, f, dtype).cpu().numpy() for f in scene.frames]
    return np.stack(codes, axis=0)


# ---------------------------------------------------------------------------
# aggregate evaluation


@dataclass
class EvalRow:
    scene: int
    mode: str
    horizon: int
    mean_psnr_u: float
    mean_psnr_rho: float


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    def mean(self, mode: str, horizon: int) -> tuple[float, float]:
        sel = [r for r in self.rows if r.mode == mode and r.horizon == horizon]
        _require(len(sel) > 0, f"no rows for mode={mode} horizon={horizon}")
        return (float(np.mean([r.mean_psnr_u for r in sel])),
                float(np.mean([r.mean_psnr_rho for r in sel])))


def evaluate(ckpt_or_nets, scenes: list[SceneSequence], modes: tuple[str, ...],
             horizons: tuple[int, ...]) -> EvalReport:
    """Mean PSNR per scene, mode and horizon (per-frame mean, then per scene)."""
    _require(len(scenes) > 0, "empty test set")
    nets = _nets_of(ckpt_or_nets)
    max_h = max(horizons)
    report = EvalReport()
    for sid, scene in enumerate(scenes):
        steps = min(max_h, len(scene.frames) - nets.cfg.window)
        for mode in modes:
            if mode == "vel":
                result = rollout_vel(nets, scene, steps)
            elif mode == "velden":
                result = rollout_velden(nets, scene, steps)
            else:
                raise ContractViolation(f"unknown rollout mode '{mode}'")
            for h in horizons:
                mu, mr = result.mean_psnr(h)
                report.rows.append(EvalRow(sid, mode, h, mu, mr))
    return report


# ---------------------------------------------------------------------------
# latent trajectory export (PCA)


def pca_project(points: np.ndarray, k: int = 3):
    """Covariance eigen-decomposition projection to k components.

    Returns (projected, eigenvalues_desc, components). Eigenvector signs are
    fixed so each component's largest-magnitude entry is positive.
    """
    x = np.asarray(points, dtype=np.float64)
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / len(xc)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    for j in range(evecs.shape[1]):
        pivot = np.argmax(np.abs(evecs[:, j]))
        if evecs[pivot, j] < 0:
            evecs[:, j] = -evecs[:, j]
    comps = evecs[:, :k]
    return xc @ comps, evals, comps


def export_latent_trajectories(ckpt_or_nets, scenes: list[SceneSequence]):
    """Rows (scene, frame, p1, p2, p3) of max-normalized, PCA-projected codes."""
    _require(len(scenes) >= 2, "need at least two scenes")
    nets = _nets_of(ckpt_or_nets)
    n_sp = nets.layout.n_sp
    all_codes = [encode_scene(nets, s) for s in scenes]
    stacked = np.concatenate(all_codes, axis=0)
    core = stacked[:, :stacked.shape[1] - n_sp] if n_sp else stacked
    scale = np.abs(core).max(axis=0)
    degenerate = not np.any(scale > 0)
    normalized = np.where(scale > 0, core / np.where(scale > 0, scale, 1.0), 0.0)
    if degenerate:
        proj = np.zeros((len(normalized), 3))
    else:
        proj, _, _ = pca_project(normalized, k=3)
    rows = []
    offset = 0
    for sid, codes in enumerate(all_codes):
        for fid in range(len(codes)):
            p = proj[offset + fid]
            rows.append((sid, fid, float(p[0]), float(p[1]), float(p[2])))
        offset += len(codes)
    return rows, degenerate


# ---------------------------------------------------------------------------
# timing harness


@dataclass
class BenchRow:
    scene: int
    kind: str  # "simulation" | "prediction"
    steps: int
    solve_s: float
    total_s: float


def bench_timing(ckpt_or_nets, scenes: list[SceneSequence], steps: int,
                 cfg=None) -> list[BenchRow]:
    """Per-step wall time of plain solver steps vs Vel prediction steps."""
    from .fields import MacField2
    from .scenes import default_solver_config
    from .solver import SimState, step as solver_step

    nets = _nets_of(ckpt_or_nets)
    rows: list[BenchRow] = []
    for sid, scene in enumerate(scenes):
        n = min(steps, len(scene.frames) - nets.cfg.window)
        solver_cfg = cfg if cfg is not None else default_solver_config(scene.kind)
        geom = SceneGeometry(scene.kind, scene.width, scene.height)
        w, h = scene.width, scene.height
        first = scene.frames[0]
        state = SimState(
            MacField2(w, h, first.u.u_x.astype(np.float64),
                      first.u.u_y.astype(np.float64)),
            ScalarField(w, h, first.rho.data.astype(np.float64)),
            first.flags.copy(), geom.pose(scene.controls.values[0]), 0, solver_cfg.dt)
        timings: dict = {}
        track = scene.controls.values
        for t in range(1, n + 1):
            prev = track[min(t - 1, len(track) - 1)]
            cur = track[min(t, len(track) - 1)]
            state = solver_step(state, geom.step_controls(prev, cur), solver_cfg,
                                timings=timings)
        rows.append(BenchRow(sid, "simulation", n, timings.get("solve", 0.0) / n,
                             timings.get("total", 0.0) / n))

        timings = {}
        rollout_vel(nets, scene, n, timings=timings)
        rows.append(BenchRow(sid, "prediction", n, timings["solve"] / n,
                             timings["total"] / n))
    return rows
