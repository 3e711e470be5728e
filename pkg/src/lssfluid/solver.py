"""Classic incompressible smoke solver (semi-Lagrangian advection + CG projection).

One `step` advances a `SimState` in the fixed order: inflow (applied by the
scene driver), density advection, velocity advection, obstacle flags and
velocity, wall boundary conditions, buoyancy, pressure solve, velocity
correction. The domain is a closed box (Neumann pressure everywhere) with
free-slip walls; there is no explicit viscosity.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, SolverFailure
from .fields import (
    SOLID,
    FlagGrid,
    MacField2,
    ScalarField,
    divergence,
    gradient_to_faces,
    sample_bilinear,
    sample_mac,
    _require,
)


@dataclass
class SolverConfig:
    cg_tol: float = 1e-3
    cg_max_iter: int = 2000
    gravity: tuple[float, float] = (0.0, -4e-3)
    dt: float = 0.5

    def __post_init__(self):
        _require(self.cg_tol > 0, "cg_tol must be positive")
        _require(self.cg_max_iter >= 1, "cg_max_iter must be >= 1")
        _require(self.dt > 0, "dt must be positive")


@dataclass
class ObstaclePose:
    """Rigid cup: two vertical walls joined by a bottom, open top.

    In body coordinates the cup occupies the box [-outer_w/2, outer_w/2] x
    [-outer_h/2, outer_h/2]; solid matter is where the box is entered but the
    inner channel (walls of `thickness` on the left/right/bottom) is not.
    World pose = rotate by `angle`, then translate to `center`.
    """

    center: tuple[float, float]
    angle: float
    outer_w: float
    outer_h: float
    thickness: float

    def body_solid(self, qx: np.ndarray, qy: np.ndarray) -> np.ndarray:
        """Solid predicate for body-frame points."""
        hw, hh = self.outer_w / 2.0, self.outer_h / 2.0
        inside = (np.abs(qx) <= hw) & (np.abs(qy) <= hh)
        wall = (qx < -hw + self.thickness) | (qx > hw - self.thickness) | (qy < -hh + self.thickness)
        return inside & wall

    def to_body(self, x: np.ndarray, y: np.ndarray):
        c, s = math.cos(self.angle), math.sin(self.angle)
        dx, dy = x - self.center[0], y - self.center[1]
        return c * dx + s * dy, -s * dx + c * dy

    def to_world(self, qx: np.ndarray, qy: np.ndarray):
        c, s = math.cos(self.angle), math.sin(self.angle)
        return (c * qx - s * qy + self.center[0],
                s * qx + c * qy + self.center[1])

    def max_extent(self) -> float:
        return math.hypot(self.outer_w / 2.0, self.outer_h / 2.0)


@dataclass
class SimState:
    u: MacField2
    rho: ScalarField
    flags: FlagGrid
    obstacle: ObstaclePose | None = None
    t: int = 0
    dt: float = 0.5

    def __post_init__(self):
        dims = (self.rho.width, self.rho.height)
        _require((self.u.width, self.u.height) == dims, "SimState velocity dims differ")
        _require((self.flags.width, self.flags.height) == dims, "SimState flag dims differ")
        _require(self.dt > 0, "dt must be positive")

    @classmethod
    def zeros(cls, width: int, height: int, dt: float = 0.5) -> "SimState":
        return cls(MacField2.zeros(width, height), ScalarField.zeros(width, height),
                   FlagGrid.closed_box(width, height), None, 0, dt)


@dataclass
class StepControls:
    """Per-frame scene controls consumed by `step`.

    `source_center`/`source_radius` describe the density inflow (None for no
    inflow); `pose_prev` -> `pose` is the rigid obstacle motion realized
    during this step (both None for obstacle-free scenes).
    """

    source_center: tuple[float, float] | None = None
    source_radius: float = 0.0
    pose_prev: ObstaclePose | None = None
    pose: ObstaclePose | None = None


# ---------------------------------------------------------------------------
# advection


def _cell_centers(width: int, height: int):
    x = np.arange(width, dtype=np.float64) + 0.5
    y = np.arange(height, dtype=np.float64) + 0.5
    return np.meshgrid(x, y)


def advect_scalar(rho: ScalarField, u: MacField2, dt: float, flags: FlagGrid) -> ScalarField:
    """First-order semi-Lagrangian transport of a cell-centered scalar."""
    _require((rho.width, rho.height) == (u.width, u.height), "advect_scalar: dims differ")
    cx, cy = _cell_centers(rho.width, rho.height)
    pos = np.stack([cx, cy], axis=-1)
    back = pos - dt * sample_mac(u, pos)
    out = _bilinear_at(rho, back)
    out[flags.solid] = 0.0
    return ScalarField(rho.width, rho.height, out)


def _bilinear_at(field: ScalarField, pos: np.ndarray) -> np.ndarray:
    return sample_bilinear(field, pos)


def advect_velocity(u: MacField2, dt: float, flags: FlagGrid) -> MacField2:
    """Semi-Lagrangian self-advection, component-wise at face positions."""
    _require((u.width, u.height) == (flags.width, flags.height), "advect_velocity: dims differ")
    w, h = u.width, u.height
    out = MacField2.zeros(w, h)

    fx, fy = np.meshgrid(np.arange(w + 1, dtype=np.float64),
                         np.arange(h, dtype=np.float64) + 0.5)
    pos = np.stack([fx, fy], axis=-1)
    back = pos - dt * sample_mac(u, pos)
    out.u_x[...] = _bilinear_raw(u.u_x, back[..., 0], back[..., 1] - 0.5)

    fx, fy = np.meshgrid(np.arange(w, dtype=np.float64) + 0.5,
                         np.arange(h + 1, dtype=np.float64))
    pos = np.stack([fx, fy], axis=-1)
    back = pos - dt * sample_mac(u, pos)
    out.u_y[...] = _bilinear_raw(u.u_y, back[..., 0] - 0.5, back[..., 1])

    _zero_solid_faces(out, flags)
    return out


def _bilinear_raw(data: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    from .fields import _bilinear
    return _bilinear(data, gx, gy)


def _solid_face_masks(flags: FlagGrid):
    """Masks of faces with at least one Solid (or out-of-domain) neighbor."""
    solid = flags.solid
    h, w = solid.shape
    mx = np.ones((h, w + 1), dtype=bool)
    mx[:, 1:-1] = solid[:, :-1] | solid[:, 1:]
    my = np.ones((h + 1, w), dtype=bool)
    my[1:-1, :] = solid[:-1, :] | solid[1:, :]
    return mx, my


def _zero_solid_faces(u: MacField2, flags: FlagGrid) -> None:
    # faces adjacent to an actual Solid cell only (array-edge faces with no
    # solid neighbor are untouched, so constant fields stay fixed points)
    solid = flags.solid
    h, w = solid.shape
    mx = np.zeros((h, w + 1), dtype=bool)
    mx[:, :-1] |= solid
    mx[:, 1:] |= solid
    my = np.zeros((h + 1, w), dtype=bool)
    my[:-1, :] |= solid
    my[1:, :] |= solid
    u.u_x[mx] = 0.0
    u.u_y[my] = 0.0


# ---------------------------------------------------------------------------
# forces and boundary conditions


def add_buoyancy(u: MacField2, rho: ScalarField, g: tuple[float, float], dt: float,
                 flags: FlagGrid) -> MacField2:
    """Boussinesq body force on interior fluid faces: du = -g * mean(rho) * dt."""
    _require((u.width, u.height) == (rho.width, rho.height), "add_buoyancy: dims differ")
    out = u.copy()
    fluid = flags.fluid
    both_x = fluid[:, :-1] & fluid[:, 1:]
    both_y = fluid[:-1, :] & fluid[1:, :]
    if g[0] != 0.0:
        rho_face = 0.5 * (rho.data[:, :-1] + rho.data[:, 1:])
        out.u_x[:, 1:-1][both_x] += (-g[0]) * dt * rho_face[both_x]
    if g[1] != 0.0:
        rho_face = 0.5 * (rho.data[:-1, :] + rho.data[1:, :])
        out.u_y[1:-1, :][both_y] += (-g[1]) * dt * rho_face[both_y]
    return out


def rasterize_obstacle(pose: ObstaclePose, width: int, height: int) -> FlagGrid:
    """Flag grid with the domain walls plus the rigid cup marked Solid."""
    reach = pose.max_extent()
    cx, cy = pose.center
    if (cx - reach < 1.0 or cx + reach > width - 1.0 or
            cy - reach < 1.0 or cy + reach > height - 1.0):
        raise ContractViolation("obstacle does not fit strictly inside the fluid domain")
    flags = FlagGrid.closed_box(width, height)
    x, y = _cell_centers(width, height)
    qx, qy = pose.to_body(x, y)
    flags.labels[pose.body_solid(qx, qy)] = SOLID
    return flags


def obstacle_velocity(pose_prev: ObstaclePose, pose: ObstaclePose, dt: float,
                      width: int, height: int) -> MacField2:
    """Rigid-body face velocities of the transform pose_prev -> pose.

    A face position x is pulled to body coordinates via the arriving pose and
    the velocity is (x - T_prev(body(x))) / dt, evaluated on faces adjacent
    to Solid matter at the arriving pose.
    """
    _require((pose.outer_w, pose.outer_h, pose.thickness) ==
             (pose_prev.outer_w, pose_prev.outer_h, pose_prev.thickness),
             "obstacle_velocity: shape parameters differ")
    out = MacField2.zeros(width, height)
    flags = rasterize_obstacle(pose, width, height)
    solid = flags.solid.copy()
    solid[0, :] = solid[-1, :] = solid[:, 0] = solid[:, -1] = False  # cup only
    grown_x = np.zeros((height, width + 1), dtype=bool)
    grown_x[:, :-1] |= solid
    grown_x[:, 1:] |= solid
    grown_y = np.zeros((height + 1, width), dtype=bool)
    grown_y[:-1, :] |= solid
    grown_y[1:, :] |= solid

    fx, fy = np.meshgrid(np.arange(width + 1, dtype=np.float64),
                         np.arange(height, dtype=np.float64) + 0.5)
    qx, qy = pose.to_body(fx, fy)
    px, py = pose_prev.to_world(qx, qy)
    out.u_x[grown_x] = ((fx - px) / dt)[grown_x]

    fx, fy = np.meshgrid(np.arange(width, dtype=np.float64) + 0.5,
                         np.arange(height + 1, dtype=np.float64))
    qx, qy = pose.to_body(fx, fy)
    px, py = pose_prev.to_world(qx, qy)
    out.u_y[grown_y] = ((fy - py) / dt)[grown_y]
    return out


def set_wall_bcs(u: MacField2, flags: FlagGrid, u_obs: MacField2 | None = None) -> MacField2:
    """Impose normal velocity on every Solid-adjacent face (free-slip walls)."""
    _require((u.width, u.height) == (flags.width, flags.height), "set_wall_bcs: dims differ")
    out = u.copy()
    mx, my = _solid_face_masks(flags)
    if u_obs is None:
        out.u_x[mx] = 0.0
        out.u_y[my] = 0.0
    else:
        out.u_x[mx] = u_obs.u_x[mx]
        out.u_y[my] = u_obs.u_y[my]
    return out


# ---------------------------------------------------------------------------
# pressure projection


def solve_pressure(div: ScalarField, flags: FlagGrid, cfg: SolverConfig) -> ScalarField:
    """Solve the 5-point Neumann Poisson system lap(p) = div on fluid cells.

    Solid neighbors drop out of the stencil. The RHS is projected onto the
    solvable range (fluid-cell mean removed) and the pure-Neumann null space
    is fixed by removing the fluid-cell mean of p. Conjugate gradients run
    until ||r||_2 <= cg_tol * max(1, ||b||_2).
    """
    _require((div.width, div.height) == (flags.width, flags.height),
             "solve_pressure: dims differ")
    fluid = flags.fluid
    n_fluid = int(fluid.sum())
    if n_fluid == 0:
        return ScalarField.zeros(div.width, div.height)

    # neighbor-count diagonal and fluid adjacency, precomputed once
    fl = fluid
    nb = np.zeros(fl.shape, dtype=np.float64)
    nb[:, 1:] += fl[:, :-1]
    nb[:, :-1] += fl[:, 1:]
    nb[1:, :] += fl[:-1, :]
    nb[:-1, :] += fl[1:, :]

    def apply_neg_lap(p: np.ndarray) -> np.ndarray:
        """-(lap p) restricted to fluid cells (SPD on the mean-free subspace)."""
        out = nb * p
        out[:, 1:] -= np.where(fl[:, :-1], p[:, :-1], 0.0)
        out[:, :-1] -= np.where(fl[:, 1:], p[:, 1:], 0.0)
        out[1:, :] -= np.where(fl[:-1, :], p[:-1, :], 0.0)
        out[:-1, :] -= np.where(fl[1:, :], p[1:, :], 0.0)
        out[~fl] = 0.0
        return out

    b = np.where(fl, -div.data.astype(np.float64), 0.0)
    b[fl] -= b[fl].sum() / n_fluid
    b_norm = float(np.sqrt((b * b).sum()))
    target = cfg.cg_tol * max(1.0, b_norm)

    p = np.zeros_like(b)
    r = b.copy()
    res = float(np.sqrt((r * r).sum()))
    if res <= target:
        return ScalarField(div.width, div.height, p)
    d = r.copy()
    rs = res * res
    for _ in range(cfg.cg_max_iter):
        ad = apply_neg_lap(d)
        denom = float((d * ad).sum())
        if denom <= 0.0:
            break  # numerical breakdown; residual check below decides
        alpha = rs / denom
        p += alpha * d
        r -= alpha * ad
        rs_new = float((r * r).sum())
        if math.sqrt(rs_new) <= target:
            p[fl] -= p[fl].sum() / n_fluid
            p[~fl] = 0.0
            return ScalarField(div.width, div.height, p)
        d = r + (rs_new / rs) * d
        rs = rs_new
    raise SolverFailure(
        f"pressure CG stalled at residual {math.sqrt(rs):.3e} (target {target:.3e})",
        residual=math.sqrt(rs), iterations=cfg.cg_max_iter)


def correct_velocity(u: MacField2, p: ScalarField, flags: FlagGrid) -> MacField2:
    """Subtract the pressure gradient on fluid-fluid faces."""
    _require((u.width, u.height) == (p.width, p.height), "correct_velocity: dims differ")
    g = gradient_to_faces(p, flags)
    out = u.copy()
    out.u_x -= g.u_x
    out.u_y -= g.u_y
    return out


# ---------------------------------------------------------------------------
# full step


def apply_inflow(rho: ScalarField, center: tuple[float, float], radius: float) -> ScalarField:
    """Overwrite density with 1 inside a disk (idempotent; velocity untouched)."""
    _require(0.0 < center[0] < rho.width and 0.0 < center[1] < rho.height,
             "inflow source outside domain")
    out = rho.copy()
    x, y = _cell_centers(rho.width, rho.height)
    mask = (x - center[0]) ** 2 + (y - center[1]) ** 2 <= radius ** 2
    out.data[mask] = 1.0
    return out


def step(state: SimState, controls: StepControls, cfg: SolverConfig,
         timings: dict | None = None) -> SimState:
    """One solver step; returns the next state (inputs untouched).

    `timings`, when given, accumulates wall-clock seconds under the keys
    "solve" (pressure solve) and "total".
    """
    t_start = time.perf_counter()
    w, h = state.rho.width, state.rho.height
    dt = state.dt

    rho = state.rho
    if controls.source_center is not None:
        rho = apply_inflow(rho, controls.source_center, controls.source_radius)
    rho = advect_scalar(rho, state.u, dt, state.flags)
    u = advect_velocity(state.u, dt, state.flags)

    if controls.pose is not None:
        pose_prev = controls.pose_prev if controls.pose_prev is not None else controls.pose
        flags = rasterize_obstacle(controls.pose, w, h)
        u_obs = obstacle_velocity(pose_prev, controls.pose, dt, w, h)
        obstacle = controls.pose
    else:
        flags = state.flags
        u_obs = None
        obstacle = None

    u = set_wall_bcs(u, flags, u_obs)
    u = add_buoyancy(u, rho, cfg.gravity, dt, flags)
    div = divergence(u, flags)
    t_solve = time.perf_counter()
    p = solve_pressure(div, flags, cfg)
    t_solved = time.perf_counter()
    u = correct_velocity(u, p, flags)
    rho = ScalarField(w, h, np.where(flags.solid, 0.0, rho.data))
    out = SimState(u, rho, flags, obstacle, state.t + 1, dt)
    if timings is not None:
        timings["solve"] = timings.get("solve", 0.0) + (t_solved - t_solve)
        timings["total"] = timings.get("total", 0.0) + (time.perf_counter() - t_start)
    return out
