"""Randomized training scenes with supervised control tracks.

Three scene families are supported: a moving smoke source (one control:
source x-position), a rotating cup of cold smoke (one control: angle) and a
rotating+translating cup (two controls). Control values are normalized to
[-1, 1]; the mapping to physical quantities is linear and monotone:

* source x spans the central 60% of the domain width,
* cup angle spans +-45 degrees,
* cup x-translation spans +-15% of the domain width.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .fields import FlagGrid, MacField2, ScalarField, _require
from .solver import (
    ObstaclePose,
    SimState,
    SolverConfig,
    StepControls,
    apply_inflow,
    rasterize_obstacle,
    step,
)


class SceneKind(enum.Enum):
    MOVING_SMOKE = "moving-smoke"
    ROTATING_CUP = "rot-cup"
    ROTATING_MOVING_CUP = "rot-mov-cup"

    @property
    def n_sp(self) -> int:
        return 2 if self is SceneKind.ROTATING_MOVING_CUP else 1

    @property
    def code(self) -> int:
        return {SceneKind.MOVING_SMOKE: 0,
                SceneKind.ROTATING_CUP: 1,
                SceneKind.ROTATING_MOVING_CUP: 2}[self]

    @classmethod
    def from_code(cls, code: int) -> "SceneKind":
        for kind in cls:
            if kind.code == code:
                return kind
        raise ContractViolation(f"unknown scene kind code {code}")


def default_solver_config(kind: SceneKind) -> SolverConfig:
    """Per-scene solver constants (CG accuracy and gravity)."""
    if kind is SceneKind.MOVING_SMOKE:
        return SolverConfig(cg_tol=1e-4, gravity=(0.0, -4e-3))
    if kind is SceneKind.ROTATING_CUP:
        return SolverConfig(cg_tol=1e-3, gravity=(0.0, 1e-3))
    return SolverConfig(cg_tol=1e-3, gravity=(0.0, 1e-2))


@dataclass
class ControlTrack:
    n_sp: int
    values: np.ndarray  # (frames, n_sp), each in [-1, 1]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        _require(self.values.ndim == 2 and self.values.shape[1] == self.n_sp,
                 "control track shape mismatch")
        _require(bool(np.all(np.abs(self.values) <= 1.0 + 1e-6)),
                 "control values outside [-1, 1]")


@dataclass
class SceneFrame:
    u: MacField2
    rho: ScalarField
    flags: FlagGrid


@dataclass
class SceneSequence:
    kind: SceneKind
    frames: list[SceneFrame]
    controls: ControlTrack
    seed: int

    def __post_init__(self):
        _require(len(self.frames) == len(self.controls.values),
                 "frames and controls differ in length")

    @property
    def width(self) -> int:
        return self.frames[0].rho.width

    @property
    def height(self) -> int:
        return self.frames[0].rho.height


#: frames per unit of the control-sinusoid time axis; fixes the trajectory
#: tempo so short scenes are prefixes of long ones rather than sped-up copies.
TRACK_TEMPO_FRAMES = 256.0


def gen_control_track(kind: SceneKind, seed: int, frames: int) -> ControlTrack:
    """Smooth random trajectory per control: 3 seeded sinusoids, renormalized.

    Values are bounded to [-1, 1] by dividing by the amplitude sum (the sup
    of the sinusoid mixture), which keeps the per-frame rates independent of
    the requested scene length.
    """
    _require(frames >= 1, "frames must be >= 1")
    values = np.zeros((frames, kind.n_sp), dtype=np.float64)
    t = np.arange(frames, dtype=np.float64) / TRACK_TEMPO_FRAMES
    for ch in range(kind.n_sp):
        rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, kind.code, ch, 0x5C3])
        amp = rng.uniform(0.4, 1.0, size=3)
        freq = rng.uniform(0.5, 2.5, size=3)
        phase = rng.uniform(0.0, 1.0, size=3)
        v = np.zeros(frames)
        for a, f, p in zip(amp, freq, phase):
            v += a * np.sin(2.0 * math.pi * (f * t + p))
        values[:, ch] = v / amp.sum()
    return ControlTrack(kind.n_sp, values.astype(np.float32))


# ---------------------------------------------------------------------------
# control value -> physical scene configuration


@dataclass
class SceneGeometry:
    """Physical realization of the control mapping for one resolution."""

    kind: SceneKind
    width: int
    height: int

    @property
    def source_radius(self) -> float:
        if self.kind is SceneKind.MOVING_SMOKE:
            return max(2.0, self.width / 8.0)
        return max(1.5, min(self.width, self.height) / 16.0)

    @property
    def cup_size(self) -> tuple[float, float, float]:
        side = 0.4 * min(self.width, self.height)
        return side, side, max(2.0, 0.05 * min(self.width, self.height))

    def source_center(self, control: np.ndarray) -> tuple[float, float]:
        if self.kind is SceneKind.MOVING_SMOKE:
            return (self.width / 2.0 + 0.3 * self.width * float(control[0]),
                    self.height / 8.0)
        # cup scenes: the source tracks the cup cavity center
        pose = self.pose(control)
        return pose.center

    def pose(self, control: np.ndarray) -> ObstaclePose | None:
        if self.kind is SceneKind.MOVING_SMOKE:
            return None
        outer_w, outer_h, thick = self.cup_size
        angle = float(control[0]) * math.pi / 4.0
        cx = self.width / 2.0
        if self.kind is SceneKind.ROTATING_MOVING_CUP:
            cx += 0.15 * self.width * float(control[1])
        return ObstaclePose((cx, self.height / 2.0), angle, outer_w, outer_h, thick)

    def step_controls(self, prev_control: np.ndarray, control: np.ndarray) -> StepControls:
        return StepControls(
            source_center=self.source_center(control),
            source_radius=self.source_radius,
            pose_prev=self.pose(prev_control),
            pose=self.pose(control),
        )


def generate_scene(kind: SceneKind, width: int, height: int, frames: int, seed: int,
                   cfg: SolverConfig | None = None) -> SceneSequence:
    """Run the solver for `frames` steps, recording each step as one frame."""
    _require(width >= 16 and height >= 16, "resolution must be >= 16 per axis")
    cfg = cfg if cfg is not None else default_solver_config(kind)
    geom = SceneGeometry(kind, width, height)
    track = gen_control_track(kind, seed, frames)

    pose0 = geom.pose(track.values[0])
    flags0 = (rasterize_obstacle(pose0, width, height) if pose0 is not None
              else FlagGrid.closed_box(width, height))
    state = SimState(MacField2.zeros(width, height), ScalarField.zeros(width, height),
                     flags0, pose0, 0, cfg.dt)

    recorded: list[SceneFrame] = []
    for k in range(frames):
        prev = track.values[k - 1] if k > 0 else track.values[0]
        state = step(state, geom.step_controls(prev, track.values[k]), cfg)
        recorded.append(SceneFrame(
            MacField2(width, height,
                      state.u.u_x.astype(np.float32), state.u.u_y.astype(np.float32)),
            ScalarField(width, height, state.rho.data.astype(np.float32)),
            state.flags.copy(),
        ))
    return SceneSequence(kind, recorded, track, seed)


def inflow_for_frame(seq_kind: SceneKind, width: int, height: int,
                     control: np.ndarray) -> tuple[tuple[float, float], float]:
    """Source center and radius for one frame of a recorded scene."""
    geom = SceneGeometry(seq_kind, width, height)
    return geom.source_center(control), geom.source_radius


__all__ = [
    "SceneKind", "ControlTrack", "SceneFrame", "SceneSequence", "SceneGeometry",
    "gen_control_track", "generate_scene", "default_solver_config", "apply_inflow",
    "inflow_for_frame",
]
