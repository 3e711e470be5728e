"""Grid containers and discrete operators for 2D staggered smoke fields.

Conventions used throughout the package:

* arrays are numpy, indexed ``[y, x]`` (row-major, row = y);
* cell centers sit at continuous coordinates ``(x + 0.5, y + 0.5)``,
  so a ``width x height`` domain spans ``[0, width] x [0, height]``;
* `MacField2` stores x-velocity on vertical faces (``u_x[j, i]`` is the
  left face of cell ``(i, j)``, at position ``(i, j + 0.5)``) and
  y-velocity on horizontal faces (``u_y[j, i]`` at ``(i + 0.5, j)``);
* grid spacing is fixed to one cell unit, all constants are expressed in
  these units.

Operations never mutate their inputs; constructed values are treated as
immutable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

FLUID = 0
SOLID = 1


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ContractViolation(msg)


@dataclass
class ScalarField:
    """Cell-centered scalar quantity (density, pressure)."""

    width: int
    height: int
    data: np.ndarray  # shape (height, width)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        _require(self.data.shape == (self.height, self.width),
                 f"scalar data shape {self.data.shape} != {(self.height, self.width)}")

    @classmethod
    def zeros(cls, width: int, height: int, dtype=np.float64) -> "ScalarField":
        return cls(width, height, np.zeros((height, width), dtype=dtype))

    def copy(self) -> "ScalarField":
        return ScalarField(self.width, self.height, self.data.copy())


@dataclass
class MacField2:
    """Staggered (MAC) velocity field."""

    width: int
    height: int
    u_x: np.ndarray  # shape (height, width + 1)
    u_y: np.ndarray  # shape (height + 1, width)

    def __post_init__(self):
        self.u_x = np.asarray(self.u_x)
        self.u_y = np.asarray(self.u_y)
        _require(self.u_x.shape == (self.height, self.width + 1),
                 f"u_x shape {self.u_x.shape} != {(self.height, self.width + 1)}")
        _require(self.u_y.shape == (self.height + 1, self.width),
                 f"u_y shape {self.u_y.shape} != {(self.height + 1, self.width)}")

    @classmethod
    def zeros(cls, width: int, height: int, dtype=np.float64) -> "MacField2":
        return cls(width, height,
                   np.zeros((height, width + 1), dtype=dtype),
                   np.zeros((height + 1, width), dtype=dtype))

    def copy(self) -> "MacField2":
        return MacField2(self.width, self.height, self.u_x.copy(), self.u_y.copy())


@dataclass
class FlagGrid:
    """Per-cell Fluid/Solid labels; the outermost ring is always Solid."""

    width: int
    height: int
    labels: np.ndarray  # shape (height, width), uint8

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        _require(self.labels.shape == (self.height, self.width),
                 f"flag shape {self.labels.shape} != {(self.height, self.width)}")

    @classmethod
    def closed_box(cls, width: int, height: int) -> "FlagGrid":
        labels = np.full((height, width), FLUID, dtype=np.uint8)
        labels[0, :] = SOLID
        labels[-1, :] = SOLID
        labels[:, 0] = SOLID
        labels[:, -1] = SOLID
        return cls(width, height, labels)

    @property
    def fluid(self) -> np.ndarray:
        return self.labels == FLUID

    @property
    def solid(self) -> np.ndarray:
        return self.labels == SOLID

    def copy(self) -> "FlagGrid":
        return FlagGrid(self.width, self.height, self.labels.copy())


@dataclass
class FieldTensor:
    """Co-located channels-last tensor at the network boundary.

    2D layout is (height, width, 3) with channels (u_x, u_y, rho).
    """

    height: int
    width: int
    data: np.ndarray  # shape (height, width, channels)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        _require(self.data.ndim == 3 and self.data.shape[:2] == (self.height, self.width),
                 f"tensor shape {self.data.shape} inconsistent with {(self.height, self.width)}")

    @property
    def channels(self) -> int:
        return self.data.shape[2]


# ---------------------------------------------------------------------------
# interpolation


def _bilinear(data: np.ndarray, gx: np.ndarray, gy: np.ndarray):
    """Bilinear interpolation on the integer sample lattice of `data`.

    `gx`, `gy` are lattice coordinates (sample k sits at coordinate k) and
    are clamped to the valid range, which also absorbs out-of-domain
    positions for semi-Lagrangian backtraces.
    """
    h, w = data.shape
    gx = np.clip(gx, 0.0, w - 1.0)
    gy = np.clip(gy, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(gx).astype(np.int64), w - 2) if w > 1 else np.zeros_like(gx, np.int64)
    y0 = np.minimum(np.floor(gy).astype(np.int64), h - 2) if h > 1 else np.zeros_like(gy, np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = gx - x0
    fy = gy - y0
    v00 = data[y0, x0]
    v01 = data[y0, x1]
    v10 = data[y1, x0]
    v11 = data[y1, x1]
    return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11)


def sample_bilinear(field: ScalarField, pos) -> np.ndarray:
    """Sample a cell-centered field at continuous position(s) (x, y)."""
    pos = np.asarray(pos, dtype=np.float64)
    x, y = pos[..., 0], pos[..., 1]
    return _bilinear(field.data, x - 0.5, y - 0.5)


def sample_mac(u: MacField2, pos) -> np.ndarray:
    """Sample the staggered velocity at continuous position(s); returns (..., 2)."""
    pos = np.asarray(pos, dtype=np.float64)
    x, y = pos[..., 0], pos[..., 1]
    ux = _bilinear(u.u_x, x, y - 0.5)
    uy = _bilinear(u.u_y, x - 0.5, y)
    return np.stack([ux, uy], axis=-1)


# ---------------------------------------------------------------------------
# differential operators


def divergence(u: MacField2, flags: FlagGrid) -> ScalarField:
    """Per-cell net outflow; Solid cells report 0."""
    _require((u.width, u.height) == (flags.width, flags.height),
             "divergence: velocity/flag dims differ")
    div = (u.u_x[:, 1:] - u.u_x[:, :-1]) + (u.u_y[1:, :] - u.u_y[:-1, :])
    div[flags.solid] = 0.0
    return ScalarField(u.width, u.height, div)


def gradient_to_faces(p: ScalarField, flags: FlagGrid) -> MacField2:
    """Face-centered forward difference of p; Solid-adjacent faces are zero."""
    _require((p.width, p.height) == (flags.width, flags.height),
             "gradient_to_faces: pressure/flag dims differ")
    w, h = p.width, p.height
    g = MacField2.zeros(w, h)
    g.u_x[:, 1:-1] = p.data[:, 1:] - p.data[:, :-1]
    g.u_y[1:-1, :] = p.data[1:, :] - p.data[:-1, :]
    solid = flags.solid
    # a face is zeroed when either adjacent cell is Solid
    gx_block = np.zeros((h, w + 1), dtype=bool)
    gx_block[:, :-1] |= solid
    gx_block[:, 1:] |= solid
    gy_block = np.zeros((h + 1, w), dtype=bool)
    gy_block[:-1, :] |= solid
    gy_block[1:, :] |= solid
    g.u_x[gx_block] = 0.0
    g.u_y[gy_block] = 0.0
    return g


def _ddx_centered(a: np.ndarray) -> np.ndarray:
    """Central difference in x, one-sided at the domain edges."""
    d = np.empty_like(a)
    d[:, 1:-1] = 0.5 * (a[:, 2:] - a[:, :-2])
    d[:, 0] = a[:, 1] - a[:, 0]
    d[:, -1] = a[:, -1] - a[:, -2]
    return d


def _ddy_centered(a: np.ndarray) -> np.ndarray:
    """Central difference in y, one-sided at the domain edges."""
    d = np.empty_like(a)
    d[1:-1, :] = 0.5 * (a[2:, :] - a[:-2, :])
    d[0, :] = a[1, :] - a[0, :]
    d[-1, :] = a[-1, :] - a[-2, :]
    return d


def _ddx_face_matched(a: np.ndarray) -> np.ndarray:
    """Central difference in x whose edge rows carry half-weight one-sided stencils.

    This makes the stencil exactly proportional to the effective divergence
    stencil obtained from face averaging + MAC differencing, so the discrete
    divergence of a curl field vanishes identically, edges included.
    """
    d = np.empty_like(a)
    d[:, 1:-1] = 0.5 * (a[:, 2:] - a[:, :-2])
    d[:, 0] = 0.5 * (a[:, 1] - a[:, 0])
    d[:, -1] = 0.5 * (a[:, -1] - a[:, -2])
    return d


def _ddy_face_matched(a: np.ndarray) -> np.ndarray:
    d = np.empty_like(a)
    d[1:-1, :] = 0.5 * (a[2:, :] - a[:-2, :])
    d[0, :] = 0.5 * (a[1, :] - a[0, :])
    d[-1, :] = 0.5 * (a[-1, :] - a[-2, :])
    return d


def curl_stream(psi: ScalarField) -> np.ndarray:
    """Velocity channels (H, W, 2) of the stream function: u = (dpsi/dy, -dpsi/dx)."""
    ux = _ddy_face_matched(psi.data)
    uy = -_ddx_face_matched(psi.data)
    return np.stack([ux, uy], axis=-1)


def divergence_centered(vel: np.ndarray) -> np.ndarray:
    """Central-difference divergence of co-located velocity channels (H, W, 2)."""
    return _ddx_centered(vel[..., 0]) + _ddy_centered(vel[..., 1])


# ---------------------------------------------------------------------------
# layout conversions


def center_to_mac(t) -> MacField2:
    """Average co-located velocity channels onto faces (edge faces clamp)."""
    vel = t.data[..., :2] if isinstance(t, FieldTensor) else np.asarray(t)
    h, w = vel.shape[:2]
    out = MacField2.zeros(w, h, dtype=vel.dtype)
    out.u_x[:, 1:-1] = 0.5 * (vel[:, :-1, 0] + vel[:, 1:, 0])
    out.u_x[:, 0] = vel[:, 0, 0]
    out.u_x[:, -1] = vel[:, -1, 0]
    out.u_y[1:-1, :] = 0.5 * (vel[:-1, :, 1] + vel[1:, :, 1])
    out.u_y[0, :] = vel[0, :, 1]
    out.u_y[-1, :] = vel[-1, :, 1]
    return out


def mac_to_center(u: MacField2) -> np.ndarray:
    """Average the two enclosing faces back to cell centers; returns (H, W, 2)."""
    ux = 0.5 * (u.u_x[:, :-1] + u.u_x[:, 1:])
    uy = 0.5 * (u.u_y[:-1, :] + u.u_y[1:, :])
    return np.stack([ux, uy], axis=-1)


def field_tensor(u: MacField2, rho: ScalarField) -> FieldTensor:
    """Assemble the 3-channel network input (u_x, u_y, rho) at cell centers."""
    vel = mac_to_center(u)
    data = np.concatenate([vel, rho.data[..., None]], axis=-1)
    return FieldTensor(rho.height, rho.width, data)


def max_abs(field) -> float:
    """Largest absolute sample value of a field (or raw array)."""
    if isinstance(field, MacField2):
        return float(max(np.abs(field.u_x).max(), np.abs(field.u_y).max()))
    if isinstance(field, (ScalarField, FieldTensor)):
        arr = field.data
    else:
        arr = np.asarray(field)
    _require(arr.size > 0, "max_abs of empty field")
    return float(np.abs(arr).max())
