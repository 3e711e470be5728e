"""Training loss terms: split, supervised, reconstruction, combined total.

Conventions: the split loss is a plain L1 *sum* over its slot range (so its
magnitude is independent of how the remaining slots are used); field-sized
terms reduce with per-element means so magnitudes are resolution
independent. Batched inputs average over the batch dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ContractViolation
from .fields import _require


@dataclass(frozen=True)
class LossWeights:
    w_ae_direct: float = 1.0
    w_sup: float = 1.0
    w_split_vel: float = 1.0
    w_split_den: float = 1.0
    w_ae_pred: float = 1.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            _require(value >= 0.0 and value == value, f"{name} must be finite and >= 0")


@dataclass
class LossReport:
    ae_direct: float
    sup: float
    split_vel: float
    split_den: float
    ae_pred: float  # summed over the rollout steps
    total: float

    def as_row(self) -> list[float]:
        return [self.ae_direct, self.sup, self.split_vel, self.split_den,
                self.ae_pred, self.total]

    ROW_HEADER = ["ae_direct", "sup", "split_vel", "split_den", "ae_pred", "total"]


def loss_split(c: torch.Tensor, i_s: int, i_e: int) -> torch.Tensor:
    """L1 sum of code entries over the inclusive index range [i_s, i_e]."""
    dim = c.shape[-1]
    if not (0 <= i_s <= i_e < dim):
        raise ContractViolation(f"split range [{i_s}, {i_e}] out of bounds for dim {dim}")
    part = c[..., i_s:i_e + 1].abs().sum(dim=-1)
    return part.mean() if part.ndim else part


def loss_sup(c_sp_hat: torch.Tensor, c_sp: torch.Tensor) -> torch.Tensor:
    """Mean squared error between predicted and ground-truth supervised slots."""
    if c_sp_hat.shape != c_sp.shape:
        raise ContractViolation(
            f"supervised slot shapes differ: {tuple(c_sp_hat.shape)} vs {tuple(c_sp.shape)}")
    return ((c_sp_hat - c_sp) ** 2).mean()


def _grad_x(a: torch.Tensor) -> torch.Tensor:
    """Central difference along width, one-sided at the edges (last dim)."""
    return torch.cat([
        (a[..., 1:2] - a[..., 0:1]),
        0.5 * (a[..., 2:] - a[..., :-2]),
        (a[..., -1:] - a[..., -2:-1]),
    ], dim=-1)


def _grad_y(a: torch.Tensor) -> torch.Tensor:
    return _grad_x(a.transpose(-1, -2)).transpose(-1, -2)


def loss_ae(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Reconstruction loss: L1 velocity + L1 velocity gradients + L2 density.

    Inputs are (.., 3, H, W) with channels (u_x, u_y, rho).
    """
    if x.shape != x_hat.shape:
        raise ContractViolation(
            f"field shapes differ: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    if x.shape[-3] != 3:
        raise ContractViolation("loss_ae expects 3 channels (u_x, u_y, rho)")
    vel, vel_hat = x[..., :2, :, :], x_hat[..., :2, :, :]
    den, den_hat = x[..., 2, :, :], x_hat[..., 2, :, :]
    term_vel = (vel - vel_hat).abs().mean()
    grads = torch.cat([_grad_x(vel) - _grad_x(vel_hat),
                       _grad_y(vel) - _grad_y(vel_hat)], dim=-3)
    term_grad = grads.abs().mean()
    term_den = ((den - den_hat) ** 2).mean()
    return term_vel + term_grad + term_den


def loss_total(ae_direct: torch.Tensor, sup: torch.Tensor, split_vel: torch.Tensor,
               split_den: torch.Tensor, ae_pred_terms: list[torch.Tensor],
               weights: LossWeights) -> tuple[torch.Tensor, LossReport]:
    """Weighted combined loss; prediction terms are summed over the rollout."""
    ae_pred = sum(ae_pred_terms, start=torch.zeros((), dtype=ae_direct.dtype))
    total = (weights.w_ae_direct * ae_direct + weights.w_sup * sup
             + weights.w_split_vel * split_vel + weights.w_split_den * split_den
             + weights.w_ae_pred * ae_pred)
    report = LossReport(float(ae_direct.detach()), float(sup.detach()),
                        float(split_vel.detach()), float(split_den.detach()),
                        float(ae_pred.detach()), float(total.detach()))
    return total, report
