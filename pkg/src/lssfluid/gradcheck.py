"""Central-difference gradient verification for every layer and loss term.

The oracle is a plain two-sided finite difference computed element by
element, independent of autograd. Relative error is measured per tensor as
max_i |analytic_i - fd_i| / max(max|analytic|, max|fd|, 1e-8).
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .losses import LossWeights, loss_ae, loss_split, loss_sup, loss_total
from .nets import NetConfig, curl_channels, forward_decoder, forward_encoder, \
    forward_predictor, init_params

FD_STEP = 1e-5
TOLERANCE = 1e-4


def fd_gradient(fn, tensor: torch.Tensor, step: float = FD_STEP) -> torch.Tensor:
    """Two-sided finite-difference gradient of scalar fn wrt one tensor."""
    flat = tensor.detach().reshape(-1)
    grad = torch.zeros_like(flat)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + step
        f_plus = float(fn())
        flat[i] = orig - step
        f_minus = float(fn())
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * step)
    return grad.reshape(tensor.shape)


def max_rel_error(fn, tensors: dict[str, torch.Tensor]) -> float:
    """Compare autograd gradients of scalar fn against the FD oracle."""
    for t in tensors.values():
        t.requires_grad_(True)
        t.grad = None
    value = fn()
    value.backward()
    worst = 0.0
    for t in tensors.values():
        analytic = (t.grad if t.grad is not None else torch.zeros_like(t)).detach().clone()
        with torch.no_grad():
            fd = fd_gradient(lambda: fn(), t)
        scale = max(analytic.abs().max().item(), fd.abs().max().item(), 1e-8)
        worst = max(worst, (analytic - fd).abs().max().item() / scale)
        t.requires_grad_(False)
    return worst


def _proj(a: torch.Tensor, r: torch.Tensor) -> torch.Tensor:
    return (a * r).sum()


def run_gradient_checks(seed: int = 0) -> list[tuple[str, float]]:
    """Gradient checks for each layer kind and loss term; returns (name, err)."""
    rng = np.random.default_rng([seed, 0xFD])
    results: list[tuple[str, float]] = []

    def t(*shape, lo=-1.0, hi=1.0):
        return torch.from_numpy(rng.uniform(lo, hi, size=shape)).to(torch.float64)

    # conv2d
    conv = nn.Conv2d(2, 3, 3, padding=1).to(torch.float64)
    x = t(1, 2, 5, 6)
    r = t(1, 3, 5, 6)
    results.append(("conv2d", max_rel_error(
        lambda: _proj(conv(x), r),
        {"x": x, "w": conv.weight, "b": conv.bias})))

    # dense
    lin = nn.Linear(7, 4).to(torch.float64)
    x = t(3, 7)
    r = t(3, 4)
    results.append(("dense", max_rel_error(
        lambda: _proj(lin(x), r), {"x": x, "w": lin.weight, "b": lin.bias})))

    # LSTM cell (single layer unrolled over a short sequence)
    lstm = nn.LSTM(5, 6, num_layers=1, batch_first=True).to(torch.float64)
    x = t(2, 3, 5)
    r = t(2, 3, 6)
    params = {name: p for name, p in lstm.named_parameters()}
    params["x"] = x
    results.append(("lstm_cell", max_rel_error(
        lambda: _proj(lstm(x)[0], r), params)))

    # conv1d
    c1 = nn.Conv1d(4, 3, 2).to(torch.float64)
    x = t(2, 4, 5)
    r = t(2, 3, 4)
    results.append(("conv1d", max_rel_error(
        lambda: _proj(c1(x), r), {"x": x, "w": c1.weight, "b": c1.bias})))

    # curl layer
    psi = t(2, 6, 7)
    r = t(2, 2, 6, 7)
    results.append(("curl_layer", max_rel_error(
        lambda: _proj(curl_channels(psi), r), {"psi": psi})))

    # leaky rectifier away from its kink
    act = nn.LeakyReLU(0.2)
    x = t(4, 5)
    x = torch.where(x.abs() < 0.05, x + 0.1, x).detach()
    r = t(4, 5)
    results.append(("leaky_relu", max_rel_error(lambda: _proj(act(x), r), {"x": x})))

    # loss terms (L1 arguments kept away from zero differences)
    c = t(3, 12)
    c = (c + torch.sign(c) * 0.1).detach()
    results.append(("loss_split", max_rel_error(lambda: loss_split(c, 2, 7), {"c": c})))

    a, b = t(3, 2), t(3, 2)
    results.append(("loss_sup", max_rel_error(lambda: loss_sup(a, b), {"a": a, "b": b})))

    x = t(1, 3, 6, 6)
    x_hat = (x + 0.3 + 0.2 * t(1, 3, 6, 6)).detach()
    results.append(("loss_ae", max_rel_error(
        lambda: loss_ae(x, x_hat), {"x": x, "x_hat": x_hat})))

    parts = [t(), t(), t(), t(), t(), t()]
    weights = LossWeights(1.0, 0.5, 2.0, 0.25, 1.5)
    results.append(("loss_total", max_rel_error(
        lambda: loss_total(parts[0], parts[1], parts[2], parts[3], parts[4:], weights)[0],
        {f"p{i}": p for i, p in enumerate(parts)})))

    # composite micro networks (all parameters checked end to end)
    cfg = NetConfig(height=8, width=8, enc_layers=4, dec_layers=5, base_channels=2,
                    channel_cap=4, levels=1, latent_dim=6, n_sp=1, split_fraction=0.5,
                    window=2, lstm_hidden=6, pred_channels=4)
    nets = init_params(cfg, seed=seed)
    x = t(1, 3, 8, 8)
    r_code = t(1, 6)
    enc_params = {f"e.{n}": p for n, p in nets.encoder.named_parameters()}
    enc_params["x"] = x
    results.append(("encoder_composite", max_rel_error(
        lambda: _proj(forward_encoder(nets, x), r_code), enc_params)))

    code = t(1, 6)
    r_field = t(1, 3, 8, 8)
    dec_params = {f"d.{n}": p for n, p in nets.decoder.named_parameters()}
    dec_params["code"] = code
    results.append(("decoder_composite", max_rel_error(
        lambda: _proj(forward_decoder(nets, code), r_field), dec_params)))

    window = t(1, 2, 6)
    r_next = t(1, 6)
    pred_params = {f"p.{n}": p for n, p in nets.predictor.named_parameters()}
    pred_params["window"] = window
    results.append(("predictor_composite", max_rel_error(
        lambda: _proj(forward_predictor(nets, window)[1], r_next), pred_params)))

    return results
