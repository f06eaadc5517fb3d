"""Finite-difference gradient verification for the model's parameters.

The numeric side is deliberately independent of autograd: it only needs a
callable that re-evaluates the scalar loss from the current parameter values.
Run it on a float64 model in eval mode (dropout off), otherwise the loss is
not a deterministic function of the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import torch
from torch import Tensor


@dataclass
class GradCheckReport:
    n_params: int
    n_pass: int
    max_rel_err: float
    rtol: float

    @property
    def frac_pass(self) -> float:
        return self.n_pass / self.n_params if self.n_params else 1.0


def central_difference_grad(loss_fn: Callable[[], Tensor], param: Tensor,
                            step: float = 1e-5) -> Tensor:
    """d loss / d param by central differences, one entry at a time."""
    grad = torch.zeros_like(param)
    flat = param.data.view(-1)
    gflat = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + step
            up = float(loss_fn())
            flat[i] = orig - step
            down = float(loss_fn())
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
    return grad


def relative_errors(analytic: Tensor, numeric: Tensor, denom_floor: float = 1e-8) -> Tensor:
    """|a - n| / max(|a|, |n|, floor); exact zeros on both sides score 0."""
    denom = torch.maximum(analytic.abs(), numeric.abs()).clamp_min(denom_floor)
    return (analytic - numeric).abs() / denom


def check_gradients(loss_fn: Callable[[], Tensor],
                    params: Iterable[tuple[str, Tensor]],
                    step: float = 1e-5, rtol: float = 1e-4) -> GradCheckReport:
    """Compare autograd gradients of ``loss_fn`` against central differences.

    ``params`` is an iterable of (name, tensor) pairs, e.g.
    ``model.named_parameters()``.  Returns the per-parameter pass fraction at
    the given relative tolerance.
    """
    named = [(n, p) for n, p in params]
    for _, p in named:
        if p.grad is not None:
            p.grad = None
    loss = loss_fn()
    loss.backward()

    n_total = 0
    n_pass = 0
    worst = 0.0
    for _, p in named:
        analytic = p.grad if p.grad is not None else torch.zeros_like(p)
        numeric = central_difference_grad(loss_fn, p, step=step)
        errs = relative_errors(analytic, numeric)
        n_total += errs.numel()
        n_pass += int((errs < rtol).sum())
        worst = max(worst, float(errs.max()))
    return GradCheckReport(n_params=n_total, n_pass=n_pass, max_rel_err=worst, rtol=rtol)
