"""Central finite-difference checks for the mask and parameter gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimator import EstimatorModel, backward, forward
from .losses import PairLoss

#: Denominator floor of :func:`relative_error`, keeps ~0 gradients from dividing noise by noise.
REL_ERR_FLOOR = 1e-6


def relative_error(analytic, numeric, floor: float = REL_ERR_FLOOR):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


@dataclass
class GradCheck:
    name: str
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def rel_errors(self) -> np.ndarray:
        return relative_error(self.analytic, self.numeric)

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_errors.max()) if self.analytic.size else 0.0


def check_mask_gradient(loss: PairLoss, mask, n_coords: int = 100, h: float = 1e-5, seed: int = 0) -> GradCheck:
    """Compare ``loss`` mask gradients with central differences at random entries."""
    mask = np.array(mask, dtype=np.float64)
    rng = np.random.default_rng(seed)
    _, grad = loss(mask)
    flat = rng.choice(mask.size, size=min(n_coords, mask.size), replace=False)
    numeric = np.empty(flat.size)
    for k, idx in enumerate(flat):
        i = np.unravel_index(idx, mask.shape)
        orig = mask[i]
        mask[i] = orig + h
        up = loss(mask, need_grad=False)[0].total
        mask[i] = orig - h
        down = loss(mask, need_grad=False)[0].total
        mask[i] = orig
        numeric[k] = (up - down) / (2 * h)
    return GradCheck("mask", grad.ravel()[flat], numeric)


def _param_fd(model: EstimatorModel, objective, layer: int, flat, h: float) -> np.ndarray:
    p = model.params[layer]
    out = np.empty(len(flat))
    for k, idx in enumerate(flat):
        i = np.unravel_index(idx, p.shape)
        orig = p[i]
        p[i] = orig + h
        up = objective()
        p[i] = orig - h
        down = objective()
        p[i] = orig
        out[k] = (up - down) / (2 * h)
    return out


def check_param_gradients(model: EstimatorModel, frames, upstream=None, loss: PairLoss | None = None,
                          n_coords: int = 50, h: float = 1e-5, seed: int = 0) -> list[GradCheck]:
    """Per-parameter-array finite-difference check.

    With ``upstream`` the objective is ``sum(upstream * mask)`` (the estimator
    alone); with ``loss`` it is the full training loss of the predicted mask.
    """
    if (upstream is None) == (loss is None):
        raise ValueError("pass exactly one of upstream or loss")
    rng = np.random.default_rng(seed)
    if loss is None:
        upstream = np.asarray(upstream, dtype=np.float64)

        def objective():
            return float(np.sum(upstream * forward(model, frames)))

        g_mask = upstream
    else:
        def objective():
            return loss(forward(model, frames), need_grad=False)[0].total

        g_mask = loss(forward(model, frames))[1]
    grads = backward(model, frames, g_mask)
    checks = []
    for layer, (p, g) in enumerate(zip(model.params, grads)):
        flat = rng.choice(p.size, size=min(n_coords, p.size), replace=False)
        numeric = _param_fd(model, objective, layer, flat, h)
        kind = "W" if layer % 2 == 0 else "b"
        checks.append(GradCheck(f"{kind}{layer // 2 + 1}", g.ravel()[flat], numeric))
    return checks
