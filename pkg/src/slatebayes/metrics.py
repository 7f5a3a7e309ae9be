"""L1 errors between estimated and true per-slate probabilities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ModelParams, Slate

__all__ = ["L1Report", "l1_click_rank_error", "l1_nonclick_error"]

CLICK_RANK = "click_rank"
NON_CLICK = "non_click"


@dataclass(frozen=True)
class L1Report:
    value: float
    num_slates: int
    kind: str

    def to_dict(self) -> dict:
        return {"value": self.value, "num_slates": self.num_slates, "kind": self.kind}


def _as_array(slates) -> np.ndarray:
    if isinstance(slates, np.ndarray):
        return slates.astype(np.int64, copy=False)
    return np.array([s.items if isinstance(s, Slate) else tuple(s) for s in slates],
                    dtype=np.int64)


def _positive(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise ValueError(f"{name} must be finite and positive")
    return v


def l1_click_rank_error(theta_hat, theta_true, slates, *, all_positions: bool = False) -> L1Report:
    """Sum over slates of |P_hat(click on a_1 | click) - P(click on a_1 | click)|.

    ``a_1`` is the first item of the canonical (sorted) slate. With
    ``all_positions=True`` the absolute differences of every position are
    summed instead.
    """
    th = _positive(theta_hat, "theta_hat")
    tt = _positive(theta_true, "theta_true")
    if th.shape != tt.shape:
        raise ValueError(f"theta_hat has {th.size} items, theta_true has {tt.size}")
    s = _as_array(slates)
    if s.size and s.max() >= th.size:
        raise ValueError("slate references an item outside the catalog")
    ph = th[s] / th[s].sum(axis=1, keepdims=True)
    pt = tt[s] / tt[s].sum(axis=1, keepdims=True)
    diff = np.abs(ph - pt)
    value = diff.sum() if all_positions else diff[:, 0].sum()
    return L1Report(float(value), len(s), CLICK_RANK)


def l1_nonclick_error(params_hat: ModelParams, params_true: ModelParams, slates) -> L1Report:
    """Sum over slates of |q_hat - q| with q = phi / (phi + sum of slate scores)."""
    if params_hat.phi is None or params_true.phi is None:
        raise ValueError("non-click error needs phi on both parameter sets")
    if params_hat.catalog_size != params_true.catalog_size:
        raise ValueError("parameter sets have different catalog sizes")
    s = _as_array(slates)
    if s.size and s.max() >= params_hat.catalog_size:
        raise ValueError("slate references an item outside the catalog")
    qh = params_hat.phi / (params_hat.phi + params_hat.theta[s].sum(axis=1))
    qt = params_true.phi / (params_true.phi + params_true.theta[s].sum(axis=1))
    return L1Report(float(np.abs(qh - qt).sum()), len(s), NON_CLICK)
