"""Slate click models: outcome probabilities, likelihoods, priors, posteriors.

Three multinomial models share one parameterization. Every catalog item i
has a positive click score ``theta[i]`` and the non-click outcome has a
positive score ``phi``. On a slate the outcome probabilities are the scores
normalized over the outcomes the model observes:

* ``full``   -- non-click and a click on each of the K items,
* ``reward`` -- non-click and "some click" (score = sum of item scores),
* ``rank``   -- which of the K items was clicked, given a click.

Inference works on log-parameters ``x = [log theta, log phi]`` (``log phi``
omitted for the rank model), see :class:`LogPosterior`.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.special import gammaln

__all__ = [
    "ModelKind",
    "Slate",
    "SlateRecord",
    "Dataset",
    "ModelParams",
    "PriorConfig",
    "LogPosterior",
    "full_probs",
    "reward_probs",
    "rank_probs",
    "log_multinomial_pmf",
    "gamma_logpdf",
    "log_prior",
    "log_posterior",
    "grad_log_posterior",
]


class ModelKind(str, enum.Enum):
    FULL = "full"
    REWARD = "reward"
    RANK = "rank"

    @property
    def has_phi(self) -> bool:
        return self is not ModelKind.RANK

    @property
    def view(self) -> str:
        """Name of the dataset view this model consumes."""
        return {"full": "raw", "reward": "reward", "rank": "rank"}[self.value]

    @classmethod
    def parse(cls, value: "ModelKind | str") -> "ModelKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown model kind {value!r}") from None


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


# -- domain types -----------------------------------------------------------


@dataclass(frozen=True)
class Slate:
    """K distinct item indices in canonical (sorted) order."""

    items: tuple[int, ...]

    def __post_init__(self):
        items = tuple(int(i) for i in self.items)
        object.__setattr__(self, "items", items)
        if len(items) < 2:
            raise ValueError(f"slate needs at least 2 items, got {items}")
        if min(items) < 0:
            raise ValueError(f"negative item index in slate {items}")
        if any(a >= b for a, b in zip(items, items[1:])):
            raise ValueError(f"slate items must be strictly increasing: {items}")

    @classmethod
    def of(cls, items: Iterable[int]) -> "Slate":
        """Build a slate from items in any order (duplicates rejected)."""
        items = [int(i) for i in items]
        if len(set(items)) != len(items):
            raise ValueError(f"duplicate items in slate {items}")
        return cls(tuple(sorted(items)))

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[int]:
        return iter(self.items)

    def check(self, catalog_size: int) -> None:
        if self.items[-1] >= catalog_size:
            raise ValueError(
                f"slate {self.items} references item >= catalog size {catalog_size}")


@dataclass(frozen=True)
class SlateRecord:
    slate: Slate
    non_clicks: int
    clicks: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "non_clicks", int(self.non_clicks))
        object.__setattr__(self, "clicks", tuple(int(c) for c in self.clicks))
        if self.non_clicks < 0 or any(c < 0 for c in self.clicks):
            raise ValueError("counts must be non-negative")

    @property
    def total_clicks(self) -> int:
        return sum(self.clicks)

    @property
    def impressions(self) -> int:
        return self.non_clicks + self.total_clicks


_VIEWS = ("raw", "reward", "rank")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Aggregated interaction counts, one row per distinct slate.

    Stored column-wise: ``slates`` is an (R, K) int array, ``non_clicks`` has
    shape (R,) and ``clicks`` has shape (R, K) -- or (R, 1) for the reward
    view, where the single column is the total click count of the slate.
    """

    catalog_size: int
    slate_size: int
    slates: np.ndarray
    non_clicks: np.ndarray
    clicks: np.ndarray
    view: str = "raw"

    def __post_init__(self):
        N, K = int(self.catalog_size), int(self.slate_size)
        object.__setattr__(self, "catalog_size", N)
        object.__setattr__(self, "slate_size", K)
        if self.view not in _VIEWS:
            raise ValueError(f"unknown dataset view {self.view!r}")
        if K < 2 or K > N:
            raise ValueError(f"need 2 <= slate_size <= catalog_size, got K={K}, N={N}")
        slates = np.array(self.slates, dtype=np.int64).reshape(-1, K)
        R = slates.shape[0]
        nc = np.array(self.non_clicks, dtype=np.int64).reshape(R)
        width = 1 if self.view == "reward" else K
        clicks = np.array(self.clicks, dtype=np.int64).reshape(R, width)
        if R:
            if slates.min() < 0 or slates.max() >= N:
                raise ValueError("slate item index out of range")
            if np.any(np.diff(slates, axis=1) <= 0):
                raise ValueError("slates must be canonical (strictly increasing items)")
            if nc.min() < 0 or clicks.min() < 0:
                raise ValueError("counts must be non-negative")
            if len(np.unique(slates, axis=0)) != R:
                raise ValueError("duplicate slate rows; aggregate counts per slate")
        if self.view == "rank" and R and nc.any():
            raise ValueError("rank view carries no non-clicks")
        object.__setattr__(self, "slates", _readonly(slates))
        object.__setattr__(self, "non_clicks", _readonly(nc))
        object.__setattr__(self, "clicks", _readonly(clicks))

    @classmethod
    def from_records(cls, catalog_size: int, slate_size: int,
                     records: Sequence[SlateRecord], view: str = "raw") -> "Dataset":
        width = 1 if view == "reward" else slate_size
        for rec in records:
            rec.slate.check(catalog_size)
            if len(rec.slate) != slate_size:
                raise ValueError(f"slate {rec.slate.items} does not have {slate_size} items")
            if len(rec.clicks) != width:
                raise ValueError(f"expected {width} click counts, got {len(rec.clicks)}")
        return cls(
            catalog_size, slate_size,
            np.array([r.slate.items for r in records], dtype=np.int64).reshape(-1, slate_size),
            np.array([r.non_clicks for r in records], dtype=np.int64),
            np.array([r.clicks for r in records], dtype=np.int64).reshape(-1, width),
            view=view,
        )

    def __len__(self) -> int:
        return self.slates.shape[0]

    @property
    def records(self) -> list[SlateRecord]:
        return [SlateRecord(Slate(tuple(s)), nc, tuple(c))
                for s, nc, c in zip(self.slates.tolist(), self.non_clicks.tolist(),
                                    self.clicks.tolist())]

    @property
    def total_clicks(self) -> np.ndarray:
        return self.clicks.sum(axis=1)

    @property
    def impressions(self) -> np.ndarray:
        return self.non_clicks + self.total_clicks

    def digest(self) -> str:
        """SHA-256 over the raw counts; equal digests mean identical data."""
        h = hashlib.sha256()
        h.update(f"{self.catalog_size},{self.slate_size},{self.view};".encode())
        for a in (self.slates, self.non_clicks, self.clicks):
            h.update(np.ascontiguousarray(a, dtype="<i8").tobytes())
        return h.hexdigest()

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.catalog_size == other.catalog_size
                and self.slate_size == other.slate_size
                and self.view == other.view
                and np.array_equal(self.slates, other.slates)
                and np.array_equal(self.non_clicks, other.non_clicks)
                and np.array_equal(self.clicks, other.clicks))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ModelParams:
    theta: np.ndarray
    phi: float | None = None

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        if theta.size == 0 or not np.all(np.isfinite(theta)) or np.any(theta <= 0):
            raise ValueError("theta must be a non-empty vector of finite positive values")
        object.__setattr__(self, "theta", _readonly(theta))
        if self.phi is not None:
            phi = float(self.phi)
            if not math.isfinite(phi) or phi <= 0:
                raise ValueError(f"phi must be finite and positive, got {phi}")
            object.__setattr__(self, "phi", phi)

    @property
    def catalog_size(self) -> int:
        return self.theta.size

    def to_log(self) -> np.ndarray:
        x = np.log(self.theta)
        return x if self.phi is None else np.append(x, math.log(self.phi))

    @classmethod
    def from_log(cls, x: np.ndarray, kind: ModelKind | str) -> "ModelParams":
        kind = ModelKind.parse(kind)
        x = np.asarray(x, dtype=float)
        if kind.has_phi:
            return cls(np.exp(x[:-1]), float(np.exp(x[-1])))
        return cls(np.exp(x))

    def names(self) -> list[str]:
        names = [f"theta_{i}" for i in range(self.catalog_size)]
        return names + ["phi"] if self.phi is not None else names

    def to_dict(self) -> dict:
        d = {"theta": self.theta.tolist()}
        if self.phi is not None:
            d["phi"] = self.phi
        return d

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.phi == other.phi and np.array_equal(self.theta, other.theta)

    __hash__ = None


@dataclass(frozen=True)
class PriorConfig:
    """Gamma(shape, rate) priors on every theta_i and on phi.

    A shape above 1 is needed for a finite posterior mode: all three
    likelihoods are invariant to rescaling the scores, so only the prior's
    ``(shape - 1) * log(x)`` term keeps the scale away from zero.
    """

    theta_shape: float = 2.0
    theta_rate: float = 1e-3
    phi_shape: float = 2.0
    phi_rate: float = 1e-3

    def __post_init__(self):
        for name in ("theta_shape", "theta_rate", "phi_shape", "phi_rate"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive, got {v}")
            object.__setattr__(self, name, v)

    def to_dict(self) -> dict:
        return {"theta_shape": self.theta_shape, "theta_rate": self.theta_rate,
                "phi_shape": self.phi_shape, "phi_rate": self.phi_rate}


# -- per-slate probabilities ------------------------------------------------


def _slate_scores(theta: np.ndarray, slate: Slate | Sequence[int]) -> np.ndarray:
    if not isinstance(slate, Slate):
        slate = Slate(tuple(slate))
    slate.check(len(theta))
    return np.asarray(theta, dtype=float)[list(slate.items)]


def full_probs(params: ModelParams, slate: Slate | Sequence[int]) -> tuple[float, np.ndarray]:
    """Return ``(q, p)``: non-click probability and per-position click probabilities."""
    if params.phi is None:
        raise ValueError("full model requires phi")
    t = _slate_scores(params.theta, slate)
    denom = params.phi + t.sum()
    return params.phi / denom, t / denom


def reward_probs(params: ModelParams, slate: Slate | Sequence[int]) -> tuple[float, float]:
    if params.phi is None:
        raise ValueError("reward model requires phi")
    t = _slate_scores(params.theta, slate)
    s = t.sum()
    denom = params.phi + s
    return params.phi / denom, s / denom


def rank_probs(theta, slate: Slate | Sequence[int]) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0) or not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite and positive")
    t = _slate_scores(theta, slate)
    return t / t.sum()


# -- densities ----------------------------------------------------------------


def log_multinomial_pmf(counts, probs, *, atol: float = 1e-9) -> float:
    """Log pmf of a multinomial with ``sum(counts)`` trials.

    Outcomes with zero probability and zero count are skipped; a positive
    count on a zero-probability outcome gives ``-inf``.
    """
    c = np.asarray(counts)
    p = np.asarray(probs, dtype=float)
    if c.ndim != 1 or c.shape != p.shape:
        raise ValueError(f"counts and probs must be 1-D of equal length, got {c.shape} and {p.shape}")
    if np.any(c < 0) or np.any(c != np.floor(c)):
        raise ValueError("counts must be non-negative integers")
    if np.any(p < 0) or abs(p.sum() - 1.0) > atol:
        raise ValueError("probs must be a probability vector")
    c = c.astype(float)
    if np.any((c > 0) & (p == 0)):
        return -math.inf
    nz = c > 0
    n = c.sum()
    return float(gammaln(n + 1) - gammaln(c[nz] + 1).sum() + (c[nz] * np.log(p[nz])).sum())


def gamma_logpdf(x, shape: float, rate: float):
    x = np.asarray(x, dtype=float)
    return shape * math.log(rate) - gammaln(shape) + (shape - 1) * np.log(x) - rate * x


def log_prior(params: ModelParams, prior: PriorConfig, kind: ModelKind | str) -> float:
    kind = ModelKind.parse(kind)
    lp = float(np.sum(gamma_logpdf(params.theta, prior.theta_shape, prior.theta_rate)))
    if kind.has_phi:
        if params.phi is None:
            raise ValueError(f"{kind.value} model requires phi")
        lp += float(gamma_logpdf(params.phi, prior.phi_shape, prior.phi_rate))
    return lp


# -- vectorized posterior in log-space -----------------------------------------


def _logsumexp_rows(s: np.ndarray) -> np.ndarray:
    m = s.max(axis=1)
    return m + np.log(np.exp(s - m[:, None]).sum(axis=1))


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class LogPosterior:
    """Log posterior of one model on one dataset as a function of log-parameters.

    ``x`` holds ``log theta`` followed by ``log phi`` (full/reward). The value
    is the posterior density of theta/phi evaluated at ``exp(x)``; no
    change-of-variables term is added (use ``log_jacobian`` for sampling).
    With ``include_constants=False`` the multinomial coefficients and prior
    normalizers are dropped, which leaves the argmax unchanged.
    """

    def __init__(self, kind: ModelKind | str, dataset: Dataset,
                 prior: PriorConfig | None = None, include_constants: bool = True):
        self.kind = kind = ModelKind.parse(kind)
        if dataset.view != kind.view:
            raise ValueError(
                f"{kind.value} model needs the {kind.view!r} view, dataset is {dataset.view!r}")
        self.dataset = dataset
        self.prior = prior = prior or PriorConfig()
        self.include_constants = include_constants
        N = dataset.catalog_size
        self.dim = N + 1 if kind.has_phi else N
        R = len(dataset)

        slates = dataset.slates
        if kind is ModelKind.FULL:
            self._idx = np.column_stack([np.full(R, N), slates])
            counts = np.column_stack([dataset.non_clicks, dataset.clicks])
        elif kind is ModelKind.RANK:
            self._idx = slates
            counts = dataset.clicks
        else:
            self._idx = slates
            counts = np.column_stack([dataset.non_clicks, dataset.clicks[:, 0]])
        self._counts = counts.astype(float)
        self._trials = self._counts.sum(axis=1)

        self._shape = np.full(self.dim, prior.theta_shape)
        self._rate = np.full(self.dim, prior.theta_rate)
        if kind.has_phi:
            self._shape[-1], self._rate[-1] = prior.phi_shape, prior.phi_rate

        const = 0.0
        if include_constants:
            const += float(gammaln(self._trials + 1).sum() - gammaln(self._counts + 1).sum())
            const += float(np.sum(self._shape * np.log(self._rate) - gammaln(self._shape)))
        self._const = const

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} log-parameters, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("log-parameters must be finite")
        return x

    def _outcome_logscores(self, x):
        if self.kind is ModelKind.REWARD:
            click = _logsumexp_rows(x[self._idx])
            return np.column_stack([np.full(click.shape, x[-1]), click])
        return x[self._idx]

    def log_likelihood(self, x) -> float:
        x = self._check(x)
        if not len(self.dataset):
            return 0.0
        s = self._outcome_logscores(x)
        ll = np.sum(self._counts * s) - np.sum(self._trials * _logsumexp_rows(s))
        if self.include_constants:
            ll += float(gammaln(self._trials + 1).sum() - gammaln(self._counts + 1).sum())
        return float(ll)

    def __call__(self, x) -> float:
        x = self._check(x)
        value = self._const + np.sum((self._shape - 1) * x - self._rate * np.exp(x))
        if len(self.dataset):
            s = self._outcome_logscores(x)
            value += np.sum(self._counts * s) - np.sum(self._trials * _logsumexp_rows(s))
        return float(value)

    def grad(self, x) -> np.ndarray:
        return self.value_and_grad(x)[1]

    def value_and_grad(self, x) -> tuple[float, np.ndarray]:
        x = self._check(x)
        value = self._const + np.sum((self._shape - 1) * x - self._rate * np.exp(x))
        g = (self._shape - 1) - self._rate * np.exp(x)
        if not len(self.dataset):
            return float(value), g
        s = self._outcome_logscores(x)
        lse = _logsumexp_rows(s)
        value += np.sum(self._counts * s) - np.sum(self._trials * lse)
        resid = self._counts - self._trials[:, None] * np.exp(s - lse[:, None])
        if self.kind is ModelKind.REWARD:
            w = _softmax_rows(x[self._idx])
            g[-1] += resid[:, 0].sum()
            g += np.bincount(self._idx.ravel(), (resid[:, 1:] * w).ravel(), minlength=self.dim)
        else:
            g += np.bincount(self._idx.ravel(), resid.ravel(), minlength=self.dim)
        return float(value), g

    def hessian(self, x) -> np.ndarray:
        """Dense Hessian w.r.t. the log-parameters (negative definite)."""
        x = self._check(x)
        D = self.dim
        H = np.diag(-self._rate * np.exp(x))
        if not len(self.dataset):
            return H
        s = self._outcome_logscores(x)
        pi = _softmax_rows(s)
        T = self._trials[:, None, None]
        # curvature of the multinomial in its outcome log-scores
        local = -T * (pi[:, :, None] * np.eye(pi.shape[1]) - pi[:, :, None] * pi[:, None, :])
        if self.kind is ModelKind.REWARD:
            # chain rule through s_click = logsumexp(theta scores on the slate)
            R, K = self._idx.shape
            w = _softmax_rows(x[self._idx])
            resid_click = self._counts[:, 1] - self._trials * pi[:, 1]
            block = np.empty((R, K + 1, K + 1))
            block[:, 0, 0] = local[:, 0, 0]
            block[:, 0, 1:] = local[:, 0, 1][:, None] * w
            block[:, 1:, 0] = block[:, 0, 1:]
            ww = w[:, :, None] * w[:, None, :]
            block[:, 1:, 1:] = (local[:, 1, 1] - resid_click)[:, None, None] * ww
            block[:, 1:, 1:] += (resid_click[:, None] * w)[:, :, None] * np.eye(K)
            local = block
            idx = np.column_stack([np.full(R, D - 1), self._idx])
        else:
            idx = self._idx
        flat = (idx[:, :, None] * D + idx[:, None, :]).ravel()
        H += np.bincount(flat, local.ravel(), minlength=D * D).reshape(D, D)
        return H

    @staticmethod
    def log_jacobian(x) -> float:
        """log |d exp(x) / dx|: turns the density of exp(x) into a density of x."""
        return float(np.sum(x))


def _params_to_log(kind: ModelKind, params: ModelParams, dataset: Dataset) -> np.ndarray:
    if params.catalog_size != dataset.catalog_size:
        raise ValueError(
            f"params have {params.catalog_size} items, dataset catalog has {dataset.catalog_size}")
    if kind.has_phi and params.phi is None:
        raise ValueError(f"{kind.value} model requires phi")
    x = np.log(params.theta)
    return np.append(x, math.log(params.phi)) if kind.has_phi else x


def log_posterior(kind: ModelKind | str, dataset: Dataset, params: ModelParams,
                  prior: PriorConfig | None = None) -> float:
    """Unnormalized log posterior: log-likelihood (with multinomial coefficients) plus log prior."""
    kind = ModelKind.parse(kind)
    return LogPosterior(kind, dataset, prior)(_params_to_log(kind, params, dataset))


def grad_log_posterior(kind: ModelKind | str, dataset: Dataset, log_params,
                       prior: PriorConfig | None = None) -> np.ndarray:
    return LogPosterior(kind, dataset, prior).grad(log_params)
