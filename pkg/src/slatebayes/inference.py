"""MAP estimation and random-walk Metropolis sampling in log-parameter space."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ._meta import SPEC_VERSION
from .core import Dataset, LogPosterior, ModelKind, ModelParams, PriorConfig, log_posterior

__all__ = [
    "MapConfig",
    "MapResult",
    "McmcConfig",
    "PosteriorSamples",
    "NumericalFailure",
    "initial_log_params",
    "map_estimate",
    "mcmc_sample",
]


# Relative tolerance on objective decreases accepted by the line search.
OBJECTIVE_RTOL = 1e-12


class NumericalFailure(ArithmeticError):
    """The log posterior could not be evaluated at a required point."""


@dataclass(frozen=True)
class MapConfig:
    """Optimizer settings.

    ``method="newton"`` takes Newton steps (the log posterior is concave in
    log-space) and ``method="gradient"`` plain steepest ascent starting at
    ``initial_step``; both backtrack until the Armijo condition holds.
    """

    max_iterations: int = 5000
    gradient_tolerance: float = 1e-8
    initial_step: float = 0.1
    backtracking: float = 0.5
    armijo: float = 1e-4
    method: str = "newton"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.gradient_tolerance > 0 and self.initial_step > 0 and self.armijo > 0):
            raise ValueError("gradient_tolerance, initial_step and armijo must be positive")
        if not 0 < self.backtracking < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")
        if self.method not in ("newton", "gradient"):
            raise ValueError(f"unknown optimizer method {self.method!r}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class MapResult:
    kind: ModelKind
    params: ModelParams
    log_posterior_value: float
    iterations: int
    converged: bool
    final_gradient_norm: float
    trace: tuple[float, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "spec_version": SPEC_VERSION,
            "type": "map_result",
            "model": self.kind.value,
            "parameters": dict(zip(self.params.names(), _param_values(self.params))),
            **self.params.to_dict(),
            "log_posterior": self.log_posterior_value,
            "iterations": self.iterations,
            "converged": self.converged,
            "final_gradient_norm": self.final_gradient_norm,
        }


def _param_values(params: ModelParams) -> list[float]:
    vals = params.theta.tolist()
    return vals + [params.phi] if params.phi is not None else vals


def initial_log_params(kind: ModelKind | str, dataset: Dataset) -> np.ndarray:
    """Data-scaled starting point: per-item click rate per slate shown, and
    non-clicks per record for phi (with +1 smoothing)."""
    kind = ModelKind.parse(kind)
    N = dataset.catalog_size
    shown = np.bincount(dataset.slates.ravel(), minlength=N)
    if dataset.view == "reward":
        # spread each slate's clicks evenly over its items
        per_item = np.repeat(dataset.clicks[:, 0] / dataset.slate_size, dataset.slate_size)
        clicks = np.bincount(dataset.slates.ravel(), per_item, minlength=N)
    else:
        clicks = np.bincount(dataset.slates.ravel(), dataset.clicks.ravel(), minlength=N)
    x = np.log1p(clicks) - np.log1p(shown)
    if kind.has_phi:
        x = np.append(x, math.log1p(dataset.non_clicks.sum()) - math.log1p(len(dataset)))
    return x


def _safe_value(obj: LogPosterior, x: np.ndarray) -> float:
    if not np.all(np.isfinite(x)):
        return -math.inf
    with np.errstate(over="ignore", invalid="ignore"):
        v = obj(x)
    return v if math.isfinite(v) else -math.inf


def map_estimate(kind: ModelKind | str, dataset: Dataset, prior: PriorConfig | None = None,
                 config: MapConfig | None = None, x0=None) -> MapResult:
    """Posterior mode of theta (and phi) found by ascent on the log-parameters.

    The dataset must already be in the view the model consumes. Running out
    of iterations is reported through ``converged=False``.
    """
    kind = ModelKind.parse(kind)
    prior = prior or PriorConfig()
    config = config or MapConfig()
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    obj = LogPosterior(kind, dataset, prior, include_constants=False)
    x = initial_log_params(kind, dataset) if x0 is None else np.array(x0, dtype=float)

    with np.errstate(over="ignore", invalid="ignore"):
        f, g = obj.value_and_grad(x)
    if not (math.isfinite(f) and np.all(np.isfinite(g))):
        raise NumericalFailure(f"log posterior is not finite at the initial point ({f})")

    trace = [f]
    converged = False
    it = 0
    while True:
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= config.gradient_tolerance:
            converged = True
            break
        if it >= config.max_iterations:
            break
        it += 1

        if config.method == "newton":
            try:
                d = cho_solve(cho_factor(-obj.hessian(x)), g)
                t = 1.0
            except (LinAlgError, ValueError):
                d, t = g, config.initial_step
            if not np.all(np.isfinite(d)) or g @ d <= 0:
                d, t = g, config.initial_step
        else:
            d, t = g, config.initial_step
        slope = float(g @ d)
        # The objective is a sum of large cancelling terms (counts times
        # log-scores), so its rounding error is far above eps*|f|. Without
        # slack the search stalls one step short of the optimum.
        slack = OBJECTIVE_RTOL * max(1.0, abs(f))
        for _ in range(80):
            x_new = x + t * d
            f_new = _safe_value(obj, x_new)
            if f_new >= f + config.armijo * t * slope - slack:
                break
            t *= config.backtracking
        else:
            break  # no acceptable step
        if np.array_equal(x_new, x):
            break

        x = x_new
        with np.errstate(over="ignore", invalid="ignore"):
            f, g = obj.value_and_grad(x)
        trace.append(f)

    params = ModelParams.from_log(x, kind)
    return MapResult(
        kind=kind,
        params=params,
        log_posterior_value=log_posterior(kind, dataset, params, prior),
        iterations=it,
        converged=converged,
        final_gradient_norm=float(np.max(np.abs(g))),
        trace=tuple(trace),
    )


# -- MCMC ------------------------------------------------------------------------


@dataclass(frozen=True)
class McmcConfig:
    num_samples: int = 2000
    burn_in: int = 2000
    thin: int = 5
    target_acceptance: float = 0.234
    adaptation_window: int = 50
    seed: int = 0

    def __post_init__(self):
        for name in ("num_samples", "burn_in", "thin", "adaptation_window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.target_acceptance < 1:
            raise ValueError("target_acceptance must lie in (0, 1)")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


ACCEPTANCE_BAND = (0.05, 0.7)


@dataclass(frozen=True, eq=False)
class PosteriorSamples:
    kind: ModelKind
    samples: np.ndarray  # (num_samples, dim), log-parameters
    acceptance_rate: float
    proposal_scale: float
    names: tuple[str, ...]
    warning: str | None = None

    @property
    def theta(self) -> np.ndarray:
        """Samples of theta on the natural scale, shape (num_samples, N)."""
        t = self.samples[:, :-1] if self.kind.has_phi else self.samples
        return np.exp(t)

    @property
    def phi(self) -> np.ndarray | None:
        return np.exp(self.samples[:, -1]) if self.kind.has_phi else None

    def params(self, i: int) -> ModelParams:
        return ModelParams.from_log(self.samples[i], self.kind)

    def to_dict(self, include_samples: bool = True) -> dict:
        d = {
            "spec_version": SPEC_VERSION,
            "type": "posterior_samples",
            "model": self.kind.value,
            "parameter_names": list(self.names),
            "space": "log",
            "num_samples": int(self.samples.shape[0]),
            "acceptance_rate": self.acceptance_rate,
            "proposal_scale": self.proposal_scale,
            "warning": self.warning,
            "posterior_mean": dict(zip(self.names, np.exp(self.samples).mean(axis=0).tolist())),
        }
        if include_samples:
            d["samples"] = self.samples.tolist()
        return d

    def to_csv(self) -> str:
        """One row per sample, natural-scale parameter values."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_index", *self.names])
        for i, row in enumerate(np.exp(self.samples).tolist()):
            w.writerow([i, *(repr(v) for v in row)])
        return buf.getvalue()


def _initial_scale(obj: LogPosterior, x: np.ndarray) -> float:
    # optimal isotropic random-walk scale for a Gaussian target with
    # precision P is 2.38 / sqrt(trace(P))
    trace = float(np.trace(-obj.hessian(x)))
    if trace > 0 and math.isfinite(trace):
        return 2.38 / math.sqrt(trace)
    return 0.1 / math.sqrt(x.size)


def mcmc_sample(kind: ModelKind | str, dataset: Dataset, prior: PriorConfig | None = None,
                config: McmcConfig | None = None, map_config: MapConfig | None = None,
                x0=None) -> PosteriorSamples:
    """Adaptive random-walk Metropolis on log(theta), log(phi).

    The target is the posterior of the natural-scale parameters carried over
    to log-space (Jacobian included). The proposal is an isotropic Gaussian
    whose scale is tuned by Robbins-Monro on its logarithm, once per
    adaptation window during burn-in, and then frozen. The chain starts at
    the MAP point (the prior mode for an empty dataset).
    """
    kind = ModelKind.parse(kind)
    prior = prior or PriorConfig()
    config = config or McmcConfig()
    obj = LogPosterior(kind, dataset, prior, include_constants=False)

    if x0 is not None:
        x = np.array(x0, dtype=float)
    elif len(dataset):
        x = map_estimate(kind, dataset, prior, map_config).params.to_log()
    else:
        shape = [prior.theta_shape] * dataset.catalog_size
        rate = [prior.theta_rate] * dataset.catalog_size
        if kind.has_phi:
            shape.append(prior.phi_shape)
            rate.append(prior.phi_rate)
        x = np.log(np.array(shape) / np.array(rate))

    def target(z):
        return _safe_value(obj, z) + float(np.sum(z))

    lp = target(x)
    if not math.isfinite(lp):
        raise NumericalFailure("log posterior is not finite at the chain's start")

    gen = np.random.Generator(np.random.Philox(key=int(config.seed)))
    d = x.size
    log_scale = math.log(_initial_scale(obj, x))
    scale = math.exp(log_scale)

    window_accepts = 0
    window_index = 0
    accepted = 0
    out = np.empty((config.num_samples, d))
    total = config.burn_in + config.num_samples * config.thin
    for step in range(total):
        prop = x + scale * gen.standard_normal(d)
        lp_prop = target(prop)
        accept = math.log(gen.random()) < lp_prop - lp
        if accept:
            x, lp = prop, lp_prop
        if step < config.burn_in:
            window_accepts += accept
            if (step + 1) % config.adaptation_window == 0:
                window_index += 1
                rate = window_accepts / config.adaptation_window
                log_scale += (rate - config.target_acceptance) / math.sqrt(window_index)
                scale = math.exp(log_scale)
                window_accepts = 0
        else:
            accepted += accept
            j = step - config.burn_in
            if (j + 1) % config.thin == 0:
                out[j // config.thin] = x

    acc = accepted / (config.num_samples * config.thin)
    warning = None
    lo, hi = ACCEPTANCE_BAND
    if not lo <= acc <= hi:
        warning = f"post-burn-in acceptance rate {acc:.3f} outside [{lo}, {hi}]"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)

    names = [f"theta_{i}" for i in range(dataset.catalog_size)]
    if kind.has_phi:
        names.append("phi")
    out.setflags(write=False)
    return PosteriorSamples(kind, out, acc, scale, tuple(names), warning)
