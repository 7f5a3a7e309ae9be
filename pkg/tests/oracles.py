"""Reference computations that do not go through the package's vectorized code."""

import itertools
import math
from fractions import Fraction

import mpmath
import numpy as np

EXAMPLE_SLATES = [[0, 1], [0, 2], [1, 2]]  # phone=0, couscous=1, beer=2
EXAMPLE_NC = [661, 644, 626]
EXAMPLE_CLICKS = [[10, 29], [9, 47], [46, 28]]


def exact_log_multinomial_pmf(counts, probs) -> float:
    """Log pmf with exact rational arithmetic, rounded once at the end."""
    n = sum(counts)
    coef = Fraction(math.factorial(n))
    for c in counts:
        coef /= math.factorial(c)
    value = coef
    for c, p in zip(counts, probs):
        value *= Fraction(p) ** c
    mpmath.mp.dps = 50
    return float(mpmath.log(mpmath.mpf(value.numerator) / value.denominator))


def gamma_logpdf_direct(x, shape, rate):
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1) * math.log(x) - rate * x


def compositions(total, parts):
    """All non-negative integer vectors of length ``parts`` summing to ``total``."""
    for cut in itertools.combinations(range(total + parts - 1), parts - 1):
        prev, out = -1, []
        for c in cut:
            out.append(c - prev - 1)
            prev = c
        out.append(total + parts - 1 - prev - 1)
        yield out


def record_loglik(kind, theta, phi, slate, nc, clicks) -> float:
    """One record's multinomial log-likelihood written straight from the model table."""
    t = [theta[i] for i in slate]
    if kind == "full":
        denom = phi + sum(t)
        counts, probs = [nc, *clicks], [phi / denom] + [v / denom for v in t]
    elif kind == "reward":
        denom = phi + sum(t)
        counts, probs = [nc, sum(clicks)], [phi / denom, sum(t) / denom]
    else:
        counts, probs = list(clicks), [v / sum(t) for v in t]
    n = sum(counts)
    out = math.lgamma(n + 1)
    for c, p in zip(counts, probs):
        out += c * math.log(p) - math.lgamma(c + 1)
    return out


def brute_log_posterior(kind, slates, nc, clicks, theta, phi, prior) -> float:
    total = 0.0
    for s, n0, c in zip(slates, nc, clicks):
        total += record_loglik(kind, theta, phi, s, n0, c)
    for v in theta:
        total += gamma_logpdf_direct(v, prior.theta_shape, prior.theta_rate)
    if kind != "rank":
        total += gamma_logpdf_direct(phi, prior.phi_shape, prior.phi_rate)
    return total


def central_difference(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def example_full_grid_search(prior, resolution=1e-3):
    """Maximize the Full-model log posterior on the three-item example over log-ratio grids.

    Coordinates are log(theta_couscous/theta_phone), log(theta_beer/theta_phone)
    and log(phi/theta_phone); the overall scale is profiled out in closed form
    (the likelihood does not depend on it). Grids are refined around the best
    point down to ``resolution``.
    """
    slates = np.array(EXAMPLE_SLATES)
    nc = np.array(EXAMPLE_NC, dtype=float)
    cl = np.array(EXAMPLE_CLICKS, dtype=float)
    a = np.array([prior.theta_shape] * 3 + [prior.phi_shape])
    b = np.array([prior.theta_rate] * 3 + [prior.phi_rate])
    A = np.sum(a - 1)

    def objective(u1, u2, u3):
        # log scores relative to phone; shape (..., 4) = (phone, couscous, beer, phi)
        rel = np.stack([np.zeros_like(u1), u1, u2, u3], axis=-1)
        s = np.log(A / np.sum(b * np.exp(rel), axis=-1))
        logp = rel + s[..., None]
        ll = 0.0
        for r in range(3):
            i, j = slates[r]
            lse = np.logaddexp(np.logaddexp(logp[..., 3], logp[..., i]), logp[..., j])
            ll = ll + nc[r] * (logp[..., 3] - lse) + cl[r, 0] * (logp[..., i] - lse) \
                + cl[r, 1] * (logp[..., j] - lse)
        prior_term = np.sum((a - 1) * logp - b * np.exp(logp), axis=-1)
        return ll + prior_term

    center = np.array([1.0, 1.0, 4.5])
    half, step = np.array([2.0, 2.0, 2.5]), 0.05
    while True:
        axes = [np.arange(c - h, c + h + step / 2, step) for c, h in zip(center, half)]
        g = np.meshgrid(*axes, indexing="ij")
        vals = objective(*g)
        k = np.unravel_index(np.argmax(vals), vals.shape)
        center = np.array([axes[d][k[d]] for d in range(3)])
        if step <= resolution * 1.0001:
            return center
        half = np.full(3, 2 * step)
        step = max(step / 10, resolution)


def mp_log_posterior_log_space(kind, slates, nc, clicks, x, prior, dps=60):
    """Log posterior at theta = exp(x[:N]) (phi = exp(x[N])) in mpmath precision.

    Terms constant in the parameters are dropped; this is meant for
    high-precision finite differences.
    """
    mpmath.mp.dps = dps
    x = [mpmath.mpf(v) for v in x]
    n_items = max(max(s) for s in slates) + 1
    theta = [mpmath.exp(v) for v in x[:n_items]]
    phi = mpmath.exp(x[n_items]) if kind != "rank" else None
    total = mpmath.mpf(0)
    for s, n0, c in zip(slates, nc, clicks):
        t = [theta[i] for i in s]
        if kind == "full":
            denom = phi + sum(t)
            total += n0 * mpmath.log(phi / denom) + sum(ci * mpmath.log(ti / denom) for ci, ti in zip(c, t))
        elif kind == "reward":
            denom = phi + sum(t)
            total += n0 * mpmath.log(phi / denom) + sum(c) * mpmath.log(sum(t) / denom)
        else:
            total += sum(ci * mpmath.log(ti / sum(t)) for ci, ti in zip(c, t))
    for v, lv in zip(theta, x[:n_items]):
        total += (prior.theta_shape - 1) * lv - prior.theta_rate * v
    if phi is not None:
        total += (prior.phi_shape - 1) * x[n_items] - prior.phi_rate * phi
    return total


def mp_central_difference(f, x, h=1e-15):
    out = []
    for i in range(len(x)):
        up = [mpmath.mpf(v) for v in x]
        dn = list(up)
        up[i] += h
        dn[i] -= h
        out.append(float((f(up) - f(dn)) / (2 * h)))
    return np.array(out)
