"""Measurement and bound calculators around the particle dynamics: excess
risk, feature-subspace alignment, log-Sobolev constant bounds (flat and
spherical), Hessian-scale estimation, convergence scheduling, oscillation
bounds for teacher densities, and decay-rate fitting from traces.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, asdict
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from .net import Loss, ParticleEnsemble
from .rng import substream
from .sphere import riemannian_hessian_quadform
from .tasks import Dataset

__all__ = [
    "DiagnosticsReport",
    "LsiBound",
    "excess_risk",
    "subspace_alignment",
    "lsi_bound_euclidean",
    "lsi_bound_sphere",
    "estimate_K",
    "theorem2_schedule",
    "oscillation_bound",
    "fit_decay_rate",
]

_LOG_MAX = math.log(sys.float_info.max)


@dataclass(frozen=True)
class LsiBound:
    """A log-Sobolev constant upper bound; may be an overflow (value inf with
    a meaningful log) or infeasible (the bound's precondition failed)."""

    value: float
    log_value: float
    overflow: bool = False
    feasible: bool = True


@dataclass(frozen=True)
class DiagnosticsReport:
    excess_risk: float
    excess_stderr: float
    class_error: float
    alignment: float
    c_lsi_euclidean: Optional[LsiBound]
    c_lsi_sphere: Optional[LsiBound]
    k_estimate: Optional[float]
    k_upper: Optional[float]
    schedule: Optional[tuple[float, int, float]]
    decay_rate: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)


@lru_cache(maxsize=128)
def _noise_loss_baseline(kind: str, delta: float, sigma: float) -> float:
    """E rho(xi) for xi ~ N(0, sigma^2), to quadrature accuracy 1e-10."""
    if sigma == 0.0:
        return 0.0
    if kind == "squared":
        return 0.5 * sigma * sigma
    loss = Loss(kind, delta)

    def integrand(t):
        return float(loss.rho(t)) * math.exp(-0.5 * (t / sigma) ** 2) \
            / (sigma * math.sqrt(2.0 * math.pi))

    value, _ = quad(integrand, -np.inf, np.inf, epsabs=1e-12, epsrel=1e-10)
    return value


def excess_risk(predictions: np.ndarray, labels: np.ndarray, loss: Loss,
                noise_std: float = 0.0) -> tuple[float, float]:
    """Monte-Carlo test risk minus the noise floor E rho(xi).

    The floor uses the closed form for the squared loss and cached adaptive
    quadrature otherwise, so the baseline error is negligible next to the
    Monte-Carlo term.  Returns (estimate, standard error).
    """
    predictions = np.asarray(predictions, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if predictions.size == 0:
        raise ValueError("empty test set")
    samples = loss.rho(predictions - labels)
    baseline = _noise_loss_baseline(loss.kind, loss.delta, float(noise_std))
    value = float(np.mean(samples)) - baseline
    stderr = float(np.std(samples, ddof=1)) / math.sqrt(samples.size) \
        if samples.size > 1 else 0.0
    return value, stderr


def subspace_alignment(ensemble: ParticleEnsemble, U: np.ndarray) -> float:
    """Fraction of particle direction energy inside the row span of U.

    Euclidean particles contribute the first d coordinates of omega1 - omega2
    (the direction of the paired unit); sphere particles contribute
    themselves.  Ratios are averaged with weight |v_j|^2, i.e. the value is
    sum_j |P_U v_j|^2 / sum_j |v_j|^2, always in [0, 1].
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    d = U.shape[1]
    if ensemble.space == "euclidean":
        w1, w2 = ensemble.halves()
        v = (w1 - w2)[:, :d]
    else:
        v = ensemble.weights
    norms_sq = np.sum(v * v, axis=1)
    keep = norms_sq > 1e-24
    if not np.any(keep):
        raise ValueError("all particle directions are degenerate")
    v = v[keep]
    # orthonormal basis of span(U): rows of U have norm 1/sqrt(k), so scale
    q, _ = np.linalg.qr(U.T)
    proj = v @ q
    return float(np.sum(proj * proj) / np.sum(v * v))


def lsi_bound_euclidean(beta: float, lam: float, c_rho: float,
                        iota: float) -> LsiBound:
    """Flat-space bound exp(4 c_rho iota beta) / (beta lam), log-safe."""
    if beta <= 0 or lam <= 0 or c_rho <= 0 or iota <= 0:
        raise ValueError("all inputs must be positive")
    log_value = 4.0 * c_rho * iota * beta - math.log(beta * lam)
    if log_value > _LOG_MAX:
        return LsiBound(math.inf, log_value, overflow=True)
    return LsiBound(math.exp(log_value), log_value)


def lsi_bound_sphere(d: int, rho_curv: float, beta: float, c_rho: float,
                     K: float) -> LsiBound:
    """Curvature bound 1/(rho d - beta c_rho K), infeasible at the boundary."""
    if min(d, rho_curv, beta, c_rho, K) <= 0:
        raise ValueError("all inputs must be positive")
    gap = rho_curv * d - beta * c_rho * K
    if gap <= 0.0:
        return LsiBound(math.inf, math.inf, feasible=False)
    return LsiBound(1.0 / gap, -math.log(gap))


def estimate_K(dataset: Dataset, phi, probes: int, seed: int,
               ) -> tuple[float, float]:
    """Hessian scale of the restricted activation by random probing.

    Each probe draws w uniform on the sphere and v uniform tangent at w, then
    evaluates the empirical mean of |sphere Hessian quadform| over the data;
    the estimate is the max over probes.  The companion analytic ceiling is
    |phi''|_inf |S| + |phi'|_inf |S|^(1/2) with S the empirical second-moment
    matrix (operator norm).
    """
    if probes < 1:
        raise ValueError("need at least one probe")
    x = dataset.inputs
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    n, d = x.shape
    rng = substream(seed, 6)
    best = 0.0
    for _ in range(probes):
        w = rng.standard_normal(d)
        w /= np.linalg.norm(w)
        v = rng.standard_normal(d)
        v -= np.dot(v, w) * w
        v /= np.linalg.norm(v)
        z = x @ w
        vx = x @ v
        vals = np.abs(phi.d2(z) * vx * vx - phi.d1(z) * z)
        best = max(best, float(np.mean(vals)))
    second_moment = (x.T @ x) / n
    op = float(np.linalg.eigvalsh(second_moment)[-1])
    k_upper = phi.d2_max * op + phi.d1_max * math.sqrt(op)
    return best, k_upper


def theorem2_schedule(delta_bar: float, eps: float, rho_curv: float,
                      c_rho: float, K: float, f0: float,
                      ) -> tuple[float, int, float]:
    """Convergence schedule (beta, minimal dimension, time bound):
    beta = delta_bar/eps, d_min = ceil(2 c_rho K delta_bar/(rho eps)),
    T = (delta_bar/(eps rho d_min)) ln(f0/eps)."""
    if min(delta_bar, eps, rho_curv, c_rho, K) <= 0:
        raise ValueError("all schedule inputs must be positive")
    if f0 <= eps:
        raise ValueError("initial objective must exceed the target accuracy")
    beta = delta_bar / eps
    d_min = math.ceil(2.0 * c_rho * K * delta_bar / (rho_curv * eps))
    t_bound = delta_bar / (eps * rho_curv * d_min) * math.log(f0 / eps)
    return beta, d_min, t_bound


def oscillation_bound(f: Callable[[np.ndarray], float], d: int,
                      samples: int, seed: int) -> float:
    """Monte-Carlo max - min of f over uniform unit-sphere points (a lower
    bound on the true oscillation, reported as such)."""
    rng = substream(seed, 7)
    chunk = 65536
    lo, hi = math.inf, -math.inf
    remaining = samples
    while remaining > 0:
        take = min(chunk, remaining)
        pts = rng.standard_normal((take, d))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        vals = np.array([float(f(p)) for p in pts]) \
            if not _vectorized(f, pts) else np.asarray(f(pts), dtype=float)
        lo = min(lo, float(np.min(vals)))
        hi = max(hi, float(np.max(vals)))
        remaining -= take
    return hi - lo


def _vectorized(f, pts) -> bool:
    try:
        out = f(pts[:2])
    except Exception:
        return False
    return np.shape(out) == (2,)


def fit_decay_rate(steps: np.ndarray, values: np.ndarray, burn_in: int = 0,
                   margin: float = 0.0) -> tuple[float, bool]:
    """Least-squares exponential rate of (values - floor) after burn-in.

    floor = min(values) - margin.  Returns (rate, trustworthy); the flag drops
    when the log-linear fit explains less than 90% of the variance or the
    fitted rate is nonpositive (non-monotone-dominant trace).
    """
    steps = np.asarray(steps, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.size <= burn_in + 10:
        raise ValueError("trace too short for the requested burn-in")
    steps = steps[burn_in:]
    values = values[burn_in:]
    floor = float(np.min(values)) - margin
    y = values - floor
    keep = y > 1e-12 * max(float(np.max(y)), 1e-300)
    if np.count_nonzero(keep) < 3:
        return 0.0, False
    s, ly = steps[keep], np.log(y[keep])
    slope, intercept = np.polyfit(s, ly, 1)
    resid = ly - (slope * s + intercept)
    total = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - float(np.sum(resid ** 2)) / total if total > 0 else 0.0
    rate = -float(slope)
    return rate, bool(rate > 0 and r2 >= 0.9)
