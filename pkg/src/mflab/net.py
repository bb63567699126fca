"""Smoothed-ReLU activation, paired units, losses, risks, and first-variation
gradients for the finite-particle objective.

The activation is softplus at sharpness kappa up to the knee iota/2, then a
quintic Hermite blend that lands at the cap iota with zero first and second
derivative, and constant beyond.  The blend keeps the function C^2 with
0 <= phi <= iota, phi' in [0, 1], |phi''| <= kappa; these bounds are asserted
numerically at construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import BPoly, PPoly
from scipy.special import expit

from . import _kernels
from .tasks import Dataset

__all__ = [
    "SmoothReluParams",
    "Loss",
    "ParticleEnsemble",
    "TanhActivation",
    "smooth_relu",
    "activation_pair",
    "preactivations",
    "predict_from_preactivations",
    "predict",
    "regularized_empirical_risk",
    "first_variation_gradient",
    "all_first_variation_gradients",
]


class ActivationConstructionError(ValueError):
    """The C^2 extension violated its required bounds."""


@dataclass(frozen=True)
class SmoothReluParams:
    kappa: float
    iota: float
    z_knee: float = field(init=False)
    z_sat: float = field(init=False)
    coeffs: np.ndarray = field(init=False)   # ascending in (z - z_knee)

    def __post_init__(self):
        if self.kappa <= 1 or self.iota <= 1:
            raise ValueError("need kappa > 1 and iota > 1")
        k, iota = self.kappa, self.iota
        a = iota / 2.0
        f0 = a + math.log1p(math.exp(-k * a)) / k
        s = float(expit(k * a))
        f2 = k * s * (1.0 - s)
        b = a + 2.0 * (iota - f0) / max(s, 0.25)
        bp = BPoly.from_derivatives([a, b], [[f0, s, f2], [iota, 0.0, 0.0]])
        pp = PPoly.from_bernstein_basis(bp)
        coeffs = np.ascontiguousarray(pp.c[::-1, 0])   # ascending powers of (z - a)
        object.__setattr__(self, "z_knee", a)
        object.__setattr__(self, "z_sat", b)
        object.__setattr__(self, "coeffs", coeffs)
        self._validate()

    def _validate(self):
        a, b = self.z_knee, self.z_sat
        # C^2 continuity at both knots
        for z, branch in ((a, "knee"), (b, "sat")):
            lo = smooth_relu(np.nextafter(z, -np.inf), self)
            hi = smooth_relu(np.nextafter(z, np.inf), self)
            for v1, v2, scale in zip(lo, hi, (self.iota, 1.0, self.kappa)):
                if abs(float(v1) - float(v2)) > 1e-8 * max(scale, 1.0):
                    raise ActivationConstructionError(
                        f"discontinuity at the {branch} point: {float(v1)} vs {float(v2)}")
        grid = np.linspace(-10 * self.iota, 10 * self.iota, 10_000)
        val, d1, d2 = smooth_relu(grid, self)
        tol = 1e-9
        if np.any(val < -tol) or np.any(val > self.iota + tol):
            raise ActivationConstructionError("activation value escapes [0, iota]")
        if np.any(d1 < -tol) or np.any(d1 > 1.0 + tol):
            raise ActivationConstructionError("activation slope escapes [0, 1]")
        if np.any(np.abs(d2) > self.kappa + tol):
            raise ActivationConstructionError("activation curvature exceeds kappa")

    def kernel_args(self):
        c = self.coeffs
        return (self.kappa, self.z_knee, self.z_sat, self.iota, c)


def smooth_relu(z, params: SmoothReluParams):
    """Vectorized (value, first, second derivative) of the capped softplus."""
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    k, a, b, iota = params.kappa, params.z_knee, params.z_sat, params.iota
    val = np.empty_like(z)
    d1 = np.empty_like(z)
    d2 = np.empty_like(z)

    lo = z <= a
    zl = z[lo]
    val[lo] = np.maximum(zl, 0.0) + np.log1p(np.exp(-k * np.abs(zl))) / k
    s = expit(k * zl)
    d1[lo] = s
    d2[lo] = k * s * (1.0 - s)

    mid = (z > a) & (z < b)
    t = z[mid] - a
    c = params.coeffs
    val[mid] = c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))))
    d1[mid] = c[1] + t * (2 * c[2] + t * (3 * c[3] + t * (4 * c[4] + t * 5 * c[5])))
    d2[mid] = 2 * c[2] + t * (6 * c[3] + t * (12 * c[4] + t * 20 * c[5]))

    hi = z >= b
    val[hi] = iota
    d1[hi] = 0.0
    d2[hi] = 0.0
    if scalar:
        return float(val[0]), float(d1[0]), float(d2[0])
    return val, d1, d2


@dataclass(frozen=True)
class Loss:
    """Convex loss rho applied to the residual yhat - y."""

    kind: str = "pseudo_huber"   # squared | pseudo_huber
    delta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("squared", "pseudo_huber"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    def rho(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "squared":
            return 0.5 * t * t
        d = self.delta
        return d * d * (np.sqrt(1.0 + (t / d) ** 2) - 1.0)

    def rho_prime(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "squared":
            return t.copy()
        return t / np.sqrt(1.0 + (t / self.delta) ** 2)

    @property
    def c_rho(self) -> float:
        """Lipschitz constant of rho (infinite for the squared loss)."""
        return math.inf if self.kind == "squared" else self.delta

    @property
    def c_rho_prime(self) -> float:
        return 1.0


class TanhActivation:
    """Bounded-derivative scalar activation for the sphere dynamics."""

    d1_max = 1.0
    d2_max = 4.0 / (3.0 * math.sqrt(3.0))   # max |tanh''| = 0.7698

    @staticmethod
    def value(z):
        return np.tanh(z)

    @staticmethod
    def d1(z):
        t = np.tanh(z)
        return 1.0 - t * t

    @staticmethod
    def d2(z):
        t = np.tanh(z)
        return -2.0 * t * (1.0 - t * t)


@dataclass
class ParticleEnsemble:
    """m particle weights: (m, 2d+2) rows (omega1, omega2) in the Euclidean
    space, or unit rows (m, d) on the sphere."""

    space: str                 # euclidean | sphere
    weights: np.ndarray

    def __post_init__(self):
        if self.space not in ("euclidean", "sphere"):
            raise ValueError(f"unknown particle space {self.space!r}")
        self.weights = np.ascontiguousarray(self.weights, dtype=float)
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("non-finite particle weights")
        if self.space == "euclidean":
            if self.weights.shape[1] % 2 != 0:
                raise ValueError("euclidean particles live in R^{2d+2}")
        else:
            norms = np.linalg.norm(self.weights, axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-12:
                raise ValueError("sphere particles must have unit norm")

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        if self.space == "euclidean":
            return self.weights.shape[1] // 2 - 1
        return self.weights.shape[1]

    def halves(self):
        h = self.weights.shape[1] // 2
        return self.weights[:, :h], self.weights[:, h:]

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.space, self.weights.copy())


def activation_pair(x_aug: np.ndarray, w: np.ndarray, params: SmoothReluParams) -> float:
    """Paired-unit value phi(<x, w1>) - phi(<x, w2>); bounded by 2*iota."""
    x_aug = np.asarray(x_aug, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != 2 * x_aug.shape[-1]:
        raise ValueError("weight/input dimension mismatch")
    h = x_aug.shape[-1]
    v1, _, _ = smooth_relu(x_aug @ w[:h], params)
    v2, _, _ = smooth_relu(x_aug @ w[h:], params)
    return float(v1 - v2)


def preactivations(ensemble: ParticleEnsemble, x_aug: np.ndarray,
                   out: Optional[tuple] = None) -> tuple[np.ndarray, np.ndarray]:
    """Both halves' pre-activation matrices (n, m), reusable buffers."""
    w1, w2 = ensemble.halves()
    if out is None:
        return x_aug @ w1.T, x_aug @ w2.T
    z1, z2 = out
    np.matmul(x_aug, w1.T, out=z1)
    np.matmul(x_aug, w2.T, out=z2)
    return z1, z2


def predict_from_preactivations(z1: np.ndarray, z2: np.ndarray,
                                params: SmoothReluParams) -> np.ndarray:
    return _kernels.pair_phi_mean(z1, z2, *params.kernel_args())


def predict(ensemble: ParticleEnsemble, x: np.ndarray, params) -> np.ndarray:
    """Network output: mean of per-particle activations.

    Euclidean ensembles expect augmented inputs (n, d+1); sphere ensembles
    expect raw inputs (n, d) and a scalar activation object.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if ensemble.space == "euclidean":
        w1, w2 = ensemble.halves()
        if x.shape[1] != w1.shape[1]:
            raise ValueError(f"expected augmented inputs with {w1.shape[1]} columns")
        z1, z2 = preactivations(ensemble, x)
        return _kernels.pair_phi_mean(z1, z2, *params.kernel_args())
    if x.shape[1] != ensemble.d:
        raise ValueError("input dimension mismatch")
    return params.value(x @ ensemble.weights.T).mean(axis=1)


def regularized_empirical_risk(ensemble: ParticleEnsemble, dataset: Dataset,
                               loss: Loss, lam: float, params,
                               predictions: Optional[np.ndarray] = None):
    """(risk, reg, total) where total = risk + lam/2 * reg.

    On the sphere the weights are unit, so reg = 1 identically and lam is
    forced to zero (no l2 regularization on the manifold).
    """
    if dataset.n == 0:
        raise ValueError("empty dataset")
    if predictions is None:
        inp = dataset.augmented if ensemble.space == "euclidean" else dataset.inputs
        predictions = predict(ensemble, inp, params)
    risk = float(np.mean(loss.rho(predictions - dataset.labels)))
    if ensemble.space == "sphere":
        return risk, 1.0, risk
    reg = float(np.sum(ensemble.weights ** 2)) / ensemble.m
    return risk, reg, risk + 0.5 * lam * reg


def all_first_variation_gradients(ensemble: ParticleEnsemble, dataset: Dataset,
                                  loss: Loss, lam: float, params,
                                  predictions: np.ndarray,
                                  buffers: Optional[tuple] = None,
                                  z: Optional[tuple] = None) -> np.ndarray:
    """Per-particle gradients of the first variation, stacked (m, dim).

    Euclidean: grad w_j = (1/n) sum_i rho'(res_i) * grad_w Psi(x_i; w_j)
    + lam w_j.  Sphere: the ambient gradient (1/n) sum_i rho'(res_i)
    phi'(<w_j, x_i>) x_i (callers project to the tangent space).  Passing
    precomputed pre-activations ``z = (z1, z2)`` skips their matmuls.
    """
    coef = loss.rho_prime(predictions - dataset.labels) / dataset.n
    if ensemble.space == "euclidean":
        xa = dataset.augmented
        w1, _ = ensemble.halves()
        z1, z2 = z if z is not None else preactivations(ensemble, xa)
        if buffers is None:
            a1 = np.empty_like(z1)
            a2 = np.empty_like(z2)
        else:
            a1, a2 = buffers
        kappa, knee, sat, _, c = params.kernel_args()
        _kernels.weighted_derivs(z1, z2, coef, kappa, knee, sat, c, a1, a2)
        grad = np.empty_like(ensemble.weights)
        h = w1.shape[1]
        np.matmul(a1.T, xa, out=grad[:, :h])
        np.matmul(a2.T, xa, out=grad[:, h:])
        if lam != 0.0:
            grad += lam * ensemble.weights
        return grad
    x = dataset.inputs
    z = x @ ensemble.weights.T                    # (n, m)
    return (coef[:, None] * params.d1(z)).T @ x


def first_variation_gradient(ensemble: ParticleEnsemble, dataset: Dataset,
                             loss: Loss, lam: float, j: int, params,
                             predictions: np.ndarray) -> np.ndarray:
    """Gradient of the first variation at particle j (ambient, unprojected)."""
    coef = loss.rho_prime(predictions - dataset.labels) / dataset.n
    w = ensemble.weights[j]
    if ensemble.space == "euclidean":
        xa = dataset.augmented
        h = xa.shape[1]
        _, d1a, _ = smooth_relu(xa @ w[:h], params)
        _, d1b, _ = smooth_relu(xa @ w[h:], params)
        grad = np.concatenate([(coef * d1a) @ xa, -(coef * d1b) @ xa])
        return grad + lam * w
    x = dataset.inputs
    return (coef * params.d1(x @ w)) @ x
