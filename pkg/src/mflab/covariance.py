"""Covariance structures, effective dimensions, and hyperparameter planning.

Supported covariance families:

* ``isotropic``      -- identity.
* ``spiked``         -- (I + a tt')/(1 + a) with spike magnitude a = d**gamma2
                        and a spike direction t of prescribed overlap with the
                        target subspace.
* ``power_law``      -- eigenvalues i**(-alpha) on the standard basis, paired
                        with a target-alignment profile decaying like
                        i**(-gamma).
* ``explicit``       -- any dense PSD matrix, eigendecomposed and rescaled so
                        the operator norm is 1.

All models are rescaled so ``||Sigma|| = 1``; the effective dimension
``tr(Sigma) / ||Sigma^{1/2} U'||_F**2`` is scale invariant, so this only fixes
a convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "CovarianceError",
    "CovarianceSpec",
    "CovarianceModel",
    "HyperParams",
    "build_covariance",
    "apply_sqrt",
    "effective_dimension",
    "nosw_effective_dimension",
    "predict_deff_exponent",
    "plan_hyperparameters",
]

_SYM_TOL = 1e-10
_PSD_TOL = -1e-10


class CovarianceError(ValueError):
    """Invalid covariance specification or degenerate geometry."""


@dataclass(frozen=True)
class CovarianceSpec:
    """Declarative description of a covariance structure."""

    kind: str
    d: int
    gamma1: Optional[float] = None
    gamma2: Optional[float] = None
    alpha: Optional[float] = None
    gamma: Optional[float] = None
    matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.d < 1:
            raise CovarianceError(f"dimension must be positive, got {self.d}")
        if self.kind == "isotropic":
            pass
        elif self.kind == "spiked":
            if self.gamma1 is None or self.gamma2 is None:
                raise CovarianceError("spiked covariance needs gamma1 and gamma2")
            if not 0.0 <= self.gamma1 <= 0.5:
                raise CovarianceError(f"gamma1 must lie in [0, 1/2], got {self.gamma1}")
            if not 0.0 <= self.gamma2 <= 1.0:
                raise CovarianceError(f"gamma2 must lie in [0, 1], got {self.gamma2}")
        elif self.kind == "power_law":
            if self.alpha is None or self.gamma is None:
                raise CovarianceError("power_law covariance needs alpha and gamma")
            if self.alpha < 0 or self.gamma < 0:
                raise CovarianceError("power_law exponents must be nonnegative")
        elif self.kind == "explicit":
            m = self.matrix
            if m is None:
                raise CovarianceError("explicit covariance needs a matrix")
            m = np.asarray(m, dtype=float)
            if m.shape != (self.d, self.d):
                raise CovarianceError(f"matrix shape {m.shape} != ({self.d}, {self.d})")
            if np.max(np.abs(m - m.T)) > _SYM_TOL:
                raise CovarianceError("explicit covariance is not symmetric")
            object.__setattr__(self, "matrix", m)
        else:
            raise CovarianceError(f"unknown covariance kind {self.kind!r}")


@dataclass(frozen=True)
class CovarianceModel:
    """A built covariance: spectral summaries plus fast sqrt application.

    Structured kinds (isotropic, spiked, power_law) never materialize a dense
    matrix; spiked stores only the spike direction and magnitude, power_law
    lives on the standard basis.
    """

    spec: CovarianceSpec
    d: int
    eigenvalues: np.ndarray          # nonincreasing, positive
    trace: float
    op_norm: float
    c_x: float
    spike_alpha: Optional[float] = None
    theta: Optional[np.ndarray] = None          # spiked only
    sqrt_matrix: Optional[np.ndarray] = None    # explicit only (symmetric sqrt)
    eigenvectors: Optional[np.ndarray] = None   # explicit only (columns)

    @property
    def kind(self) -> str:
        return self.spec.kind

    @property
    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues[-1])


def build_covariance(spec: CovarianceSpec, theta: Optional[np.ndarray] = None) -> CovarianceModel:
    """Build a covariance model from its spec.

    For the spiked kind, ``theta`` is the spike direction; it defaults to the
    first standard basis vector.  Spike magnitude is a = d**gamma2 exactly, and
    the family is normalized so the operator norm equals 1.
    """
    d = spec.d
    if spec.kind == "isotropic":
        eig = np.ones(d)
        return CovarianceModel(spec=spec, d=d, eigenvalues=eig, trace=float(d),
                               op_norm=1.0, c_x=math.sqrt(d))
    if spec.kind == "spiked":
        alpha = float(d) ** spec.gamma2
        if theta is None:
            theta = np.zeros(d)
            theta[0] = 1.0
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (d,):
            raise CovarianceError(f"spike direction has shape {theta.shape}, expected ({d},)")
        nrm = np.linalg.norm(theta)
        if not math.isclose(nrm, 1.0, rel_tol=0, abs_tol=1e-8):
            raise CovarianceError("spike direction must be a unit vector")
        theta = theta / nrm
        # spectrum: one eigenvalue 1 (spike), d-1 eigenvalues 1/(1+alpha)
        eig = np.full(d, 1.0 / (1.0 + alpha))
        eig[0] = 1.0
        trace = (d + alpha) / (1.0 + alpha)
        return CovarianceModel(spec=spec, d=d, eigenvalues=eig, trace=trace,
                               op_norm=1.0, c_x=math.sqrt(trace),
                               spike_alpha=alpha, theta=theta)
    if spec.kind == "power_law":
        eig = np.arange(1, d + 1, dtype=float) ** (-spec.alpha)
        trace = float(eig.sum())
        return CovarianceModel(spec=spec, d=d, eigenvalues=eig, trace=trace,
                               op_norm=1.0, c_x=math.sqrt(trace))
    if spec.kind == "explicit":
        vals, vecs = np.linalg.eigh(spec.matrix)
        if vals[0] < _PSD_TOL * max(1.0, vals[-1]):
            raise CovarianceError(
                f"explicit covariance is not PSD (min eigenvalue {vals[0]:.3e})")
        vals = np.clip(vals, 0.0, None)
        if vals[-1] <= 0.0:
            raise CovarianceError("explicit covariance is identically zero")
        vals = vals / vals[-1]          # mandatory rescale: ||Sigma|| = 1
        order = np.argsort(vals)[::-1]
        vals = vals[order]
        vecs = vecs[:, order]
        sqrt_matrix = (vecs * np.sqrt(vals)) @ vecs.T
        return CovarianceModel(spec=spec, d=d, eigenvalues=vals,
                               trace=float(vals.sum()), op_norm=1.0,
                               c_x=math.sqrt(float(vals.sum())),
                               sqrt_matrix=sqrt_matrix, eigenvectors=vecs)
    raise CovarianceError(f"unknown covariance kind {spec.kind!r}")


def apply_sqrt(model: CovarianceModel, z: np.ndarray) -> np.ndarray:
    """Apply Sigma^{1/2} to a vector or to a stack of row vectors."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.d:
        raise CovarianceError(f"dimension mismatch: {z.shape[-1]} != {model.d}")
    kind = model.kind
    if kind == "isotropic":
        return z.copy()
    if kind == "spiked":
        a = model.spike_alpha
        s = 1.0 / math.sqrt(1.0 + a)
        proj = z @ model.theta
        return s * z + (1.0 - s) * np.multiply.outer(proj, model.theta)
    if kind == "power_law":
        return z * np.sqrt(model.eigenvalues)
    return z @ model.sqrt_matrix     # symmetric, so no transpose needed


def _check_directions(model: CovarianceModel, U: np.ndarray) -> np.ndarray:
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[1] != model.d:
        raise CovarianceError(f"U has {U.shape[1]} columns, expected {model.d}")
    total = float(np.sum(U * U))
    if abs(total - 1.0) > 1e-10:
        raise CovarianceError(f"rows of U must satisfy sum ||u_i/sqrt(k)||^2 = 1, got {total}")
    return U


def _rx_squared(model: CovarianceModel, U: np.ndarray) -> float:
    """||Sigma^{1/2} U'||_F**2 via the structured closed form."""
    if model.kind == "isotropic":
        return float(np.sum(U * U))
    if model.kind == "spiked":
        a = model.spike_alpha
        return (float(np.sum(U * U)) + a * float(np.sum((U @ model.theta) ** 2))) / (1.0 + a)
    if model.kind == "power_law":
        return float(np.sum(model.eigenvalues * np.sum(U * U, axis=0)))
    return float(np.sum((U @ model.sqrt_matrix) ** 2))


def effective_dimension(model: CovarianceModel, U: np.ndarray) -> float:
    """tr(Sigma) / ||Sigma^{1/2} U'||_F**2 for stacked directions U (k x d)."""
    U = _check_directions(model, U)
    rx2 = _rx_squared(model, U)
    if rx2 < 1e-300:
        raise CovarianceError("target directions lie in the null space of Sigma")
    return model.trace / rx2


def nosw_effective_dimension(model: CovarianceModel, U: np.ndarray) -> float:
    """Competing effective dimension k*tr(Sigma)*sum_i ||Sigma^{1/2} u_i||**-2.

    Requires full-rank Sigma; always at least k times ``effective_dimension``
    by the AM-HM inequality.
    """
    U = _check_directions(model, U)
    k = U.shape[0]
    if model.min_eigenvalue <= 1e-12 * model.op_norm:
        raise CovarianceError("competing effective dimension needs full-rank Sigma")
    total = 0.0
    for i in range(k):
        u = math.sqrt(k) * U[i]
        s = _rx_squared(model, u.reshape(1, -1) / math.sqrt(k)) * k
        if s < 1e-300:
            raise CovarianceError("Sigma is rank deficient along a target direction")
        total += 1.0 / s
    return k * model.trace * total


def predict_deff_exponent(spec: CovarianceSpec) -> float:
    """Predicted log_d scaling exponent of the effective dimension."""
    if spec.kind == "spiked":
        return 1.0 - max(spec.gamma2 - 2.0 * spec.gamma1, 0.0)
    if spec.kind == "power_law":
        a, g = spec.alpha, spec.gamma
        if a < 1.0 and g < 1.0:
            return min(1.0, 2.0 - a - g)
        if a < 1.0:
            return 1.0 - a
        return max(1.0 - g, 0.0)
    raise CovarianceError(f"no scaling prediction for covariance kind {spec.kind!r}")


@dataclass(frozen=True)
class HyperParams:
    """Planned run parameters plus the radii derived from the task geometry.

    ``eta_theoretical`` uses the worst-case Euclidean LSI bound and is
    typically astronomically small; it is recorded for reporting only, while
    ``eta_practical`` drives actual runs.  ``log_c_lsi`` and
    ``log_l_theoretical`` keep the overflow-prone quantities in log domain.
    """

    lam: float
    lam_tilde: float
    beta: float
    eta_theoretical: float
    eta_practical: float
    kappa: float
    iota: float
    m: int
    l: int
    eps: float
    q: float
    r_x: float
    r_x_tilde: float
    r_x_bar: float
    c_x: float
    d_eff: float
    log_c_lsi: float = field(default=float("nan"))
    log_l_theoretical: float = field(default=float("nan"))

    def __post_init__(self):
        if min(self.lam, self.lam_tilde, self.beta, self.eps, self.r_x) <= 0:
            raise ValueError("hyperparameters must be positive")
        if self.kappa <= 1 or self.iota <= 1:
            raise ValueError("kappa and iota must exceed 1")
        if self.r_x_tilde < self.r_x * (1 - 1e-12):
            raise ValueError("r_x_tilde must dominate r_x")


def plan_hyperparameters(model: CovarianceModel, U: np.ndarray, n: int,
                         lam_tilde: float, eps: float, q: float = 1.0,
                         kappa: float = 8.0, eta_practical: Optional[float] = None,
                         sigma_u: float = 1.0, m: int = 1024, l: int = 10_000,
                         c_rho: float = 1.0) -> HyperParams:
    """Theory-shaped hyperparameters with all hidden constants set to 1."""
    if n < 1:
        raise ValueError("need at least one sample")
    if not 0 < lam_tilde <= 1 or not 0 < eps <= 1:
        raise ValueError("lam_tilde and eps must lie in (0, 1]")
    if kappa <= 1:
        raise ValueError("kappa must exceed 1")
    U = _check_directions(model, U)
    rx2 = _rx_squared(model, U)
    r_x = math.sqrt(rx2)
    r_t = r_x * (1.0 + sigma_u * math.sqrt(2.0 * (q + 1.0) * math.log(n)))
    r_b = max(math.sqrt(model.op_norm), r_t)
    lam = lam_tilde * rx2
    d_eff = model.trace / rx2
    ratio = (r_t / r_x) ** 2
    beta = (d_eff + ratio) / (eps * eps * lam_tilde)
    iota = ratio / lam_tilde
    # Proposition-1 LSI bound in log domain: log C_LSI = 4*C_rho*iota*beta - log(beta*lam)
    log_c_lsi = 4.0 * c_rho * iota * beta - math.log(beta * lam)
    log_eta = -(log_c_lsi + 2.0 * math.log(kappa) + 4.0 * math.log(r_b)
                + math.log(model.d + r_b * r_b / lam))
    eta_theoretical = math.exp(log_eta) if log_eta > -700 else 0.0
    if eta_practical is None:
        eta_practical = 0.1 / (kappa * r_b * r_b)
    log_l_theoretical = log_c_lsi + math.log(beta) - log_eta
    return HyperParams(lam=lam, lam_tilde=lam_tilde, beta=beta,
                       eta_theoretical=eta_theoretical, eta_practical=eta_practical,
                       kappa=kappa, iota=max(iota, 1.0 + 1e-9), m=m, l=l, eps=eps, q=q,
                       r_x=r_x, r_x_tilde=r_t, r_x_bar=r_b, c_x=model.c_x,
                       d_eff=d_eff, log_c_lsi=log_c_lsi,
                       log_l_theoretical=log_l_theoretical)
