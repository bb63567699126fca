"""Riemannian particle Langevin dynamics on the unit hypersphere.

Updates live in the tangent space at each particle: the ambient gradient and
the ambient Gaussian noise are both projected tangent, then the particle moves
along the exact geodesic (exponential map), so the unit-norm constraint is
preserved to machine precision.  No l2 regularization is applied — the
constraint replaces it.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .euclidean import DivergenceError, TraceRecord, _evaluate
from .io import save_ensemble
from .net import Loss, ParticleEnsemble, TanhActivation, \
    all_first_variation_gradients, predict
from .rng import step_noise, substream
from .tasks import Dataset

__all__ = [
    "SphereConfig",
    "tangent_project",
    "exp_map",
    "sphere_step",
    "riemannian_hessian_quadform",
    "init_sphere_ensemble",
    "run_sphere",
]


@dataclass(frozen=True)
class SphereConfig:
    """Shape of one spherical training run.

    The activation must have derivative bounds |phi'|, |phi''| <= 1; this is
    asserted on a grid at construction.  ``rho_curv = None`` defaults to the
    unit-sphere Ricci ratio (d-2)/d at run time (diagnostics only).
    """

    m: int
    beta: float
    eta: float
    seed: int
    budget: int
    loss: Loss = field(default_factory=Loss)
    activation: object = TanhActivation
    eval_every: int = 100
    renorm_every: int = 100
    rho_curv: Optional[float] = None

    def __post_init__(self):
        if self.m < 1 or self.budget < 0 or self.eval_every < 1:
            raise ValueError("bad particle count, budget, or eval cadence")
        if self.eta < 0 or self.beta <= 0:
            raise ValueError("eta or beta out of range")
        if not math.isfinite(self.loss.c_rho):
            raise ValueError("sphere dynamics require a Lipschitz loss")
        grid = np.linspace(-20.0, 20.0, 4001)
        if (np.max(np.abs(self.activation.d1(grid))) > 1.0 + 1e-12
                or np.max(np.abs(self.activation.d2(grid))) > 1.0 + 1e-12):
            raise ValueError("activation derivative bounds exceed 1 on grid")


def tangent_project(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Remove the radial component of v at the sphere point w."""
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(w) - 1.0) > 1e-10:
        raise ValueError("base point is not on the unit sphere")
    return v - np.dot(v, w) * w


def exp_map(w: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Geodesic step: cos(|t|) w + sin(|t|) t/|t| (w itself for tiny t)."""
    w = np.asarray(w, dtype=float)
    t = np.asarray(t, dtype=float)
    r = np.linalg.norm(t)
    if r < 1e-14:
        return w.copy()
    return math.cos(r) * w + (math.sin(r) / r) * t


def _rows_tangent(weights: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Row-wise tangent projection for an (m, d) stack."""
    radial = np.sum(vectors * weights, axis=1, keepdims=True)
    return vectors - radial * weights


def _rows_exp(weights: np.ndarray, tangents: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(tangents, axis=1, keepdims=True)
    small = r < 1e-14
    safe_r = np.where(small, 1.0, r)
    out = np.cos(r) * weights + (np.sin(r) / safe_r) * tangents
    return np.where(small, weights, out)


def sphere_step(ensemble: ParticleEnsemble, dataset: Dataset,
                config: SphereConfig, step: int,
                predictions: Optional[np.ndarray] = None,
                noise: Optional[np.ndarray] = None) -> ParticleEnsemble:
    """One tangent Euler-Maruyama update with exponential-map retraction."""
    phi = config.activation
    if predictions is None:
        predictions = predict(ensemble, dataset.inputs, phi)
    ambient = all_first_variation_gradients(ensemble, dataset, config.loss,
                                            0.0, phi, predictions)
    tangents = -config.eta * _rows_tangent(ensemble.weights, ambient)
    if math.isfinite(config.beta):
        if noise is None:
            noise = step_noise(config.seed, step, ensemble.weights.shape)
        tangents += math.sqrt(2.0 * config.eta / config.beta) \
            * _rows_tangent(ensemble.weights, noise)
    new = _rows_exp(ensemble.weights, tangents)
    if not np.all(np.isfinite(new)):
        raise DivergenceError(step, ensemble, [])
    ensemble.weights = new
    return ensemble


def riemannian_hessian_quadform(w: np.ndarray, v: np.ndarray, x: np.ndarray,
                                phi) -> float:
    """Sphere Hessian quadratic form of w -> phi(<w, x>) along unit tangent v:

        phi''(<w,x>) <v,x>^2 - phi'(<w,x>) <w,x>
    """
    z = float(np.dot(w, x))
    vx = float(np.dot(v, x))
    return float(phi.d2(z)) * vx * vx - float(phi.d1(z)) * z


def init_sphere_ensemble(m: int, d: int, seed: int) -> ParticleEnsemble:
    """i.i.d. uniform points on the unit sphere (normalized Gaussians)."""
    g = substream(seed, 0).standard_normal((m, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return ParticleEnsemble("sphere", g)


def run_sphere(config: SphereConfig, dataset: Dataset,
               test_set: Optional[Dataset] = None,
               U: Optional[np.ndarray] = None,
               checkpoint_path: Optional[str | Path] = None,
               init: Optional[ParticleEnsemble] = None,
               ) -> tuple[ParticleEnsemble, list[TraceRecord]]:
    """Training loop mirror of the Euclidean run, with periodic renormalization
    (every ``renorm_every`` steps) guarding against slow norm drift."""
    d = dataset.inputs.shape[1]
    phi = config.activation
    ensemble = init.copy() if init is not None \
        else init_sphere_ensemble(config.m, d, config.seed)
    t0 = time.perf_counter()
    trace = [_evaluate(ensemble, dataset, test_set, config.loss, 0.0, phi,
                       U, 0, t0)]
    for step in range(1, config.budget + 1):
        try:
            sphere_step(ensemble, dataset, config, step)
        except DivergenceError as err:
            if checkpoint_path is not None:
                save_ensemble(err.ensemble, checkpoint_path,
                              {"aborted_at_step": step, "seed": config.seed})
            raise DivergenceError(step, err.ensemble, trace) from None
        if step % config.renorm_every == 0:
            ensemble.weights /= np.linalg.norm(ensemble.weights, axis=1,
                                               keepdims=True)
        if step % config.eval_every == 0 or step == config.budget:
            trace.append(_evaluate(ensemble, dataset, test_set, config.loss,
                                   0.0, phi, U, step, t0))
    if checkpoint_path is not None:
        save_ensemble(ensemble, checkpoint_path,
                      {"steps": trace[-1].step, "seed": config.seed})
    return ensemble, trace
