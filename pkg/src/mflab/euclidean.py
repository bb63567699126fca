"""Noisy interacting-particle descent on the paired-unit network objective.

Each step refreshes the prediction cache over the full training set, forms the
per-particle first-variation gradients against that frozen cache, and applies

    w_j  <-  w_j - eta * grad_j + sqrt(2 eta / beta) * g_j

with independent standard-normal g_j drawn from a counter-based stream keyed
by (seed, step), row j belonging to particle j.  beta = inf switches the noise
off and leaves plain (mean-field) gradient descent.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .covariance import HyperParams
from .io import save_ensemble
from .net import Loss, ParticleEnsemble, SmoothReluParams, \
    all_first_variation_gradients, preactivations, predict, \
    predict_from_preactivations, regularized_empirical_risk
from .rng import step_noise, substream
from .tasks import Dataset

__all__ = [
    "MflaConfig",
    "TraceRecord",
    "DivergenceError",
    "init_ensemble",
    "mfla_step",
    "run",
]


class DivergenceError(RuntimeError):
    """A step produced non-finite weights; carries the last good state."""

    def __init__(self, step: int, ensemble: ParticleEnsemble, trace: list):
        super().__init__(f"non-finite update at step {step}")
        self.step = step
        self.ensemble = ensemble
        self.trace = trace


@dataclass(frozen=True)
class MflaConfig:
    """Shape of one Euclidean training run.

    ``beta = inf`` disables the Langevin noise.  ``sigma0 = None`` picks the
    default init scale 1/sqrt(2d+2), which gives unit expected squared row
    norm.  ``init`` is either "gaussian" or a checkpoint path to resume from.
    """

    m: int
    lam: float
    beta: float
    eta: float
    kappa: float
    iota: float
    seed: int
    budget: int
    loss: Loss = field(default_factory=Loss)
    eval_every: int = 100
    sigma0: Optional[float] = None
    init: str = "gaussian"
    stop_test01: Optional[float] = None

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("need at least one particle")
        if self.budget < 0 or self.eval_every < 1:
            raise ValueError("bad budget or eval cadence")
        if self.eta < 0 or self.beta <= 0 or self.lam < 0:
            raise ValueError("eta, beta, lam out of range")

    @classmethod
    def from_hyperparams(cls, hp: HyperParams, seed: int, budget: int,
                         **overrides) -> "MflaConfig":
        kw = dict(m=hp.m, lam=hp.lam, beta=hp.beta, eta=hp.eta_practical,
                  kappa=hp.kappa, iota=hp.iota, seed=seed, budget=budget)
        kw.update(overrides)
        return cls(**kw)

    def activation(self) -> SmoothReluParams:
        return SmoothReluParams(kappa=self.kappa, iota=self.iota)


@dataclass(frozen=True)
class TraceRecord:
    step: int
    train_risk: float
    reg: float
    total: float
    test_risk: float
    test01: float
    alignment: float
    seconds: float

    COLUMNS = ("step", "train_risk", "reg", "total",
               "test_risk", "test01", "alignment", "seconds")

    def astuple(self):
        return (self.step, self.train_risk, self.reg, self.total,
                self.test_risk, self.test01, self.alignment, self.seconds)


def init_ensemble(m: int, d: int, init: str, seed: int,
                  sigma0: Optional[float] = None) -> ParticleEnsemble:
    """Fresh i.i.d. Gaussian ensemble, or one loaded from a checkpoint."""
    if init != "gaussian":
        from .io import load_ensemble
        ensemble, _ = load_ensemble(init)
        if ensemble.space != "euclidean":
            raise ValueError("checkpoint is not a euclidean ensemble")
        return ensemble
    cols = 2 * d + 2
    scale = math.sqrt(1.0 / cols) if sigma0 is None else sigma0
    weights = scale * substream(seed, 0).standard_normal((m, cols))
    return ParticleEnsemble("euclidean", weights)


def mfla_step(ensemble: ParticleEnsemble, dataset: Dataset, config: MflaConfig,
              step: int, params: SmoothReluParams,
              predictions: Optional[np.ndarray] = None,
              buffers: Optional[tuple] = None,
              noise: Optional[np.ndarray] = None,
              z: Optional[tuple] = None) -> ParticleEnsemble:
    """One update of every particle against the frozen prediction cache.

    ``noise`` overrides the keyed stream draw (used by tests exercising the
    relabeling equivariance; shape must match the weight matrix).  ``z``
    passes precomputed pre-activations through to the gradient kernels.
    """
    if predictions is None:
        if z is None:
            z = preactivations(ensemble, dataset.augmented)
        predictions = predict_from_preactivations(z[0], z[1], params)
    grad = all_first_variation_gradients(ensemble, dataset, config.loss,
                                         config.lam, params, predictions,
                                         buffers, z)
    new = ensemble.weights - config.eta * grad
    if math.isfinite(config.beta):
        if noise is None:
            noise = step_noise(config.seed, step, ensemble.weights.shape)
        new += math.sqrt(2.0 * config.eta / config.beta) * noise
    if not np.all(np.isfinite(new)):
        raise DivergenceError(step, ensemble, [])
    ensemble.weights = new
    return ensemble


def _zero_one_error(predictions: np.ndarray, labels: np.ndarray) -> float:
    """Sign-agreement error with sign(0) = +1 on both sides."""
    p = np.where(predictions >= 0.0, 1.0, -1.0)
    y = np.where(labels >= 0.0, 1.0, -1.0)
    return float(np.mean(p != y))


def _evaluate(ensemble: ParticleEnsemble, dataset: Dataset,
              test_set: Optional[Dataset], loss: Loss, lam: float, params,
              U: Optional[np.ndarray], step: int, t0: float) -> TraceRecord:
    risk, reg, total = regularized_empirical_risk(ensemble, dataset, loss,
                                                  lam, params)
    test_risk = risk
    test01 = 1.0
    if test_set is not None:
        inp = test_set.augmented if ensemble.space == "euclidean" else test_set.inputs
        preds = predict(ensemble, inp, params)
        test_risk = float(np.mean(loss.rho(preds - test_set.labels)))
        test01 = _zero_one_error(preds, test_set.labels)
    if U is not None:
        from .diagnostics import subspace_alignment
        alignment = subspace_alignment(ensemble, U)
    else:
        alignment = 0.0
    return TraceRecord(step, risk, reg, total, test_risk, test01, alignment,
                       time.perf_counter() - t0)


def run(config: MflaConfig, dataset: Dataset, test_set: Optional[Dataset] = None,
        U: Optional[np.ndarray] = None,
        checkpoint_path: Optional[str | Path] = None,
        ) -> tuple[ParticleEnsemble, list[TraceRecord]]:
    """Full training loop with cadenced evaluation.

    Emits a record at step 0, every ``eval_every`` steps, and at the final
    step.  On a non-finite update the last good ensemble is checkpointed (when
    a path is given) and a DivergenceError carrying state is raised.  With
    ``stop_test01`` set, the loop stops at the first eval point whose test 0-1
    error is at or below the threshold.
    """
    d = dataset.inputs.shape[1]
    params = config.activation()
    ensemble = init_ensemble(config.m, d, config.init, config.seed,
                             config.sigma0)
    t0 = time.perf_counter()
    trace = [_evaluate(ensemble, dataset, test_set, config.loss, config.lam,
                       params, U, 0, t0)]
    if config.stop_test01 is not None and trace[0].test01 <= config.stop_test01:
        return ensemble, trace
    shape = (dataset.n, config.m)
    buffers = (np.empty(shape), np.empty(shape))
    zbuf = (np.empty(shape), np.empty(shape))
    for step in range(1, config.budget + 1):
        z = preactivations(ensemble, dataset.augmented, out=zbuf)
        predictions = predict_from_preactivations(z[0], z[1], params)
        try:
            mfla_step(ensemble, dataset, config, step, params, predictions,
                      buffers, z=z)
        except DivergenceError as err:
            if checkpoint_path is not None:
                save_ensemble(err.ensemble, checkpoint_path,
                              {"aborted_at_step": step, "seed": config.seed})
            raise DivergenceError(step, err.ensemble, trace) from None
        if step % config.eval_every == 0 or step == config.budget:
            trace.append(_evaluate(ensemble, dataset, test_set, config.loss,
                                   config.lam, params, U, step, t0))
            if (config.stop_test01 is not None
                    and trace[-1].test01 <= config.stop_test01):
                break
    if checkpoint_path is not None:
        save_ensemble(ensemble, checkpoint_path,
                      {"steps": trace[-1].step, "seed": config.seed})
    return ensemble, trace
