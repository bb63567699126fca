"""Target directions, link functions, and synthetic multi-index datasets.

A task draws inputs x = Sigma^{1/2} z (z Gaussian or uniform on the sign
cube), projects them onto k hidden orthonormal directions, applies a link
function, and adds Gaussian noise.  Inputs are augmented with a constant bias
coordinate so the network can realize affine features.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.polynomial.hermite_e import hermeval

from .covariance import CovarianceError, CovarianceModel, CovarianceSpec, apply_sqrt
from .rng import substream

__all__ = [
    "Link",
    "TaskSpec",
    "Dataset",
    "sample_directions",
    "spike_direction",
    "aligned_profile_direction",
    "eval_link",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
]


@dataclass(frozen=True)
class Link:
    """Link function applied to the k projected coordinates.

    ``scale`` is the task's r_x; Lipschitz links use L = 1/scale so the label
    variance stays of order one regardless of the input geometry.
    """

    kind: str                 # parity | lipschitz_norm | ridge_tanh | hermite_single
    scale: float = 1.0
    degree: int = 3           # hermite_single only

    def __post_init__(self):
        if self.kind not in ("parity", "lipschitz_norm", "ridge_tanh", "hermite_single"):
            raise ValueError(f"unknown link kind {self.kind!r}")
        if self.scale <= 0:
            raise ValueError("link scale must be positive")
        if self.kind == "hermite_single" and self.degree < 1:
            raise ValueError("hermite degree must be at least 1")

    @property
    def lipschitz(self) -> Optional[float]:
        if self.kind in ("lipschitz_norm", "ridge_tanh"):
            return 1.0 / self.scale
        return None


def eval_link(link: Link, z: np.ndarray) -> np.ndarray:
    """Evaluate the link on one k-vector or a stack of them."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if link.kind == "parity":
        prod = np.prod(z, axis=1)
        return np.where(prod >= 0.0, 1.0, -1.0)    # tie at zero maps to +1
    if link.kind == "lipschitz_norm":
        return np.linalg.norm(z, axis=1) / link.scale
    if link.kind == "ridge_tanh":
        return np.sum(np.tanh(z / link.scale), axis=1)
    # normalized probabilists' Hermite of a single projection
    if z.shape[1] != 1:
        raise ValueError("hermite_single link requires k = 1")
    s = link.degree
    coeffs = np.zeros(s + 1)
    coeffs[s] = 1.0
    return hermeval(z[:, 0] / link.scale, coeffs) / math.sqrt(math.factorial(s))


@dataclass(frozen=True)
class TaskSpec:
    d: int
    k: int
    link: Link
    covariance: CovarianceSpec
    noise_std: float = 0.0
    input_law: str = "gaussian"                 # gaussian | rademacher_cube
    direction_policy: str = "random_orthonormal"  # random_orthonormal | spike_aligned

    def __post_init__(self):
        if not 1 <= self.k <= self.d:
            raise ValueError(f"need 1 <= k <= d, got k={self.k}, d={self.d}")
        if self.noise_std < 0:
            raise ValueError("noise level must be nonnegative")
        if self.input_law not in ("gaussian", "rademacher_cube"):
            raise ValueError(f"unknown input law {self.input_law!r}")
        if self.input_law == "rademacher_cube" and self.covariance.kind not in ("isotropic", "explicit"):
            raise ValueError("cube inputs support only isotropic or explicit covariance")
        if self.direction_policy not in ("random_orthonormal", "spike_aligned"):
            raise ValueError(f"unknown direction policy {self.direction_policy!r}")

    def fingerprint(self) -> str:
        payload = dict(d=self.d, k=self.k, link=self.link.kind, scale=self.link.scale,
                       degree=self.link.degree, cov=self.covariance.kind,
                       noise=self.noise_std, law=self.input_law,
                       policy=self.direction_policy)
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray       # n x d
    augmented: np.ndarray    # n x (d+1), last column is r_x_tilde
    labels: np.ndarray       # n
    seed: int
    task_hash: str
    r_x_tilde: float

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int:
        return self.inputs.shape[1]


def sample_directions(d: int, k: int, seed: int, U: Optional[np.ndarray] = None) -> np.ndarray:
    """Haar-random stacked directions U with rows u_i/sqrt(k).

    Pass an explicit ``U`` to pin the hidden directions (e.g. coordinate
    parities); it is validated and returned unchanged.
    """
    if k > d:
        raise ValueError(f"need k <= d, got k={k}, d={d}")
    if U is not None:
        U = np.asarray(U, dtype=float)
        if U.shape != (k, d):
            raise ValueError(f"explicit U has shape {U.shape}, expected ({k}, {d})")
        if np.max(np.abs(U @ U.T - np.eye(k) / k)) > 1e-10:
            raise ValueError("explicit U rows must be orthonormal over sqrt(k)")
        return U
    rng = substream(seed, 2)
    g = rng.standard_normal((d, k))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))    # deterministic sign convention
    return q.T / math.sqrt(k)


def spike_direction(U: np.ndarray, gamma1: float, seed: int) -> np.ndarray:
    """Unit spike direction with overlap ||U theta|| = d**(-gamma1) / sqrt(k).

    Constructed as cos(psi) v_in + sin(psi) v_out with v_in a unit vector in
    the row span of U and v_out a unit vector orthogonal to it, so the overlap
    is exact: any unit v in the row span has ||U v|| = 1/sqrt(k).
    """
    U = np.asarray(U, dtype=float)
    k, d = U.shape
    if k >= d:
        raise ValueError("spike construction needs k < d")
    cos_psi = float(d) ** (-gamma1)
    rng = substream(seed, 3)
    a = rng.standard_normal(k)
    v_in = U.T @ a
    v_in /= np.linalg.norm(v_in)
    g = rng.standard_normal(d)
    g -= U.T @ np.linalg.solve(U @ U.T, U @ g)     # remove row-span component
    v_out = g / np.linalg.norm(g)
    theta = cos_psi * v_in + math.sqrt(1.0 - cos_psi ** 2) * v_out
    return theta / np.linalg.norm(theta)


def aligned_profile_direction(eigenvalues_len: int, gamma: float, seed: int) -> np.ndarray:
    """Single direction (k=1) whose alignment with the standard basis decays
    like i**(-gamma), exactly normalized; signs are randomized per seed."""
    d = eigenvalues_len
    weights = np.arange(1, d + 1, dtype=float) ** (-gamma)
    weights /= weights.sum()
    signs = substream(seed, 4).choice([-1.0, 1.0], size=d)
    return (signs * np.sqrt(weights)).reshape(1, d)


def generate_dataset(task: TaskSpec, model: CovarianceModel, U: np.ndarray,
                     n: int, seed: int, r_x_tilde: float) -> Dataset:
    """Draw n labeled samples; deterministic given (task, n, seed)."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = substream(seed, 5)
    if task.input_law == "gaussian":
        z = rng.standard_normal((n, task.d))
    else:
        z = rng.choice([-1.0, 1.0], size=(n, task.d))
    x = apply_sqrt(model, z)
    y = eval_link(task.link, x @ U.T)
    if task.noise_std > 0:
        y = y + task.noise_std * rng.standard_normal(n)
    augmented = np.empty((n, task.d + 1))
    augmented[:, :-1] = x
    augmented[:, -1] = r_x_tilde
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite labels generated")
    return Dataset(inputs=x, augmented=augmented, labels=y, seed=seed,
                   task_hash=task.fingerprint(), r_x_tilde=r_x_tilde)


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """CSV with columns x_1..x_d, y plus a JSON sidecar for provenance."""
    path = Path(path)
    header = ",".join([f"x_{i+1}" for i in range(ds.d)] + ["y"])
    table = np.column_stack([ds.inputs, ds.labels])
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in table:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    meta = dict(seed=ds.seed, task_hash=ds.task_hash, r_x_tilde=ds.r_x_tilde, n=ds.n, d=ds.d)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    x, y = table[:, :-1], table[:, -1]
    augmented = np.empty((len(y), x.shape[1] + 1))
    augmented[:, :-1] = x
    augmented[:, -1] = meta["r_x_tilde"]
    return Dataset(inputs=x, augmented=augmented, labels=y, seed=meta["seed"],
                   task_hash=meta["task_hash"], r_x_tilde=meta["r_x_tilde"])
