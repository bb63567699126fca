import math

import numpy as np
import pytest

from mflab.covariance import CovarianceSpec, build_covariance
from mflab.io import load_ensemble, save_ensemble
from mflab.net import (
    ActivationConstructionError,
    Loss,
    ParticleEnsemble,
    SmoothReluParams,
    TanhActivation,
    activation_pair,
    all_first_variation_gradients,
    first_variation_gradient,
    predict,
    regularized_empirical_risk,
    smooth_relu,
)
from mflab.tasks import Link, TaskSpec, generate_dataset, sample_directions


def make_dataset(d=4, n=8, seed=0, k=1, cube=False):
    cov = CovarianceSpec("isotropic", d)
    task = TaskSpec(d=d, k=k, link=Link("lipschitz_norm"), covariance=cov,
                    input_law="rademacher_cube" if cube else "gaussian")
    model = build_covariance(cov)
    U = sample_directions(d, k, seed=seed)
    return generate_dataset(task, model, U, n, seed, r_x_tilde=1.5)


def naive_objective(weights, dataset, loss, lam, params):
    """Independent double-loop re-implementation of the total objective."""
    m = len(weights)
    h = dataset.d + 1
    total_loss = 0.0
    for i in range(dataset.n):
        pred = 0.0
        for j in range(m):
            v1, _, _ = smooth_relu(float(dataset.augmented[i] @ weights[j][:h]), params)
            v2, _, _ = smooth_relu(float(dataset.augmented[i] @ weights[j][h:]), params)
            pred += (v1 - v2) / m
        total_loss += float(loss.rho(pred - dataset.labels[i])) / dataset.n
    reg = sum(float(w @ w) for w in weights) / m
    return total_loss + 0.5 * lam * reg


class TestSmoothRelu:
    def test_softplus_at_zero(self):
        p = SmoothReluParams(kappa=1.5, iota=2.0)
        v, d1, _ = smooth_relu(0.0, p)
        assert v == pytest.approx(math.log(2) / p.kappa, rel=1e-12)
        assert d1 == pytest.approx(0.5, rel=1e-12)

    def test_negative_tail(self):
        p = SmoothReluParams(kappa=4.0, iota=2.0)
        v, d1, _ = smooth_relu(-10.0, p)
        assert v <= 1e-17
        assert d1 <= 1e-17

    def test_saturation(self):
        p = SmoothReluParams(kappa=4.0, iota=2.0)
        v, d1, d2 = smooth_relu(p.z_sat + 1.0, p)
        assert v == p.iota
        assert d1 == 0.0 and d2 == 0.0

    @pytest.mark.parametrize("kappa,iota", [(1.5, 2.0), (2.0, 4.0), (8.0, 2.0), (32.0, 16.0), (8.0, 400.0)])
    def test_bounds_and_monotone(self, kappa, iota):
        p = SmoothReluParams(kappa=kappa, iota=iota)
        grid = np.linspace(-10 * iota, 10 * iota, 10_000)
        val, d1, d2 = smooth_relu(grid, p)
        assert np.all(np.diff(val) >= -1e-12)
        assert val.min() >= -1e-12 and val.max() <= iota + 1e-9
        assert d1.min() >= -1e-9 and d1.max() <= 1.0 + 1e-9
        assert np.max(np.abs(d2)) <= kappa + 1e-9

    def test_derivatives_match_finite_differences(self):
        p = SmoothReluParams(kappa=3.0, iota=2.5)
        rng = np.random.default_rng(0)
        z = rng.uniform(-5, 2 * p.z_sat, 200)
        h = 1e-6
        vp, _, _ = smooth_relu(z + h, p)
        vm, _, _ = smooth_relu(z - h, p)
        _, d1, d2 = smooth_relu(z, p)
        v0, _, _ = smooth_relu(z, p)
        assert np.max(np.abs((vp - vm) / (2 * h) - d1)) < 1e-6
        assert np.max(np.abs((vp - 2 * v0 + vm) / h ** 2 - d2)) < 1e-3

    def test_rejects_invalid_params(self):
        with pytest.raises(ValueError):
            SmoothReluParams(kappa=0.5, iota=2.0)
        with pytest.raises(ValueError):
            SmoothReluParams(kappa=2.0, iota=0.9)

    def test_infeasible_corner_fails_loudly(self):
        # at kappa just above 1 with a tight cap, no C^2 extension can kill
        # the knee slope within the remaining headroom; construction must
        # refuse rather than silently violate the curvature bound
        with pytest.raises(ActivationConstructionError):
            SmoothReluParams(kappa=1.01, iota=1.05)


class TestActivationPair:
    def setup_method(self):
        self.p = SmoothReluParams(kappa=4.0, iota=2.0)

    def test_symmetric_halves_cancel(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(5)
        w_half = rng.standard_normal(5)
        w = np.concatenate([w_half, w_half])
        assert activation_pair(x, w, self.p) == 0.0

    def test_zero_second_half(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(5)
        w1 = rng.standard_normal(5)
        w = np.concatenate([w1, np.zeros(5)])
        v1, _, _ = smooth_relu(float(x @ w1), self.p)
        assert activation_pair(x, w, self.p) == pytest.approx(v1 - math.log(2) / 4.0)

    def test_bounded_by_two_iota(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x = 10 * rng.standard_normal(4)
            w = 10 * rng.standard_normal(8)
            assert abs(activation_pair(x, w, self.p)) <= 2 * self.p.iota + 1e-12


class TestPredict:
    def setup_method(self):
        self.p = SmoothReluParams(kappa=4.0, iota=2.0)

    def test_singleton_equals_pair(self):
        rng = np.random.default_rng(4)
        w = rng.standard_normal((1, 10))
        x = rng.standard_normal(5)
        ens = ParticleEnsemble("euclidean", w)
        assert predict(ens, x, self.p)[0] == pytest.approx(
            activation_pair(x, w[0], self.p), rel=1e-14)

    def test_identical_particles(self):
        rng = np.random.default_rng(5)
        w = np.tile(rng.standard_normal(10), (7, 1))
        x = rng.standard_normal((3, 5))
        ens = ParticleEnsemble("euclidean", w)
        vals = predict(ens, x, self.p)
        for i in range(3):
            assert vals[i] == pytest.approx(activation_pair(x[i], w[0], self.p), rel=1e-12)

    def test_half_swap_antisymmetry(self):
        rng = np.random.default_rng(6)
        w1 = rng.standard_normal(10)
        swapped = np.concatenate([w1[5:], w1[:5]])
        ens = ParticleEnsemble("euclidean", np.stack([w1, swapped]))
        x = rng.standard_normal((4, 5))
        assert np.allclose(predict(ens, x, self.p), 0.0, atol=1e-15)

    def test_negation_symmetry(self):
        rng = np.random.default_rng(7)
        w = rng.standard_normal((6, 10))
        h = 5
        neg = np.concatenate([w[:, h:], w[:, :h]], axis=1)
        x = rng.standard_normal((8, 5))
        a = predict(ensemble := ParticleEnsemble("euclidean", w), x, self.p)
        b = predict(ParticleEnsemble("euclidean", neg), x, self.p)
        assert np.array_equal(a, -b)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(8)
        w = rng.standard_normal((9, 10))
        x = rng.standard_normal((4, 5))
        a = predict(ParticleEnsemble("euclidean", w), x, self.p)
        b = predict(ParticleEnsemble("euclidean", w[::-1].copy()), x, self.p)
        assert np.allclose(a, b, atol=1e-14)


class TestLoss:
    def test_pseudo_huber_bounds(self):
        loss = Loss("pseudo_huber", delta=1.5)
        t = np.linspace(-100, 100, 10_001)
        assert np.max(np.abs(loss.rho_prime(t))) <= 1.5
        assert loss.rho(0.0) == 0.0
        # convexity on the grid
        r = loss.rho(t)
        assert np.all(np.diff(r, 2) >= -1e-9)

    def test_squared(self):
        loss = Loss("squared")
        assert loss.rho(3.0) == pytest.approx(4.5)
        assert loss.rho_prime(3.0) == pytest.approx(3.0)


class TestRisk:
    def setup_method(self):
        self.p = SmoothReluParams(kappa=4.0, iota=2.0)

    def test_zero_weights_parity_squared(self):
        cov = CovarianceSpec("isotropic", 4)
        task = TaskSpec(d=4, k=2, link=Link("parity"), covariance=cov,
                        input_law="rademacher_cube")
        model = build_covariance(cov)
        U = np.zeros((2, 4))
        U[0, 0] = U[1, 1] = 1 / math.sqrt(2)
        ds = generate_dataset(task, model, U, 32, 0, 1.0)
        ens = ParticleEnsemble("euclidean", np.zeros((3, 10)))
        risk, reg, total = regularized_empirical_risk(ens, ds, Loss("squared"), 0.1, self.p)
        assert risk == pytest.approx(0.5)
        assert reg == 0.0

    def test_lambda_zero(self):
        ds = make_dataset()
        rng = np.random.default_rng(9)
        ens = ParticleEnsemble("euclidean", rng.standard_normal((3, 10)))
        risk, _, total = regularized_empirical_risk(ens, ds, Loss(), 0.0, self.p)
        assert total == risk

    def test_matches_naive_double_loop(self):
        ds = make_dataset(d=4, n=8, seed=11)
        rng = np.random.default_rng(10)
        ens = ParticleEnsemble("euclidean", rng.standard_normal((3, 10)))
        for loss in (Loss("squared"), Loss("pseudo_huber", delta=0.7)):
            _, _, total = regularized_empirical_risk(ens, ds, loss, 0.2, self.p)
            assert total == pytest.approx(
                naive_objective(list(ens.weights), ds, loss, 0.2, self.p), abs=1e-12)


class TestFirstVariationGradient:
    def setup_method(self):
        self.p = SmoothReluParams(kappa=4.0, iota=2.0)

    def test_pure_regularizer_on_zero_residuals(self):
        # zero weights predict 0; labels 0 => zero residuals for squared loss
        ds = make_dataset(d=3, n=6, seed=1)
        ds.labels[:] = 0.0
        rng = np.random.default_rng(11)
        w = np.zeros((2, 8))
        ens = ParticleEnsemble("euclidean", w)
        preds = predict(ens, ds.augmented, self.p)
        g = first_variation_gradient(ens, ds, Loss("squared"), 0.3, 0, self.p, preds)
        assert np.allclose(g, 0.3 * w[0])

    @pytest.mark.parametrize("loss", [Loss("squared"), Loss("pseudo_huber", delta=1.0)])
    @pytest.mark.parametrize("lam", [0.0, 0.1])
    def test_matches_finite_differences(self, loss, lam):
        rng = np.random.default_rng(12)
        for trial in range(5):
            d = int(rng.integers(2, 9))
            m = int(rng.integers(1, 5))
            n = int(rng.integers(4, 17))
            ds = make_dataset(d=d, n=n, seed=trial + 20)
            w = rng.standard_normal((m, 2 * d + 2))
            ens = ParticleEnsemble("euclidean", w)
            preds = predict(ens, ds.augmented, self.p)
            grads = all_first_variation_gradients(ens, ds, loss, lam, self.p, preds)
            j = int(rng.integers(m))
            gj = first_variation_gradient(ens, ds, loss, lam, j, self.p, preds)
            assert np.allclose(gj, grads[j], atol=1e-12)
            # oracle: m * central differences of the total objective
            h = 1e-5
            fd = np.empty_like(gj)
            for c in range(len(gj)):
                wp = w.copy(); wp[j, c] += h
                wm = w.copy(); wm[j, c] -= h
                fd[c] = m * (naive_objective(list(wp), ds, loss, lam, self.p)
                             - naive_objective(list(wm), ds, loss, lam, self.p)) / (2 * h)
            scale = max(np.max(np.abs(fd)), 1e-3)
            assert np.max(np.abs(fd - gj)) / scale < 1e-5


class TestCheckpointIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(13)
        ens = ParticleEnsemble("euclidean", rng.standard_normal((5, 12)))
        path = tmp_path / "ck.mflb"
        save_ensemble(ens, path, meta={"eta": 0.1})
        back, meta = load_ensemble(path)
        assert back.space == "euclidean"
        assert np.array_equal(back.weights, ens.weights)
        assert meta == {"eta": 0.1}

    def test_sphere_tag(self, tmp_path):
        rng = np.random.default_rng(14)
        w = rng.standard_normal((4, 6))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        ens = ParticleEnsemble("sphere", w)
        path = tmp_path / "ck.mflb"
        save_ensemble(ens, path)
        back, _ = load_ensemble(path)
        assert back.space == "sphere"
        assert np.array_equal(back.weights, ens.weights)

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.mflb"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        from mflab.io import CheckpointError
        with pytest.raises(CheckpointError):
            load_ensemble(path)
