import math

import numpy as np
import pytest

from mflab.covariance import CovarianceSpec, build_covariance
from mflab.tasks import (
    Dataset,
    Link,
    TaskSpec,
    aligned_profile_direction,
    eval_link,
    generate_dataset,
    load_dataset,
    sample_directions,
    spike_direction,
    save_dataset,
)


def make_task(d=8, k=2, link=None, **kwargs):
    link = link or Link("parity")
    cov = kwargs.pop("covariance", CovarianceSpec("isotropic", d))
    return TaskSpec(d=d, k=k, link=link, covariance=cov, **kwargs)


class TestSampleDirections:
    def test_single_row_unit_norm(self):
        U = sample_directions(3, 1, seed=0)
        assert np.linalg.norm(U) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("d,k", [(5, 2), (16, 4), (7, 7)])
    def test_orthonormality_identity(self, d, k):
        U = sample_directions(d, k, seed=1)
        assert np.max(np.abs(U @ U.T - np.eye(k) / k)) < 1e-12

    def test_seed_determinism(self):
        a = sample_directions(10, 3, seed=42)
        b = sample_directions(10, 3, seed=42)
        assert np.array_equal(a, b)

    def test_k_exceeds_d(self):
        with pytest.raises(ValueError):
            sample_directions(3, 4, seed=0)

    def test_explicit_passthrough(self):
        U = np.zeros((2, 6))
        U[0, 0] = U[1, 1] = 1 / math.sqrt(2)
        assert np.array_equal(sample_directions(6, 2, seed=0, U=U), U)

    def test_explicit_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            sample_directions(4, 2, seed=0, U=np.ones((2, 4)))


class TestSpikeDirection:
    @pytest.mark.parametrize("gamma1", [0.0, 0.25, 0.5])
    def test_exact_overlap(self, gamma1):
        d, k = 64, 2
        U = sample_directions(d, k, seed=3)
        theta = spike_direction(U, gamma1, seed=9)
        assert np.linalg.norm(theta) == pytest.approx(1.0, abs=1e-12)
        expect = d ** (-gamma1) / math.sqrt(k)
        assert np.linalg.norm(U @ theta) == pytest.approx(expect, abs=1e-10)


class TestAlignedProfile:
    def test_profile_and_normalization(self):
        U = aligned_profile_direction(16, gamma=1.2, seed=0)
        assert np.linalg.norm(U) == pytest.approx(1.0, abs=1e-12)
        w = U[0] ** 2
        ratio = w / w[0]
        assert np.allclose(ratio, np.arange(1, 17, dtype=float) ** -1.2)


class TestEvalLink:
    def test_parity_sign_of_product(self):
        link = Link("parity")
        assert eval_link(link, np.array([1.0, -1.0]))[0] == -1.0
        assert eval_link(link, np.array([-2.0, -3.0]))[0] == 1.0

    def test_parity_zero_tiebreak(self):
        assert eval_link(Link("parity"), np.array([0.0, 1.0]))[0] == 1.0

    def test_lipschitz_norm(self):
        link = Link("lipschitz_norm", scale=1.0)   # L = 1
        assert eval_link(link, np.array([3.0, 4.0]))[0] == pytest.approx(5.0)

    def test_ridge_tanh(self):
        link = Link("ridge_tanh", scale=2.0)
        z = np.array([1.0, -3.0])
        assert eval_link(link, z)[0] == pytest.approx(math.tanh(0.5) + math.tanh(-1.5))

    def test_hermite_small_orders(self):
        # He_2(x) = x^2 - 1, normalized by sqrt(2!)
        link = Link("hermite_single", scale=1.0, degree=2)
        z = np.array([[2.0]])
        assert eval_link(link, z)[0] == pytest.approx(3.0 / math.sqrt(2))

    def test_permutation_symmetric_links(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal((50, 3))
        for kind in ("parity", "lipschitz_norm", "ridge_tanh"):
            link = Link(kind)
            a = eval_link(link, z)
            b = eval_link(link, z[:, [2, 0, 1]])
            assert np.allclose(a, b)


class TestGenerateDataset:
    def _build(self, task, n, seed, r_t=1.0, U=None):
        model = build_covariance(task.covariance)
        if U is None:
            U = sample_directions(task.d, task.k, seed=0)
        return generate_dataset(task, model, U, n, seed, r_t), model, U

    def test_noiseless_parity_on_cube(self):
        task = make_task(d=6, k=2, input_law="rademacher_cube")
        ds, _, _ = self._build(task, 200, seed=1)
        assert set(np.unique(ds.labels)) <= {-1.0, 1.0}

    def test_determinism(self):
        task = make_task()
        a, _, _ = self._build(task, 64, seed=5)
        b, _, _ = self._build(task, 64, seed=5)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.labels, b.labels)

    def test_augmented_layout(self):
        task = make_task()
        ds, _, _ = self._build(task, 10, seed=2, r_t=3.5)
        assert np.array_equal(ds.augmented[:, :-1], ds.inputs)
        assert np.all(ds.augmented[:, -1] == 3.5)

    def test_mean_label_matches_monte_carlo_oracle(self):
        # isotropic Gaussian, k=1, norm link: E|z| = sqrt(2/pi) exactly
        task = make_task(d=4, k=1, link=Link("lipschitz_norm", scale=1.0))
        ds, _, _ = self._build(task, 100_000, seed=3)
        expect = math.sqrt(2.0 / math.pi)
        stderr = ds.labels.std() / math.sqrt(ds.n)
        assert abs(ds.labels.mean() - expect) < 3 * stderr

    def test_projection_second_moment(self):
        # E ||Ux||^2 = r_x^2 within 2% over 1e5 samples
        d = 10
        cov = CovarianceSpec("spiked", d, gamma1=0.2, gamma2=0.8)
        task = make_task(d=d, k=2, covariance=cov)
        model = build_covariance(cov, theta=spike_direction(sample_directions(d, 2, 0), 0.2, 0))
        U = sample_directions(d, 2, seed=0)
        ds = generate_dataset(task, model, U, 100_000, 7, 1.0)
        from mflab.covariance import effective_dimension
        rx2 = model.trace / effective_dimension(model, U)
        emp = np.mean(np.sum((ds.inputs @ U.T) ** 2, axis=1))
        assert emp == pytest.approx(rx2, rel=0.02)

    def test_tail_fraction_below_planned_radius(self):
        # with the planner's q=1, P(||Ux|| > r_x_tilde) is tiny
        from mflab.covariance import plan_hyperparameters
        d, k, n = 16, 2, 2048
        cov = CovarianceSpec("isotropic", d)
        task = make_task(d=d, k=k, covariance=cov)
        model = build_covariance(cov)
        exceed = 0
        for seed in range(20):
            U = sample_directions(d, k, seed=seed)
            hp = plan_hyperparameters(model, U, n=n, lam_tilde=0.1, eps=0.5, q=1.0)
            ds = generate_dataset(task, model, U, n, seed, hp.r_x_tilde)
            exceed += np.sum(np.linalg.norm(ds.inputs @ U.T, axis=1) > hp.r_x_tilde)
        assert exceed / 20 <= 5

    def test_csv_round_trip(self, tmp_path):
        task = make_task(d=5, k=1, link=Link("lipschitz_norm"))
        ds, _, _ = self._build(task, 32, seed=9, r_t=2.25)
        path = tmp_path / "data.csv"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert np.array_equal(back.inputs, ds.inputs)
        assert np.array_equal(back.labels, ds.labels)
        assert back.r_x_tilde == ds.r_x_tilde
        assert back.task_hash == ds.task_hash


class TestTaskSpecValidation:
    def test_cube_rejects_structured_covariance(self):
        cov = CovarianceSpec("spiked", 8, gamma1=0.1, gamma2=0.5)
        with pytest.raises(ValueError):
            make_task(d=8, covariance=cov, input_law="rademacher_cube")

    def test_k_bounds(self):
        with pytest.raises(ValueError):
            make_task(d=4, k=5)
