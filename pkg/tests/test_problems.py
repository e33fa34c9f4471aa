"""Problems: data generation, losses, gradients, sharding, binary IO."""

import math

import numpy as np
import pytest

from psgdlab import problems as prob
from psgdlab.dataset_io import load_dataset, save_dataset
from psgdlab.problems import (
    ProblemKind,
    Sample,
    ShardScheme,
    finite_difference,
    generate,
    gradient,
    initial_params,
    loss,
    make_problem,
    shard,
)
from psgdlab.vectors import ParamVector, mean_of

ALL_KINDS = [ProblemKind.QUADRATIC_BOWL, ProblemKind.LOGISTIC, ProblemKind.MLP_SOFTMAX]


def _problem_and_data(kind, seed=5, n_train=256, n_heldout=64):
    if kind is ProblemKind.QUADRATIC_BOWL:
        p = make_problem(kind, 6, 1, seed=seed)
        ds = generate(kind, seed, n_train, n_heldout, 6, 1)
    elif kind is ProblemKind.LOGISTIC:
        p = make_problem(kind, 8, 2)
        ds = generate(kind, seed, n_train, n_heldout, 8, 2)
    else:
        p = make_problem(kind, 6, 3, hidden=(7,))
        ds = generate(kind, seed, n_train, n_heldout, 6, 3)
    return p, ds


class TestGenerate:
    def test_same_arguments_bit_identical(self):
        a = generate("logistic", 42, 200, 50, 10, 2)
        b = generate("logistic", 42, 200, 50, 10, 2)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_sizes_and_disjoint_ranges(self):
        ds = generate("logistic", 1, 1000, 100, 10, 2)
        assert len(ds.samples) == 1000
        assert len(ds.heldout) == 100
        # heldout rows start where training rows end
        assert np.array_equal(ds.heldout_batch().features, ds.features[1000:])

    def test_zero_sizes_rejected(self):
        with pytest.raises(ValueError):
            generate("logistic", 1, 0, 10, 4, 2)
        with pytest.raises(ValueError):
            generate("logistic", 1, 10, 0, 4, 2)

    def test_classifier_labels_in_range(self):
        ds = generate("mlp_softmax", 3, 300, 30, 8, 4)
        assert ds.labels.min() >= 0 and ds.labels.max() < 4

    def test_separated_clusters_are_learnable(self):
        # independent oracle: plain SGD to convergence on the generated data
        ds = generate("logistic", 7, 1000, 200, 10, 2, separation=4.0)
        p = make_problem("logistic", 10, 2)
        w = initial_params(p, 7).values.copy()
        rng = np.random.default_rng(7)
        for _ in range(40):
            order = rng.permutation(1000)
            for start in range(0, 1000, 50):
                batch = ds.batch(order[start : start + 50])
                w -= 0.5 * p.gradient_arrays(w, batch)
        held = ds.heldout_batch()
        predictions = (held.features @ w[:-1] + w[-1]) > 0
        accuracy = float(np.mean(predictions == held.labels.astype(bool)))
        assert accuracy > 0.95


class TestLoss:
    def test_quadratic_zero_at_optimum(self):
        p, ds = _problem_and_data(ProblemKind.QUADRATIC_BOWL)
        assert loss(p, ParamVector(p.optimum), ds.batch(np.arange(4))) == 0.0

    def test_logistic_uniform_prediction_is_ln2(self):
        p = make_problem("logistic", 4, 2)
        batch = [
            Sample(np.array([1.0, 0, 0, 0]), 0),
            Sample(np.array([0, 1.0, 0, 0]), 1),
        ]
        assert loss(p, ParamVector(np.zeros(5)), batch) == pytest.approx(
            math.log(2), abs=1e-15
        )

    def test_mlp_zero_weights_uniform_softmax(self):
        p, ds = _problem_and_data(ProblemKind.MLP_SOFTMAX)
        p4 = make_problem("mlp_softmax", 6, 4, hidden=(7,))
        ds4 = generate("mlp_softmax", 9, 64, 16, 6, 4)
        value = loss(p4, ParamVector(np.zeros(p4.dimension)), ds4.batch(np.arange(10)))
        assert value == pytest.approx(math.log(4), abs=1e-12)

    def test_dimension_mismatch(self):
        p, ds = _problem_and_data(ProblemKind.LOGISTIC)
        with pytest.raises(ValueError, match="dimension"):
            loss(p, ParamVector(np.zeros(3)), ds.batch(np.arange(4)))

    def test_empty_batch_rejected(self):
        p, ds = _problem_and_data(ProblemKind.LOGISTIC)
        with pytest.raises(ValueError, match="non-empty"):
            loss(p, ParamVector(np.zeros(9)), [])

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_invariant_under_batch_permutation(self, kind):
        p, ds = _problem_and_data(kind)
        w = initial_params(p, 3)
        idx = np.arange(32)
        rng = np.random.default_rng(0)
        a = loss(p, w, ds.batch(idx))
        b = loss(p, w, ds.batch(rng.permutation(idx)))
        assert a == pytest.approx(b, rel=1e-12)


class TestGradient:
    def test_quadratic_hand_value(self):
        p = prob.QuadraticBowl(curvature=np.array([2.0, 2.0]), optimum=np.zeros(2))
        ds = generate("quadratic_bowl", 1, 16, 4, 2, 1)
        g = gradient(p, ParamVector([1.0, 1.0]), ds.batch(np.arange(4)))
        assert g == ParamVector([2.0, 2.0])

    def test_zero_at_stationary_point(self):
        p, ds = _problem_and_data(ProblemKind.QUADRATIC_BOWL)
        g = gradient(p, ParamVector(p.optimum), ds.batch(np.arange(8)))
        assert np.all(g.values == 0.0)

    @pytest.mark.parametrize(
        "kind,tol",
        [
            (ProblemKind.QUADRATIC_BOWL, 1e-6),
            (ProblemKind.LOGISTIC, 1e-6),
            (ProblemKind.MLP_SOFTMAX, 1e-5),
        ],
    )
    def test_matches_central_differences(self, kind, tol):
        p, ds = _problem_and_data(kind)
        rng = np.random.default_rng(11)
        for _ in range(5):
            w = ParamVector(0.5 * rng.standard_normal(p.dimension))
            batch = ds.batch(rng.integers(0, ds.n_train, size=16))
            g = gradient(p, w, batch).values
            fd = finite_difference(p, w, batch, 1e-5).values
            rel = np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-12)
            assert rel < tol

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_batch_gradient_is_mean_of_per_sample(self, kind):
        p, ds = _problem_and_data(kind)
        w = initial_params(p, 1)
        idx = np.arange(12)
        whole = gradient(p, w, ds.batch(idx)).values
        per_sample = mean_of(
            [gradient(p, w, ds.batch(idx[i : i + 1])) for i in range(12)]
        ).values
        scale = max(1.0, float(np.abs(whole).max()))
        assert np.abs(whole - per_sample).max() <= 1e-12 * scale


class TestFiniteDifference:
    def test_quadratic_exact_under_central_differences(self):
        p = prob.QuadraticBowl(curvature=np.array([2.0]), optimum=np.zeros(1))
        ds = generate("quadratic_bowl", 1, 8, 2, 1, 1)
        fd = finite_difference(p, ParamVector([1.0]), ds.batch([0, 1]), 1e-5)
        assert fd[0] == pytest.approx(2.0, abs=1e-8)

    def test_logistic_eleven_params(self):
        p = make_problem("logistic", 10, 2)
        ds = generate("logistic", 13, 64, 16, 10, 2)
        rng = np.random.default_rng(13)
        w = ParamVector(rng.standard_normal(11) * 0.5)
        batch = ds.batch(np.arange(16))
        g = gradient(p, w, batch).values
        fd = finite_difference(p, w, batch, 1e-5).values
        assert np.linalg.norm(g - fd) / np.linalg.norm(g) < 1e-6

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_result_dimension(self, kind):
        p, ds = _problem_and_data(kind)
        w = initial_params(p, 2)
        assert finite_difference(p, w, ds.batch(np.arange(4)), 1e-5).dim == p.dimension

    def test_epsilon_must_be_positive(self):
        p, ds = _problem_and_data(ProblemKind.LOGISTIC)
        with pytest.raises(ValueError):
            finite_difference(p, initial_params(p, 0), ds.batch([0]), 0.0)


class TestShard:
    def test_partition_even_split(self):
        ds = generate("logistic", 1, 100, 10, 4, 2)
        parts = [shard(ds, l, 4, "partition") for l in range(4)]
        assert [len(part) for part in parts] == [25, 25, 25, 25]
        merged = np.sort(np.concatenate(parts))
        assert np.array_equal(merged, np.arange(100))

    def test_single_learner_identity(self):
        ds = generate("logistic", 1, 20, 4, 4, 2)
        assert np.array_equal(shard(ds, 0, 1, "partition"), np.arange(20))
        assert np.array_equal(shard(ds, 0, 1, "full_with_offset"), np.arange(20))

    def test_remainder_goes_to_last_learner(self):
        ds = generate("logistic", 1, 10, 2, 4, 2)
        sizes = [len(shard(ds, l, 3, "partition")) for l in range(3)]
        assert sizes == [3, 3, 4]

    def test_full_with_offset_is_rotation(self):
        ds = generate("logistic", 1, 12, 2, 4, 2)
        view = shard(ds, 1, 4, ShardScheme.FULL_WITH_OFFSET)
        assert view[0] == 3  # offset 1 * 12 // 4
        assert len(view) == 12
        assert np.array_equal(np.sort(view), np.arange(12))

    def test_too_many_learners_rejected(self):
        ds = generate("logistic", 1, 4, 2, 4, 2)
        with pytest.raises(ValueError):
            shard(ds, 0, 5, "partition")

    def test_learner_index_bounds(self):
        ds = generate("logistic", 1, 10, 2, 4, 2)
        with pytest.raises(ValueError):
            shard(ds, 4, 4, "partition")


class TestDatasetIO:
    def test_round_trip_preserves_bytes(self, tmp_path):
        ds = generate("logistic", 5, 64, 16, 6, 2)
        path = tmp_path / "corpus.bin"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert np.array_equal(back.features, ds.features)
        assert np.array_equal(back.labels, ds.labels)
        assert (back.d_x, back.d_y) == (6, 2)
        assert (back.n_train, back.n_heldout) == (64, 16)

    def test_regression_labels_rejected(self, tmp_path):
        ds = generate("quadratic_bowl", 5, 16, 4, 3, 1)
        with pytest.raises(ValueError, match="regression"):
            save_dataset(ds, tmp_path / "nope.bin")

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTPSGD" + b"\x00" * 64)
        with pytest.raises(ValueError, match="magic"):
            load_dataset(path)

    def test_truncated_file_rejected(self, tmp_path):
        ds = generate("logistic", 5, 32, 8, 4, 2)
        path = tmp_path / "short.bin"
        save_dataset(ds, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="truncated"):
            load_dataset(path)


def test_batch_accepts_sample_lists_and_batches():
    p, ds = _problem_and_data(ProblemKind.LOGISTIC)
    w = initial_params(p, 3)
    idx = np.arange(8)
    from_batch = loss(p, w, ds.batch(idx))
    from_samples = loss(p, w, [ds.samples[i] for i in idx])
    assert from_batch == from_samples
