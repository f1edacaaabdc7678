import numpy as np
import pytest

from ttalab.clustering import (FULL_BATCH, MINIBATCH_RUNNING, assign_step,
                               kmeans_objective, objective_trace_csv,
                               run_minibatch_kmeans, update_step)
from ttalab.errors import InvalidInput


def brute_force_assign(features, centers):
    labels = np.empty(len(features), dtype=np.int64)
    for i, z in enumerate(features):
        best, best_d = 0, np.inf
        for c, center in enumerate(centers):
            d = np.sum((z - center) ** 2)
            if d < best_d:
                best, best_d = c, d
        labels[i] = best
    return labels


class TestAssignStep:
    def test_point_on_center_assigned_to_it(self):
        centers = np.array([[0.0, 0.0], [3.0, 4.0]])
        assert assign_step(np.array([[3.0, 4.0]]), centers)[0] == 1

    def test_exact_tie_goes_to_lowest_index(self):
        centers = np.array([[0.0, 0.0], [2.0, 0.0]])
        assert assign_step(np.array([[1.0, 0.0]]), centers)[0] == 0

    def test_matches_brute_force(self, rng):
        features = rng.normal(size=(50, 2))
        centers = rng.normal(size=(3, 2))
        np.testing.assert_array_equal(assign_step(features, centers),
                                      brute_force_assign(features, centers))

    def test_matches_brute_force_at_scale(self, rng):
        for _ in range(5):
            features = rng.normal(size=(200, 6))
            centers = rng.normal(size=(10, 6))
            np.testing.assert_array_equal(assign_step(features, centers),
                                          brute_force_assign(features, centers))

    def test_dimension_mismatch_rejected(self, rng):
        with pytest.raises(InvalidInput):
            assign_step(rng.normal(size=(4, 3)), rng.normal(size=(2, 2)))


class TestUpdateStep:
    def test_two_points_average_to_midpoint(self):
        features = np.array([[0.0, 0.0], [2.0, 4.0]])
        centers = np.array([[9.0, 9.0], [5.0, 5.0]])
        new = update_step(features, np.array([0, 0]), centers)
        np.testing.assert_array_equal(new[0], [1.0, 2.0])
        np.testing.assert_array_equal(new[1], [5.0, 5.0])  # empty, unchanged

    def test_full_batch_update_never_increases_objective(self, rng):
        for _ in range(100):
            n = int(rng.integers(5, 40))
            k = int(rng.integers(2, 6))
            features = rng.normal(size=(n, 3))
            centers = rng.normal(size=(k, 3))
            labels = assign_step(features, centers)
            before = kmeans_objective(features, labels, centers)
            centers2 = update_step(features, labels, centers, mode=FULL_BATCH)
            after = kmeans_objective(features, labels, centers2)
            assert after <= before + 1e-10

    def test_minibatch_running_counts_form_streaming_mean(self):
        centers = np.zeros((2, 1))
        counts = np.zeros(2, dtype=np.int64)
        pts = np.array([[4.0], [8.0], [6.0]])
        centers = update_step(pts, np.array([0, 0, 0]), centers,
                              mode=MINIBATCH_RUNNING, counts=counts)
        np.testing.assert_allclose(centers[0], 6.0)  # exact running mean
        assert counts.tolist() == [3, 0]

    def test_unknown_mode_rejected(self):
        with pytest.raises(InvalidInput):
            update_step(np.zeros((1, 1)), np.array([0]), np.zeros((2, 1)),
                        mode="annealed")


class TestObjective:
    def test_points_at_centers_give_zero(self):
        centers = np.array([[1.0, 1.0], [2.0, 2.0]])
        features = centers.copy()
        assert kmeans_objective(features, np.array([0, 1]), centers) == 0.0

    def test_single_point_single_center(self):
        z = np.array([[1.0, 2.0, 2.0]])
        c = np.array([[0.0, 0.0, 0.0]])
        assert kmeans_objective(z, np.array([0]), c) == pytest.approx(9.0)

    def test_matches_double_loop(self, rng):
        features = rng.normal(size=(30, 4))
        centers = rng.normal(size=(5, 4))
        labels = assign_step(features, centers)
        total = 0.0
        for i in range(30):
            d = 0.0
            for j in range(4):
                d += (features[i, j] - centers[labels[i], j]) ** 2
            total += d
        assert kmeans_objective(features, labels, centers) == pytest.approx(
            total / 30, abs=1e-10)


def blob_instance(seed=5, n=200, sep=5.0, sigma=0.5):
    """Two gaussian blobs separated by 10+ sigma, shuffled."""
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [sep, sep]])
    labels = np.repeat([0, 1], n // 2)
    x = centers[labels] + rng.normal(0, sigma, size=(n, 2))
    order = rng.permutation(n)
    return x[order], labels[order]


class TestRunMinibatchKmeans:
    def test_full_batch_stream_is_lloyd(self, rng):
        x = rng.normal(size=(40, 3))
        iters = 4
        ours, trace = run_minibatch_kmeans([x] * iters, 2, init="first_k",
                                           mode=FULL_BATCH)
        assert len(trace) == iters
        centers = x[:2].copy()
        for _ in range(iters):
            labels = brute_force_assign(x, centers)
            for c in range(2):
                members = x[labels == c]
                if len(members):
                    centers[c] = members.mean(axis=0)
        np.testing.assert_array_equal(ours, centers)

    def test_separated_blobs_fully_recovered(self):
        x, labels = blob_instance()

        def stream(passes=5, bs=40):
            for _ in range(passes):
                for s in range(0, len(x), bs):
                    yield x[s:s + bs]

        centers, _ = run_minibatch_kmeans(stream(), 2, init="seeded_random",
                                          seed=3)
        assign = assign_step(x, centers)
        acc = max(np.mean(assign == labels), np.mean(assign == 1 - labels))
        assert acc == 1.0

    def test_same_seed_is_bitwise_deterministic(self):
        x, _ = blob_instance(seed=8)
        a, _ = run_minibatch_kmeans([x[:50], x[50:]], 2,
                                    init="seeded_random", seed=11)
        b, _ = run_minibatch_kmeans([x[:50], x[50:]], 2,
                                    init="seeded_random", seed=11)
        np.testing.assert_array_equal(a, b)

    def test_objective_trace_monotone_under_full_batch_alternation(self, rng):
        for _ in range(20):
            x = rng.normal(size=(30, 2))
            _, trace = run_minibatch_kmeans([x] * 8, 3, init="first_k",
                                            mode=FULL_BATCH)
            diffs = np.diff(trace)
            assert np.all(diffs <= 1e-10)

    def test_bad_arguments_rejected(self, rng):
        x = rng.normal(size=(10, 2))
        with pytest.raises(InvalidInput):
            run_minibatch_kmeans([x], 1, init="first_k")
        with pytest.raises(InvalidInput):
            run_minibatch_kmeans([x], 12, init="first_k")
        with pytest.raises(InvalidInput):
            run_minibatch_kmeans([], 2, init="first_k")

    def test_trace_csv_shape(self, rng):
        x = rng.normal(size=(20, 2))
        _, trace = run_minibatch_kmeans([x, x], 2, init="first_k")
        text = objective_trace_csv(trace)
        lines = text.strip().split("\n")
        assert lines[0] == "batch,objective"
        assert len(lines) == 3


class TestEntropyClusteringCorrespondence:
    def test_single_sample_small_step_keeps_its_label(self, rng):
        """A gradient step on one sample never flips its own argmax.

        This is the clustering reading of the adaptation forward/backward
        split at batch size 1: the assignment made in the forward pass can
        only be reinforced by the update that follows it.
        """
        from ttalab.adaptation import tent_loss
        from ttalab.network import (BNMode, DenseLayer, Network, all_params,
                                    backward_all, forward)

        for _ in range(50):
            w = rng.normal(size=(3, 4))
            b = rng.normal(size=3)
            net = Network(layers=[DenseLayer(weight=w.copy(), bias=b.copy())],
                          k=3)
            x = rng.normal(size=(1, 4))
            logits, cache = forward(net, x, BNMode.EVAL_STATS)
            before = int(np.argmax(logits[0]))
            _, gl = tent_loss(logits)
            grads = backward_all(net, cache, gl)
            for key, arr in all_params(net).items():
                arr -= 1e-3 * grads[key]
            after_logits, _ = forward(net, x, BNMode.EVAL_STATS)
            assert int(np.argmax(after_logits[0])) == before
