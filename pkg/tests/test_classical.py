import math

import numpy as np
import pytest

from gradecore.classical import (
    FEATURE_DIM,
    KnnModel,
    LogRegModel,
    extract_features,
    knn_fit,
    knn_predict,
    logreg_train,
)
from gradecore.errors import ConfigError, ShapeError
from gradecore.functions import cross_entropy, softmax
from gradecore.layers import Dense
from gradecore.optim import Sgd
from gradecore.tensor import Rng

from oracles import brute_force_knn, central_difference, rel_error


def checkerboard(size=16):
    y, x = np.indices((size, size))
    plane = ((y + x) % 2).astype(np.float64)
    return np.broadcast_to(plane, (3, size, size)).copy()


class TestExtractFeatures:
    def test_dimension(self):
        img = Rng(1).uniform((3, 16, 16))
        assert extract_features(img).shape == (FEATURE_DIM,)
        assert FEATURE_DIM == 246

    def test_constant_mid_gray(self):
        img = np.full((3, 32, 32), 0.5)
        f = extract_features(img)
        assert np.allclose(f[:192], 0.5)                     # grid
        hist = f[192:240].reshape(3, 16)
        assert np.allclose(hist[:, 8], 1.0)                  # 0.5*16 = bin 8
        assert np.allclose(hist.sum(axis=1), 1.0)
        assert np.allclose(f[240:], 0.0)                     # no edges

    def test_histogram_and_edges_flip_invariant(self):
        img = Rng(4).uniform((3, 24, 24))
        f = extract_features(img)
        ff = extract_features(np.flip(img, axis=2).copy())
        assert np.allclose(f[192:240], ff[192:240])
        assert np.allclose(f[240:], ff[240:])
        assert not np.allclose(f[:192], ff[:192])            # grid does differ

    def test_checkerboard_maximal_edge_density(self):
        f = extract_features(checkerboard())
        assert np.allclose(f[240:], 1.0)

    def test_histogram_blocks_sum_to_one(self):
        img = Rng(9).uniform((3, 17, 23))
        hist = extract_features(img)[192:240].reshape(3, 16)
        assert np.abs(hist.sum(axis=1) - 1.0).max() < 1e-9

    def test_values_bounded(self):
        f = extract_features(Rng(2).uniform((3, 20, 20)))
        assert f.min() >= 0.0 and f.max() <= 1.0

    def test_too_small_image(self):
        with pytest.raises(ShapeError):
            extract_features(np.zeros((3, 7, 20)))

    def test_constant_scaling_moves_histogram_bin(self):
        for value, bin_idx in [(0.1, 1), (0.4, 6), (1.0, 15)]:
            img = np.full((3, 16, 16), value)
            hist = extract_features(img)[192:240].reshape(3, 16)
            assert np.allclose(hist[:, bin_idx], 1.0)


def two_blob_data(n=60, seed=3):
    """Two well-separated Gaussian blobs mapped to classes 1 and 3 of 4."""
    rng = Rng(seed)
    a = rng.normal((n // 2, 5), mean=0.0, std=0.5) + np.array([3.0, 0, 0, 0, 0])
    b = rng.normal((n // 2, 5), mean=0.0, std=0.5) - np.array([3.0, 0, 0, 0, 0])
    x = np.vstack([a, b])
    labels = np.array([1] * (n // 2) + [3] * (n // 2))
    onehot = np.eye(4)[labels]
    return x, labels, onehot


class TestLogReg:
    def test_untrained_uniform_predictions(self):
        x, labels, onehot = two_blob_data()
        model = LogRegModel(5)
        probs = model.proba_from_features(x)
        assert np.allclose(probs, 0.25)
        assert cross_entropy(probs, onehot).mean_loss == pytest.approx(math.log(4), abs=1e-9)

    def test_separable_blobs_reach_full_train_accuracy(self):
        x, labels, onehot = two_blob_data()
        model = logreg_train(x, onehot, lr=0.1, epochs=500, batch=len(x), rng=Rng(0))
        preds = model.proba_from_features(x).argmax(axis=1)
        assert (preds == labels).mean() == 1.0

    def test_full_batch_loss_non_increasing(self):
        x, _, onehot = two_blob_data()
        model = LogRegModel(5)
        losses = []
        for _ in range(40):
            logreg_train(x, onehot, lr=0.01, epochs=1, batch=len(x), rng=Rng(0), model=model)
            losses.append(cross_entropy(model.proba_from_features(x), onehot).mean_loss)
        assert all(a >= b - 1e-12 for a, b in zip(losses, losses[1:]))

    def test_equals_dense_softmax_path(self):
        """Full-batch logreg must match a 0-hidden-layer network step for step."""
        x, _, onehot = two_blob_data()
        epochs = 25
        model = logreg_train(x, onehot, lr=0.05, epochs=epochs, batch=len(x), rng=Rng(1))

        layer = Dense(5, 4)  # zero-initialized, same as logreg
        opt = Sgd(0.05)
        from gradecore.functions import softmax_xent_backward
        for _ in range(epochs):
            probs = softmax(layer.forward(x))
            layer.backward(softmax_xent_backward(probs, onehot))
            opt.step([layer.w, layer.b], [layer.dw, layer.db])
        assert np.abs(model.w - layer.w).max() < 1e-10
        assert np.abs(model.b - layer.b).max() < 1e-10

    def test_gradient_matches_finite_differences(self):
        x, _, onehot = two_blob_data(n=20)
        model = LogRegModel(5)
        model.w[...] = Rng(2).normal((4, 5), std=0.3)

        def loss():
            return cross_entropy(model.proba_from_features(x), onehot).mean_loss

        from gradecore.functions import softmax_xent_backward
        probs = model.proba_from_features(x)
        d_logits = softmax_xent_backward(probs, onehot)
        analytic_w = d_logits.T @ x
        analytic_b = d_logits.sum(axis=0)
        assert rel_error(analytic_w, central_difference(loss, model.w), floor=1e-6) < 1e-6
        assert rel_error(analytic_b, central_difference(loss, model.b), floor=1e-6) < 1e-6

    def test_single_class_warns(self):
        x = Rng(1).uniform((10, 3))
        onehot = np.zeros((10, 4))
        onehot[:, 2] = 1.0
        with pytest.warns(UserWarning, match="single class"):
            logreg_train(x, onehot, epochs=1, batch=5, rng=Rng(0))

    def test_bad_batch(self):
        x, _, onehot = two_blob_data(n=10)
        with pytest.raises(ConfigError):
            logreg_train(x, onehot, batch=11, rng=Rng(0))


class TestKnn:
    def test_query_on_stored_point(self):
        rng = Rng(5)
        feats = rng.uniform((20, 6))
        labels = np.array([i % 4 for i in range(20)])
        model = knn_fit(feats, labels, k=1)
        for i in (0, 7, 19):
            cls, _ = knn_predict(model, feats[i])
            assert cls == labels[i]

    def test_majority_vote(self):
        feats = np.array([[0.0], [0.1], [0.2], [5.0], [6.0]])
        labels = np.array([2, 2, 0, 1, 3])
        model = knn_fit(feats, labels, k=3)
        cls, counts = knn_predict(model, np.array([0.05]))
        assert cls == 2
        assert counts[2] == 2 and counts[0] == 1

    def test_k_larger_than_n(self):
        with pytest.raises(ConfigError):
            knn_fit(np.zeros((3, 2)), np.zeros(3, dtype=int), k=4)

    def test_matches_brute_force_oracle(self):
        rng = Rng(77)
        stored = rng.uniform((200, 8), -1, 1)
        labels = np.array([rng.randint_below(4) for _ in range(200)])
        queries = rng.uniform((50, 8), -1, 1)
        model = knn_fit(stored, labels, k=5)
        for q in queries:
            got, _ = knn_predict(model, q)
            want = brute_force_knn(stored, labels, q, k=5, classes=4)
            assert got == want

    def test_permutation_invariance(self):
        rng = Rng(13)
        stored = rng.uniform((60, 4))
        labels = np.array([rng.randint_below(4) for _ in range(60)])
        queries = rng.uniform((20, 4))
        base = knn_fit(stored, labels, k=5).predict(queries)
        for seed in range(5):
            perm = Rng(seed).permutation(60)
            shuffled = knn_fit(stored[perm], labels[perm], k=5).predict(queries)
            assert np.array_equal(base, shuffled)

    def test_summed_distance_tie_break(self):
        # two labels with 2 votes each; label 1's neighbors are closer
        feats = np.array([[1.0], [1.2], [-1.1], [-1.3], [9.0]])
        labels = np.array([1, 1, 3, 3, 0])
        model = knn_fit(feats, labels, k=4)
        cls, counts = knn_predict(model, np.array([0.0]))
        assert counts[1] == 2 and counts[3] == 2
        assert cls == 1

    def test_class_index_tie_break(self):
        # perfectly symmetric: counts tie and summed distances tie -> lower class
        feats = np.array([[1.0], [-1.0], [2.0], [-2.0]])
        labels = np.array([3, 1, 1, 3])
        model = knn_fit(feats, labels, k=4)
        cls, _ = knn_predict(model, np.array([0.0]))
        assert cls == 1

    def test_pixel_feature_mode(self):
        from gradecore.classical import featurize_images
        imgs = Rng(6).uniform((4, 3, 8, 8))
        flat = featurize_images(imgs, "pixels")
        assert flat.shape == (4, 192)
        model = LogRegModel(192, 4, feature_mode="pixels")
        probs = model.predict_proba(imgs)
        assert probs.shape == (4, 4)
        assert np.allclose(probs.sum(axis=1), 1.0)

    def test_vote_fraction_probabilities(self):
        feats = Rng(3).uniform((12, FEATURE_DIM))
        labels = np.array([i % 4 for i in range(12)])
        model = KnnModel(feats, labels, k=5, feature_mode="features")
        imgs = Rng(4).uniform((3, 3, 16, 16))
        probs = model.predict_proba(imgs)
        assert probs.shape == (3, 4)
        assert np.allclose(probs.sum(axis=1), 1.0)
