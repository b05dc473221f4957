import math

import numpy as np
import pytest

import _fous as fous


def unit_rows(n, d, seed=0):
    rng = np.random.default_rng(seed)
    rows = rng.normal(size=(n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def test_balance_factor():
    assert fous.balance_factor(10, 10) == pytest.approx(0.5)
    assert fous.balance_factor(100, 200) == pytest.approx(
        1.0 / (1.0 + math.exp(-4.0)), abs=1e-9
    )
    assert fous.balance_factor(3, 5) + fous.balance_factor(5, 3) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        fous.balance_factor(0, 5)


def test_covariances_are_symmetric_psd():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 5, 4))
    for cov in (fous.cross_channel_covariance(x), fous.cross_spatial_covariance(x)):
        assert np.allclose(cov, cov.T, atol=1e-12)
        assert np.linalg.eigvalsh(cov).min() > -1e-10
    const = np.full((4, 4, 3), 2.5)
    assert np.allclose(fous.cross_channel_covariance(const), 0.0)


def test_attention_preserves_shape_and_damps():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(8, 8, 4))
    y = fous.apply_attention(x, seed=3)
    assert y.shape == x.shape
    assert np.all(np.abs(y) <= np.abs(x) + 1e-12)  # sigmoid gate on x


def test_labeling_round_trip():
    feats = unit_rows(50, 8, seed=4)
    labels = [i % 5 for i in range(50)]
    protos, proto_labels = fous.init_source_prototypes(feats, labels)
    assert protos.shape == (5, 8)
    assigned, distances, evaluations = fous.assign_pseudo_labels(
        feats, protos, proto_labels
    )
    assert evaluations == 50 * 5
    assert len(assigned) == 50
    assert all(d >= 0 for d in distances)

    rnd, rnd_labels = fous.sample_random_prototypes(feats, 7, seed=9)
    assert rnd.shape == (7, 8)
    assert sorted(rnd_labels) == list(range(7))


def test_contrastive_losses():
    centroids = unit_rows(4, 8, seed=5)
    labels = [10, 11, 12, 13]
    loss = fous.cluster_contrastive_loss(centroids[2], centroids, labels, 12, tau=0.05)
    logits = centroids @ centroids[2] / 0.05
    expected = np.log(np.exp(logits - logits.max()).sum()) + logits.max() - logits[2]
    assert loss == pytest.approx(expected, abs=1e-10)

    entries = unit_rows(4, 8, seed=6)
    masks = [[0] * 4 for _ in range(4)]
    assert fous.instance_invariance_loss(entries, masks, 0.05) == 0.0

    assert fous.total_loss(1.0, 1.0, 1.0, 1.0, 1.0) == pytest.approx(5.0)
    with pytest.raises(RuntimeError, match="l_c_t"):
        fous.total_loss(0.0, float("nan"), 0.0, 0.0, 0.0)


def test_detection_metrics():
    gt = [[(0.0, 0.0, 10.0, 10.0), (20.0, 0.0, 30.0, 10.0)]]
    preds = [[(0.0, 0.0, 10.0, 10.0, 0.9), (20.0, 0.0, 30.0, 10.0, 0.8)]]
    ap, recall = fous.evaluate_detection(preds, gt)
    assert ap == pytest.approx(1.0)
    assert recall == pytest.approx(1.0)
    assert fous.iou((0, 0, 10, 10), (0, 0, 10, 10)) == pytest.approx(1.0)
