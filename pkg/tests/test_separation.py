import numpy as np
import pytest

from advtrace.datax import NoiseSpec, gen_blobs, tracer_subset
from advtrace.errors import (BudgetExhaustedError, DegenerateOutputError,
                             ShapeError)
from advtrace.netcore import DenseNet, Layer, forward, forward_batch
from advtrace.separation import (HardLabelOracle, ParallelModel, Tracer,
                                 classifier_accuracy, combined_logits,
                                 load_bundle, noise_sensitive_loss,
                                 normalize_logits, random_tracer, save_bundle,
                                 train_classifier)


# --- noise-sensitive loss -------------------------------------------------

def test_lns_identical_vectors():
    assert noise_sensitive_loss(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 1.0


def test_lns_orthogonal_vectors():
    assert noise_sensitive_loss(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0


def test_lns_hand_computed():
    assert noise_sensitive_loss(np.array([3.0, 4.0]), np.array([4.0, 3.0])) == 0.96


def test_lns_zero_norm_error():
    with pytest.raises(DegenerateOutputError):
        noise_sensitive_loss(np.zeros(3), np.ones(3))


def test_lns_range_symmetry_scale_invariance():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = rng.normal(size=5)
        b = rng.normal(size=5)
        v = noise_sensitive_loss(a, b)
        assert 0.0 <= v <= 1.0
        assert noise_sensitive_loss(b, a) == v
        for lam in (0.5, 2.0, 100.0):
            assert abs(noise_sensitive_loss(lam * a, b) - v) < 1e-12
            assert abs(noise_sensitive_loss(a, lam * b) - v) < 1e-12


def test_lns_shape_error():
    with pytest.raises(ShapeError):
        noise_sensitive_loss(np.ones(2), np.ones(3))


# --- normalization and combination ----------------------------------------

def test_normalize_logits_simple():
    assert np.allclose(normalize_logits(np.array([0.0, 5.0, 10.0])),
                       [0.0, 0.5, 1.0])


def test_normalize_logits_constant_vector():
    assert np.array_equal(normalize_logits(np.array([3.0, 3.0, 3.0])),
                          np.zeros(3))


def test_normalize_logits_hand_computed():
    out = normalize_logits(np.array([2.0, -2.0, 4.0, 0.0]))
    assert np.allclose(out, [2 / 3, 0.0, 1.0, 1 / 3])


def _tiny_model(alpha, clf_w, tracer_out):
    """2-d model with identity classifier layer and a constant-ish tracer."""
    clf = DenseNet([Layer(np.asarray(clf_w, dtype=float), np.zeros(2), "identity")])
    tnet = DenseNet([Layer(np.zeros((2, 2)), np.asarray(tracer_out, dtype=float),
                           "identity")])
    tracer = Tracer(net=tnet, seed=0)
    return ParallelModel(copy_id=0, classifier=clf, tracer=tracer, alpha=alpha)


def test_combined_logits_alpha_zero_is_classifier():
    m = _tiny_model(0.0, np.eye(2), [0.5, -0.5])
    x = np.array([0.2, 0.9])
    assert np.array_equal(combined_logits(m, x),
                          normalize_logits(forward(m.classifier, x)))


def test_combined_logits_hand_computed():
    # normalized classifier output (0,1), tracer (0.5,-0.5), alpha 0.1
    m = _tiny_model(0.1, np.eye(2), [0.5, -0.5])
    out = combined_logits(m, np.array([0.0, 1.0]))
    assert np.allclose(out, [0.05, 0.95])


def test_alpha_zero_argmax_matches_bare_classifier(desk_classifier, desk_data):
    _, test = desk_data
    tracer = random_tracer(16, 10, seed=1)
    model = ParallelModel(copy_id=0, classifier=desk_classifier, tracer=tracer,
                          alpha=0.0)
    preds = model.predict_batch(test.x)
    bare = forward_batch(desk_classifier, test.x).argmax(axis=1)
    assert np.array_equal(preds, bare)


def test_negative_alpha_rejected(desk_classifier):
    with pytest.raises(ValueError):
        ParallelModel(copy_id=0, classifier=desk_classifier,
                      tracer=random_tracer(16, 10, seed=0), alpha=-0.1)


# --- oracle ----------------------------------------------------------------

def test_oracle_argmax_and_tie_break():
    m = _tiny_model(0.0, [[1.0, 0.0], [1.0, 0.0]], [0.0, 0.0])
    oracle = HardLabelOracle(m)
    # identical rows -> constant logits -> normalized zeros -> tie -> class 0
    assert oracle.query(np.array([0.3, 0.4])) == 0


def test_oracle_counts_queries():
    m = _tiny_model(0.0, np.eye(2), [0.0, 0.0])
    oracle = HardLabelOracle(m)
    for i in range(5):
        oracle.query(np.array([0.1, 0.2]))
    oracle.query_batch(np.tile([0.1, 0.2], (7, 1)))
    assert oracle.queries == 12


def test_oracle_budget_error():
    m = _tiny_model(0.0, np.eye(2), [0.0, 0.0])
    oracle = HardLabelOracle(m, budget=3)
    x = np.array([0.1, 0.2])
    for _ in range(3):
        oracle.query(x)
    with pytest.raises(BudgetExhaustedError):
        oracle.query(x)


def test_oracle_exposes_only_class_indices():
    m = _tiny_model(0.15, np.eye(2), [0.2, -0.2])
    oracle = HardLabelOracle(m)
    out = oracle.query(np.array([0.4, 0.6]))
    assert isinstance(out, int)
    batch = oracle.query_batch(np.random.default_rng(0).uniform(0, 1, (4, 2)))
    assert batch.dtype == np.int64


# --- training --------------------------------------------------------------

def test_classifier_accuracy_on_blobs(desk_classifier, desk_data):
    _, test = desk_data
    assert classifier_accuracy(desk_classifier, test) >= 0.98


def test_classifier_deterministic(desk_data):
    train, _ = desk_data
    small = train.split(600)[0]
    a = train_classifier(small, epochs=3, seed=5)
    b = train_classifier(small, epochs=3, seed=5)
    for la, lb in zip(a.layers, b.layers):
        assert np.array_equal(la.weights, lb.weights)
        assert np.array_equal(la.bias, lb.bias)


def test_untrained_tracer_loss_near_one(desk_data):
    train, test = desk_data
    tracer = random_tracer(train.dim, train.k, seed=3)
    rng = np.random.default_rng(0)
    from advtrace.datax import add_noise
    xs = test.x[:300]
    xn = add_noise(xs, NoiseSpec(), rng)
    a = forward_batch(tracer.net, xs)
    b = forward_batch(tracer.net, xn)
    losses = np.abs((a * b).sum(axis=1)) / (
        np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    assert losses.mean() > 0.95


def test_trained_tracers_converge(desk_tracers, desk_data):
    _, test = desk_data
    from advtrace.datax import add_noise
    rng = np.random.default_rng(12)
    for tracer in desk_tracers:
        assert tracer.trained
        assert tracer.converged
        xs = test.x[:400]
        xn = add_noise(xs, NoiseSpec(), rng)
        a = forward_batch(tracer.net, xs)
        b = forward_batch(tracer.net, xn)
        losses = np.abs((a * b).sum(axis=1)) / (
            np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        assert losses.mean() <= 0.1
        out = forward_batch(tracer.net, test.x[:200])
        assert (out > -1.0).all() and (out < 1.0).all()


def test_distinct_seeds_distinct_parameters(desk_tracers):
    a, b = desk_tracers
    pa = np.concatenate([w.ravel() for l in a.net.layers for w in (l.weights, l.bias)])
    pb = np.concatenate([w.ravel() for l in b.net.layers for w in (l.weights, l.bias)])
    assert (pa != pb).mean() >= 0.99


def test_tracers_functionally_distinct(desk_tracers, desk_data):
    _, test = desk_data
    a = forward_batch(desk_tracers[0].net, test.x[:300])
    b = forward_batch(desk_tracers[1].net, test.x[:300])
    cos = np.abs((a * b).sum(axis=1)) / (
        np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    assert cos.mean() < 0.9


def test_alpha_accuracy_tradeoff(desk_classifier, desk_tracers, desk_data):
    _, test = desk_data
    baseline = None
    for alpha in (0.0, 0.05, 0.1, 0.15):
        model = ParallelModel(copy_id=0, classifier=desk_classifier,
                              tracer=desk_tracers[0], alpha=alpha)
        acc = float((model.predict_batch(test.x) == test.y).mean())
        if alpha == 0.0:
            baseline = acc
        else:
            assert acc >= baseline - 0.03


# --- bundles ---------------------------------------------------------------

def test_bundle_roundtrip(tmp_path, desk_classifier, desk_tracers, desk_data):
    _, test = desk_data
    model = ParallelModel(copy_id=1, classifier=desk_classifier,
                          tracer=desk_tracers[0], alpha=0.15)
    d = str(tmp_path / "copy01")
    save_bundle(model, d)
    loaded = load_bundle(d)
    assert loaded.copy_id == 1
    assert loaded.alpha == 0.15
    assert np.array_equal(loaded.predict_batch(test.x[:100]),
                          model.predict_batch(test.x[:100]))
    reweighted = load_bundle(d, alpha=0.05)
    assert reweighted.alpha == 0.05
