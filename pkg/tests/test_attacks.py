import numpy as np
import pytest

from advtrace.attacks import (AdversarialRecord, AttackConfig,
                              binary_search_to_boundary, boundary_attack,
                              estimate_gradient_direction, hsja,
                              init_adversarial, run_attack, run_attack_batch,
                              save_records, load_records, surfree)
from advtrace.datax import Dataset
from advtrace.errors import DatasetExhaustedError, InitFailureError

from conftest import LinearOracle

X_START = np.array([-1.0, 0.0])  # true label 1; adversarial halfspace x1 > 0
OPTIMUM = 1.0  # distance from x to the closest in-box adversarial point


# --- init -------------------------------------------------------------------

def test_init_returns_valid_donor(linear_oracle):
    donors = np.array([[0.9, 0.1], [0.2, 0.8]])
    rng = np.random.default_rng(0)
    x0 = init_adversarial(linear_oracle, X_START, 1, donors, rng)
    assert linear_oracle.query(x0) != 1


def test_init_analytic_donor_condition(linear_oracle):
    # any donor with positive first coordinate is adversarial for label 1
    donors = np.array([[0.4, 0.3]])
    x0 = init_adversarial(linear_oracle, X_START, 1, donors,
                          np.random.default_rng(0))
    assert x0[0] > 0


def test_init_rejects_misclassified_input(linear_oracle):
    with pytest.raises(InitFailureError):
        init_adversarial(linear_oracle, np.array([0.5, 0.5]), 1, None,
                         np.random.default_rng(0))


def test_init_failure_single_class_oracle():
    class OneClass:
        queries = 0

        def query(self, x):
            self.queries += 1
            return 0

    with pytest.raises(InitFailureError):
        init_adversarial(OneClass(), np.zeros(2), 0, None,
                         np.random.default_rng(0), max_random_trials=20)


# --- binary search -----------------------------------------------------------

def test_binary_search_linear_boundary(linear_oracle):
    out = binary_search_to_boundary(linear_oracle, X_START, np.array([1.0, 0.0]),
                                    true_label=1, tol=1e-6)
    assert linear_oracle.query(out) != 1
    assert abs(np.linalg.norm(out - X_START) - 1.0) < 1e-5
    assert out[0] >= 0.0


def test_binary_search_noop_within_tol(linear_oracle):
    x_adv = X_START + np.array([1e-8, 0.0])
    out = binary_search_to_boundary(linear_oracle, X_START, x_adv, 1, tol=1e-6)
    assert np.array_equal(out, x_adv)


def test_binary_search_query_bound(linear_oracle):
    x_adv = np.array([1.0, 0.0])
    dist = np.linalg.norm(x_adv - X_START)
    tol = 1e-6
    before = linear_oracle.queries
    binary_search_to_boundary(linear_oracle, X_START, x_adv, 1, tol=tol)
    used = linear_oracle.queries - before
    assert used <= int(np.ceil(np.log2(dist / tol))) + 1


# --- the attacks on the analytic oracle ---------------------------------------

DONORS = np.array([[0.8, 0.2], [0.9, 0.7], [0.6, 0.4]])


def _cfg(attack, seed=0, budget=5000):
    return AttackConfig(attack=attack, query_budget=budget, seed=seed)


def test_boundary_attack_near_optimal(linear_oracle):
    rec = boundary_attack(linear_oracle, X_START, 1, _cfg("boundary"), DONORS)
    assert rec.attacked_label != 1
    assert rec.l2 <= OPTIMUM * 1.10
    assert rec.queries <= 5000


def test_hsja_near_optimal(linear_oracle):
    rec = hsja(linear_oracle, X_START, 1, _cfg("hsja"), DONORS)
    assert rec.l2 <= OPTIMUM * 1.05
    assert rec.queries <= 5000


def test_surfree_near_optimal(linear_oracle):
    rec = surfree(linear_oracle, X_START, 1, _cfg("surfree"), DONORS)
    assert rec.l2 <= OPTIMUM * 1.15
    assert rec.queries <= 5000


def test_surfree_more_query_efficient_than_hsja():
    # queries needed to reach the same distortion level on the linear oracle
    target = OPTIMUM * 1.15

    def queries_until(attack_fn, name):
        oracle = LinearOracle(w=[1.0, 0.0])
        cfg = AttackConfig(attack=name, query_budget=5000, seed=3,
                           l2_tolerance=target)
        rec = attack_fn(oracle, X_START, 1, cfg, DONORS)
        assert rec.l2 <= target
        return rec.queries

    assert queries_until(surfree, "surfree") <= queries_until(hsja, "hsja")


def test_gradient_direction_estimate():
    # at a boundary point interior to the box, the sign-agreement estimate
    # should align with the true normal (1, 0)
    oracle = LinearOracle(w=[1.0, 0.0], b=-0.5)  # boundary at x1 = 0.5
    point = np.array([0.5, 0.5])
    v = estimate_gradient_direction(oracle, point, true_label=1,
                                    delta=0.1, n_probes=200,
                                    rng=np.random.default_rng(0))
    assert v @ np.array([1.0, 0.0]) >= 0.8


def test_hsja_deterministic_trajectory():
    a = hsja(LinearOracle(w=[1.0, 0.0]), X_START, 1, _cfg("hsja", seed=7), DONORS)
    b = hsja(LinearOracle(w=[1.0, 0.0]), X_START, 1, _cfg("hsja", seed=7), DONORS)
    assert np.array_equal(a.x_att, b.x_att)
    assert a.queries == b.queries


def test_boundary_distortion_monotone():
    """Accepted iterates never increase distortion: the final distortion is
    at most the initial binary-search projection's."""
    oracle = LinearOracle(w=[1.0, 0.0])
    x0 = init_adversarial(oracle, X_START, 1, DONORS, np.random.default_rng(0))
    proj = binary_search_to_boundary(oracle, X_START, x0, 1)
    initial = np.linalg.norm(proj - X_START)
    rec = boundary_attack(LinearOracle(w=[1.0, 0.0]), X_START, 1,
                          _cfg("boundary"), DONORS)
    assert rec.l2 <= initial + 1e-9


def test_attack_query_accounting(linear_oracle):
    before = linear_oracle.queries
    rec = run_attack(linear_oracle, X_START, 1, _cfg("hsja", budget=800), DONORS)
    assert rec.queries == linear_oracle.queries - before
    assert rec.queries <= 800


def test_records_stay_in_box_and_adversarial(linear_oracle):
    for name in ("boundary", "hsja", "surfree"):
        oracle = LinearOracle(w=[1.0, 0.0])
        rec = run_attack(oracle, X_START, 1, _cfg(name, budget=2000), DONORS)
        assert (rec.x_att >= 0.0).all() and (rec.x_att <= 1.0).all()
        assert oracle.query(rec.x_att) != 1


def test_box_constraint_on_all_queries():
    class BoxCheckOracle(LinearOracle):
        def query(self, x):
            assert (np.asarray(x) >= -1e-12).all() and (np.asarray(x) <= 1 + 1e-12).all()
            return super().query(x)

        def query_batch(self, xs):
            assert (np.asarray(xs) >= -1e-12).all() and (np.asarray(xs) <= 1 + 1e-12).all()
            return super().query_batch(xs)

    # in-box original so every candidate (including bisection mids) is checked
    x = np.array([0.25, 0.5])
    oracle = BoxCheckOracle(w=[-1.0, 0.0], b=0.4)  # true label 0 at x
    assert oracle.query(x) == 0
    for name in ("boundary", "hsja", "surfree"):
        run_attack(BoxCheckOracle(w=[-1.0, 0.0], b=0.4), x, 0,
                   _cfg(name, budget=1500), DONORS)


def test_record_rejects_non_adversarial_labels():
    with pytest.raises(ValueError):
        AdversarialRecord(x=np.zeros(2), x_att=np.zeros(2), true_label=1,
                          attacked_label=1, source_copy_id=0, queries=1, l2=0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(attack="qeba")
    with pytest.raises(ValueError):
        AttackConfig(query_budget=0)
    with pytest.raises(ValueError):
        AttackConfig(spherical_step=-1.0)


# --- batch runner -------------------------------------------------------------

def _linear_dataset(n=40, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (n, 2))
    y = np.where(x[:, 0] - 0.5 >= 0, 0, 1).astype(np.int64)
    return Dataset(x, y, k=2)


def test_run_attack_batch_exact_count_and_success():
    ds = _linear_dataset()
    oracle = LinearOracle(w=[1.0, 0.0], b=-0.5)
    cfg = _cfg("surfree", seed=11, budget=1200)
    records = run_attack_batch(oracle, ds, cfg, n_samples=8)
    assert len(records) == 8
    for rec in records:
        assert oracle.query(rec.x_att) != rec.true_label
        assert rec.sample_id >= 0


def test_run_attack_batch_zero_samples():
    ds = _linear_dataset()
    assert run_attack_batch(LinearOracle(w=[1, 0], b=-0.5), ds,
                            _cfg("hsja"), 0) == []


def test_run_attack_batch_exhaustion():
    ds = _linear_dataset(n=6)
    with pytest.raises(DatasetExhaustedError):
        run_attack_batch(LinearOracle(w=[1, 0], b=-0.5), ds,
                         _cfg("surfree", budget=600), n_samples=50)


def test_save_load_records_roundtrip(tmp_path):
    ds = _linear_dataset()
    oracle = LinearOracle(w=[1.0, 0.0], b=-0.5)
    cfg = _cfg("boundary", seed=2, budget=800)
    records = run_attack_batch(oracle, ds, cfg, n_samples=4)
    path = str(tmp_path / "results.csv")
    save_records(records, cfg, alpha=0.15, csv_path=path)
    rows, originals, advs = load_records(path)
    assert len(rows) == 4
    assert rows[0]["attack"] == "boundary"
    assert float(rows[0]["alpha"]) == 0.15
    assert np.array_equal(originals[2], records[2].x)
    assert np.array_equal(advs[2], records[2].x_att)
