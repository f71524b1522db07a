"""Hard-label (decision-based) black-box attacks: Boundary, HopSkipJump, and
SurFree. All of them see only argmax labels through an oracle's query
interface and keep every candidate inside the [0,1] feature box.

The oracle argument is anything with `query(x) -> int`, `query_batch(xs)`,
and a `queries` counter (HardLabelOracle or a test stub).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .datax import Dataset
from .errors import DatasetExhaustedError, InitFailureError, ShapeError

ATTACK_NAMES = ("boundary", "hsja", "surfree")


@dataclass
class AttackConfig:
    attack: str = "hsja"
    query_budget: int = 5000
    seed: int = 0
    l2_tolerance: float = 0.0  # stop early once distortion <= this (0: never)
    # boundary
    spherical_step: float = 0.01
    source_step: float = 0.01
    step_adaptation: float = 1.5
    adapt_window: int = 10
    # hsja
    init_probes: int = 100  # B0; probe count grows as B0*sqrt(t), capped
    max_probes: int = 1000
    bisect_tol: float = 1e-6
    # surfree
    n_angles: int = 16
    refine_steps: int = 4
    # init
    init_random_trials: int = 200

    def __post_init__(self):
        if self.attack not in ATTACK_NAMES:
            raise ValueError(f"unknown attack {self.attack!r}")
        if self.query_budget <= 0:
            raise ValueError("query budget must be positive")
        for name in ("spherical_step", "source_step", "bisect_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class AdversarialRecord:
    x: np.ndarray
    x_att: np.ndarray
    true_label: int
    attacked_label: int
    source_copy_id: int
    queries: int
    l2: float
    budget_exhausted: bool = False
    sample_id: int = -1

    def __post_init__(self):
        if self.attacked_label == self.true_label:
            raise ValueError("record is not adversarial")


class _Budget:
    """Per-attack query accounting on top of the oracle's global counter."""

    def __init__(self, oracle, limit: int):
        self.oracle = oracle
        self.start = oracle.queries
        self.limit = limit

    @property
    def used(self) -> int:
        return self.oracle.queries - self.start

    @property
    def left(self) -> int:
        return self.limit - self.used

    def query(self, x: np.ndarray) -> int:
        return self.oracle.query(x)

    def query_batch(self, xs: np.ndarray) -> np.ndarray:
        return self.oracle.query_batch(xs)


def _clip(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def init_adversarial(oracle, x: np.ndarray, true_label: int,
                     donor_pool: Dataset | np.ndarray | None,
                     rng: np.random.Generator,
                     max_random_trials: int = 200) -> np.ndarray:
    """Starting point with a different hard label.

    Donor candidates are tried nearest-first (the standard warm start for
    decision-based attacks); uniform random points are the fallback.
    """
    if oracle.query(x) != true_label:
        raise InitFailureError("input is not classified as its true label")
    donors = donor_pool.x if isinstance(donor_pool, Dataset) else donor_pool
    if donors is not None and len(donors):
        order = np.argsort(np.linalg.norm(donors - x, axis=1))
        for j in order[:max_random_trials]:
            cand = donors[j]
            if oracle.query(cand) != true_label:
                return np.array(cand, dtype=np.float64)
    d = x.shape[0]
    for _ in range(max_random_trials):
        cand = rng.uniform(0.0, 1.0, size=d)
        if oracle.query(cand) != true_label:
            return cand
    raise InitFailureError(
        f"no misclassified starting point within {max_random_trials} trials")


def binary_search_to_boundary(oracle, x_in: np.ndarray, x_adv: np.ndarray,
                              true_label: int, tol: float = 1e-6) -> np.ndarray:
    """Bisect the segment [x_in, x_adv] down to `tol` of the label change.

    Returns the adversarial-side endpoint. Queries used are at most
    ceil(log2(||x_adv - x_in|| / tol)) + 1.
    """
    x_in = np.asarray(x_in, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    if x_in.shape != x_adv.shape:
        raise ShapeError("endpoints must have the same shape")
    dist = float(np.linalg.norm(x_adv - x_in))
    if dist <= tol:
        return x_adv
    lo, hi = 0.0, 1.0
    while (hi - lo) * dist > tol:
        mid = 0.5 * (lo + hi)
        if oracle.query(_clip(x_in + mid * (x_adv - x_in))) != true_label:
            hi = mid
        else:
            lo = mid
    return _clip(x_in + hi * (x_adv - x_in))


def _finish(bud: _Budget, x, x_adv, true_label, copy_id, exhausted) -> AdversarialRecord:
    """Re-verify adversariality and seal the record."""
    label = bud.query(x_adv)
    if label == true_label:
        raise InitFailureError("final candidate lost adversariality")
    return AdversarialRecord(
        x=np.array(x), x_att=np.array(x_adv), true_label=int(true_label),
        attacked_label=int(label), source_copy_id=copy_id,
        queries=bud.used, l2=float(np.linalg.norm(x_adv - x)),
        budget_exhausted=exhausted,
    )


def boundary_attack(oracle, x: np.ndarray, true_label: int, cfg: AttackConfig,
                    donor_pool=None) -> AdversarialRecord:
    """Brendel-style boundary walk: random orthogonal step on the sphere
    around the original, then a contraction toward it; both step sizes adapt
    on success-rate bands. Accepted iterates only ever reduce distortion."""
    rng = np.random.default_rng(cfg.seed)
    bud = _Budget(oracle, cfg.query_budget)
    copy_id = getattr(oracle, "copy_id", -1)
    x = np.asarray(x, dtype=np.float64)
    x0 = init_adversarial(bud, x, true_label, donor_pool, rng,
                          cfg.init_random_trials)
    x_adv = binary_search_to_boundary(bud, x, x0, true_label, cfg.bisect_tol)
    d = x.shape[0]
    sph, src = cfg.spherical_step, cfg.source_step
    sph_hist: list[bool] = []
    src_hist: list[bool] = []
    exhausted = True
    while True:
        if bud.left < 3:
            break
        dist = float(np.linalg.norm(x_adv - x))
        if dist <= max(cfg.l2_tolerance, 1e-9):
            exhausted = False
            break
        dirn = (x_adv - x) / dist
        pert = rng.normal(size=d)
        pert -= (pert @ dirn) * dirn
        norm = float(np.linalg.norm(pert))
        if norm == 0.0:
            continue
        cand = x_adv + pert * (sph * dist / norm)
        cd = float(np.linalg.norm(cand - x))
        if cd > 0:
            cand = _clip(x + (cand - x) * (dist / cd))  # stay on the sphere
        ok_sph = bud.query(cand) != true_label
        sph_hist.append(ok_sph)
        if ok_sph:
            cand2 = _clip(cand + src * (x - cand))
            ok_src = bud.query(cand2) != true_label
            src_hist.append(ok_src)
            if ok_src and np.linalg.norm(cand2 - x) < dist:
                x_adv = cand2
            elif np.linalg.norm(cand - x) < dist:
                x_adv = cand
        if len(sph_hist) >= cfg.adapt_window:
            rate = np.mean(sph_hist)
            if rate > 0.5:
                sph *= cfg.step_adaptation
            elif rate < 0.2:
                sph /= cfg.step_adaptation
            sph_hist.clear()
        if len(src_hist) >= cfg.adapt_window:
            rate = np.mean(src_hist)
            if rate > 0.5:
                src *= cfg.step_adaptation
            elif rate < 0.2:
                src /= cfg.step_adaptation
            src_hist.clear()
    return _finish(bud, x, x_adv, true_label, copy_id, exhausted)


def estimate_gradient_direction(oracle, point: np.ndarray, true_label: int,
                                delta: float, n_probes: int,
                                rng: np.random.Generator) -> np.ndarray:
    """Monte-Carlo sign-agreement estimate of the boundary normal at `point`.

    Unit probes are scored +1 if the perturbed point is adversarial, -1
    otherwise; the baseline-subtracted average is normalized to a direction.
    """
    d = point.shape[0]
    probes = rng.normal(size=(n_probes, d))
    probes /= np.linalg.norm(probes, axis=1, keepdims=True)
    labels = oracle.query_batch(_clip(point + delta * probes))
    phi = np.where(labels != true_label, 1.0, -1.0)
    mean = phi.mean()
    if mean == 1.0:
        v = probes.mean(axis=0)
    elif mean == -1.0:
        v = -probes.mean(axis=0)
    else:
        v = ((phi - mean)[:, None] * probes).mean(axis=0)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return probes[0]
    return v / norm


def hsja(oracle, x: np.ndarray, true_label: int, cfg: AttackConfig,
         donor_pool=None) -> AdversarialRecord:
    """HopSkipJump: binary-search projection, Monte-Carlo gradient-direction
    estimation with a growing probe count, and geometric step-size search."""
    rng = np.random.default_rng(cfg.seed)
    bud = _Budget(oracle, cfg.query_budget)
    copy_id = getattr(oracle, "copy_id", -1)
    x = np.asarray(x, dtype=np.float64)
    x0 = init_adversarial(bud, x, true_label, donor_pool, rng,
                          cfg.init_random_trials)
    x_adv = binary_search_to_boundary(bud, x, x0, true_label, cfg.bisect_tol)
    d = x.shape[0]
    t = 0
    exhausted = True
    while True:
        t += 1
        dist = float(np.linalg.norm(x_adv - x))
        if dist <= max(cfg.l2_tolerance, 1e-9):
            exhausted = False
            break
        n_probes = int(min(cfg.init_probes * np.sqrt(t), cfg.max_probes))
        # keep room for the step search and the closing binary search
        n_probes = min(n_probes, bud.left - 80)
        if n_probes < 8:
            break
        delta = dist / np.sqrt(d)
        v = estimate_gradient_direction(bud, x_adv, true_label, delta,
                                        n_probes, rng)
        eps = dist / np.sqrt(t)
        moved = False
        while eps * max(1.0, dist) > 1e-12 and bud.left > 40:
            cand = _clip(x_adv + eps * v)
            if bud.query(cand) != true_label:
                moved = True
                break
            eps *= 0.5
        if moved:
            cand = binary_search_to_boundary(bud, x, cand, true_label,
                                             cfg.bisect_tol)
            if np.linalg.norm(cand - x) < dist:
                x_adv = cand
        if bud.left < 50:
            break
    return _finish(bud, x, x_adv, true_label, copy_id, exhausted)


def _point_on_arc(x, u, v, radius, theta):
    """Polar parametrization of the circle through the current adversarial
    point (theta=0) that shrinks toward the original as |theta| grows."""
    return x + radius * (1.0 + np.cos(theta)) * u + radius * np.sin(theta) * v


def surfree(oracle, x: np.ndarray, true_label: int, cfg: AttackConfig,
            donor_pool=None) -> AdversarialRecord:
    """SurFree: gradient-free arc search. Each round draws a random direction
    orthogonal to the current adversarial direction, then scans the circular
    arc through the boundary point for the widest still-adversarial angle
    (grid walk + dichotomic refinement). Accepted points always reduce
    distortion since the arc contracts toward the original."""
    rng = np.random.default_rng(cfg.seed)
    bud = _Budget(oracle, cfg.query_budget)
    copy_id = getattr(oracle, "copy_id", -1)
    x = np.asarray(x, dtype=np.float64)
    x0 = init_adversarial(bud, x, true_label, donor_pool, rng,
                          cfg.init_random_trials)
    x_adv = binary_search_to_boundary(bud, x, x0, true_label, cfg.bisect_tol)
    d = x.shape[0]
    half = max(cfg.n_angles // 2, 1)
    grid = np.arange(1, half + 1) * (np.pi / 2.0) / half  # up to pi/2
    exhausted = True
    while True:
        if bud.left < 2 * half + cfg.refine_steps + 2:
            break
        dist = float(np.linalg.norm(x_adv - x))
        if dist <= max(cfg.l2_tolerance, 1e-9):
            exhausted = False
            break
        u = (x_adv - x) / dist
        v = rng.normal(size=d)
        v -= (v @ u) * u
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            continue
        v /= nv
        radius = dist / 2.0
        accepted = None
        for sign in (1.0, -1.0):
            lo_theta = None
            hi_theta = None
            for theta in grid:
                cand = _clip(_point_on_arc(x, u, v, radius, sign * theta))
                if bud.query(cand) != true_label:
                    lo_theta = sign * theta
                else:
                    hi_theta = sign * theta
                    break
            if lo_theta is None:
                continue
            if hi_theta is not None:
                for _ in range(cfg.refine_steps):
                    mid = 0.5 * (lo_theta + hi_theta)
                    cand = _clip(_point_on_arc(x, u, v, radius, mid))
                    if bud.query(cand) != true_label:
                        lo_theta = mid
                    else:
                        hi_theta = mid
            cand = _clip(_point_on_arc(x, u, v, radius, lo_theta))
            if np.linalg.norm(cand - x) < dist and bud.query(cand) != true_label:
                accepted = cand
            break  # only try the second sign if the first found nothing
        if accepted is not None:
            x_adv = accepted
    return _finish(bud, x, x_adv, true_label, copy_id, exhausted)


_ATTACKS = {"boundary": boundary_attack, "hsja": hsja, "surfree": surfree}


def run_attack(oracle, x, true_label, cfg: AttackConfig,
               donor_pool=None) -> AdversarialRecord:
    return _ATTACKS[cfg.attack](oracle, x, true_label, cfg, donor_pool)


def run_attack_batch(oracle, ds: Dataset, cfg: AttackConfig,
                     n_samples: int) -> list[AdversarialRecord]:
    """Exactly n_samples successful records from a dataset.

    Misclassified inputs and init failures are skipped; per-record seeds are
    derived from cfg.seed and the sample index, so results do not depend on
    which earlier samples were skipped.
    """
    records: list[AdversarialRecord] = []
    order = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, 0xD0])).permutation(len(ds))
    for sample_id in order:
        if len(records) >= n_samples:
            break
        x = ds.x[sample_id]
        true = int(ds.y[sample_id])
        if oracle.query(x) != true:
            continue
        seed = int(np.random.SeedSequence([cfg.seed, int(sample_id)])
                   .generate_state(1)[0])
        donors = ds.x[ds.y != true]
        try:
            rec = run_attack(oracle, x, true, replace(cfg, seed=seed), donors)
        except InitFailureError:
            continue
        rec.sample_id = int(sample_id)
        records.append(rec)
    if len(records) < n_samples:
        raise DatasetExhaustedError(
            f"only {len(records)} of {n_samples} records before exhausting data")
    return records


RESULT_COLUMNS = ("sample_id", "source_copy", "attack", "alpha", "true_label",
                  "attacked_label", "l2", "queries")


def save_records(records: list[AdversarialRecord], cfg: AttackConfig,
                 alpha: float, csv_path: str) -> None:
    """Results CSV plus a binary sidecar of the original/adversarial vectors."""
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(RESULT_COLUMNS)
        for r in records:
            writer.writerow([r.sample_id, r.source_copy_id, cfg.attack,
                             repr(float(alpha)), r.true_label, r.attacked_label,
                             repr(r.l2), r.queries])
    base = os.path.splitext(csv_path)[0]
    np.save(base + "_originals.npy", np.stack([r.x for r in records]))
    np.save(base + "_adversarials.npy", np.stack([r.x_att for r in records]))


def load_records(csv_path: str):
    """Rows plus the sidecar arrays; used by the tracing stage."""
    rows = []
    with open(csv_path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            rows.append(row)
    base = os.path.splitext(csv_path)[0]
    originals = np.load(base + "_originals.npy")
    adversarials = np.load(base + "_adversarials.npy")
    return rows, originals, adversarials
