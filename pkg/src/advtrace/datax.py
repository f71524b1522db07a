"""Datasets and perturbation noise.

Synthetic generators produce features in [0,1]; every downstream consumer
(attacks in particular) relies on that box constraint.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import CsvFormatError, ShapeError


@dataclass
class Dataset:
    x: np.ndarray  # (n, d) float64 in [0,1]
    y: np.ndarray  # (n,) int64 in [0, k)
    k: int
    provenance: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) == 0:
            raise ValueError("dataset must not be empty")
        if self.x.ndim != 2 or self.y.ndim != 1 or len(self.x) != len(self.y):
            raise ShapeError("features must be (n, d) with matching labels (n,)")
        if self.y.min() < 0 or self.y.max() >= self.k:
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        a = Dataset(self.x[:n_first], self.y[:n_first], self.k, self.provenance)
        b = Dataset(self.x[n_first:], self.y[n_first:], self.k, self.provenance)
        return a, b


@dataclass
class NoiseSpec:
    """Additive per-entry uniform noise over [0, hi)."""

    hi: float = 0.03
    distribution: str = "uniform"

    def __post_init__(self):
        if self.hi <= 0:
            raise ValueError("noise bound must be positive")
        if self.distribution != "uniform":
            raise ValueError("only uniform noise is supported")


def add_noise(x: np.ndarray, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """x + U[0, hi) per entry, clipped back into the [0,1] feature box."""
    x = np.asarray(x, dtype=np.float64)
    return np.clip(x + rng.uniform(0.0, spec.hi, size=x.shape), 0.0, 1.0)


def gen_blobs(k: int = 10, d: int = 16, n_per_class: int = 600,
              spread: float = 0.006, seed: int = 0, level_gap: float = 0.018,
              lane_sep: float = 0.18, elongation: float = 3.34) -> Dataset:
    """Gaussian class clusters arranged as lanes of intensity pairs.

    Classes come in pairs ("lanes"): the two classes of a lane share a lateral
    anchor and differ by a shift of +-level_gap per coordinate along the
    all-ones diagonal. Lanes are mutually separated laterally. Clusters are
    mildly elongated along the diagonal (std spread*elongation there, spread
    laterally). Adjacent-class transitions therefore run along the positive
    diagonal, the direction in which bounded positive feature noise operates,
    while lane anchors keep clusters identifiable.
    """
    if k < 2 or d < 2:
        raise ValueError("need k >= 2 and d >= 2")
    if n_per_class < 1:
        raise ValueError("n_per_class must be positive")
    rng = np.random.default_rng(seed)
    ones = np.ones(d) / np.sqrt(d)
    n_lanes = (k + 1) // 2
    lanes: list[np.ndarray] = []
    tries = 0
    while len(lanes) < n_lanes:
        lat = rng.normal(size=d)
        lat -= (lat @ ones) * ones
        lat *= lane_sep / np.linalg.norm(lat)
        tries += 1
        if tries > 10_000:
            raise ValueError("could not place lane anchors; lower lane_sep")
        if all(np.linalg.norm(lat - o) >= 1.25 * lane_sep for o in lanes):
            lanes.append(lat)
        elif not lanes:
            lanes.append(lat)
    centers = []
    for ci in range(k):
        lane = lanes[ci // 2]
        sign = -1.0 if ci % 2 == 0 else 1.0
        centers.append(0.5 + lane + sign * level_gap)
    xs, ys = [], []
    sig_par = spread * elongation
    for ci, c in enumerate(centers):
        g_par = rng.normal(0.0, sig_par, size=(n_per_class, 1))
        g_perp = rng.normal(0.0, spread, size=(n_per_class, d))
        g_perp -= (g_perp @ ones)[:, None] * ones
        xs.append(c + g_par * ones + g_perp)
        ys.append(np.full(n_per_class, ci, dtype=np.int64))
    x = np.clip(np.concatenate(xs), 0.0, 1.0)
    y = np.concatenate(ys)
    perm = rng.permutation(len(y))
    return Dataset(x[perm], y[perm], k, provenance=f"blobs(k={k},d={d},seed={seed})")


def gen_rings(k: int = 2, d: int = 2, n_per_class: int = 500,
              seed: int = 0, width: float = 0.04) -> Dataset:
    """Concentric annuli around the box center; not linearly separable.

    Class c occupies radii in [r_c - width, r_c + width] with r_c increasing
    in c; rings never overlap. Extra dimensions beyond the first two carry
    uninformative jitter around 0.5.
    """
    if k < 2 or d < 2:
        raise ValueError("need k >= 2 and d >= 2")
    rng = np.random.default_rng(seed)
    radii = np.linspace(0.12, 0.42, k)
    if k > 1 and (radii[1] - radii[0]) <= 2 * width:
        raise ValueError("rings would overlap; lower width or k")
    xs, ys = [], []
    for ci in range(k):
        theta = rng.uniform(0.0, 2 * np.pi, size=n_per_class)
        r = rng.uniform(radii[ci] - width, radii[ci] + width, size=n_per_class)
        pts = np.full((n_per_class, d), 0.5)
        pts[:, 0] += r * np.cos(theta)
        pts[:, 1] += r * np.sin(theta)
        if d > 2:
            pts[:, 2:] += rng.uniform(-0.05, 0.05, size=(n_per_class, d - 2))
        xs.append(pts)
        ys.append(np.full(n_per_class, ci, dtype=np.int64))
    x = np.clip(np.concatenate(xs), 0.0, 1.0)
    y = np.concatenate(ys)
    perm = rng.permutation(len(y))
    return Dataset(x[perm], y[perm], k, provenance=f"rings(k={k},d={d},seed={seed})")


def tracer_subset(ds: Dataset, n: int = 1000, seed: int = 0) -> Dataset:
    """Uniform sample without replacement, deterministic per seed."""
    if n > len(ds):
        raise ValueError(f"requested {n} samples from a dataset of {len(ds)}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(ds), size=n, replace=False)
    return Dataset(ds.x[idx], ds.y[idx], ds.k,
                   provenance=f"{ds.provenance}|subset(n={n},seed={seed})")


def load_csv(path: str) -> Dataset:
    """Read `f0,...,f{d-1},label` rows; rescale features to [0,1] per column.

    Constant columns map to 0; labels are densely re-indexed in sorted order.
    """
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("empty file") from None
        d = len(header) - 1
        if d < 1 or header[-1].strip() != "label":
            raise CsvFormatError("header must be f0,...,f{d-1},label", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise CsvFormatError(f"expected {d + 1} cells, got {len(row)}",
                                     line=lineno)
            try:
                rows.append([float(c) for c in row])
            except ValueError as e:
                raise CsvFormatError(str(e), line=lineno) from None
    if not rows:
        raise CsvFormatError("no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    feats, labels = arr[:, :-1], arr[:, -1]
    lo = feats.min(axis=0)
    hi = feats.max(axis=0)
    rng_ = hi - lo
    scaled = np.where(rng_ > 0, (feats - lo) / np.where(rng_ > 0, rng_, 1.0), 0.0)
    uniq = np.unique(labels)
    remap = {v: i for i, v in enumerate(uniq)}
    y = np.asarray([remap[v] for v in labels], dtype=np.int64)
    return Dataset(scaled, y, k=len(uniq), provenance=path)


def save_csv(ds: Dataset, path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"f{i}" for i in range(ds.dim)] + ["label"])
        for xi, yi in zip(ds.x, ds.y):
            writer.writerow([repr(float(v)) for v in xi] + [int(yi)])
