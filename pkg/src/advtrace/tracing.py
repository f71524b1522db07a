"""Origin tracing: DOL statistics, argmax source identification, tracing
accuracy, multi-copy Monte-Carlo estimation, and transferability accounting.

The DOL of a tracer on an adversarial example is its logit at the attacked
label minus its logit at the true label; the copy whose tracer shows the
largest DOL is named the source.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidRecordError, LabelError
from .netcore import forward
from .separation import ParallelModel, Tracer


@dataclass
class DolSample:
    copy_id: int
    value: float


@dataclass
class TraceVerdict:
    source: int  # predicted copy index (argmax DOL, lowest index on ties)
    dols: np.ndarray
    margin: float  # top1 - top2 DOL, >= 0


@dataclass
class DolDistribution:
    samples: np.ndarray
    role: str  # "source" or "victim"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise ValueError("empty DOL distribution")
        if self.role not in ("source", "victim"):
            raise ValueError("role must be 'source' or 'victim'")


def dol(tracer: Tracer, x_att: np.ndarray, att_label: int, true_label: int) -> float:
    """Tracer logit difference T(x_att)[att] - T(x_att)[true]."""
    k = tracer.output_dim
    if not (0 <= att_label < k and 0 <= true_label < k):
        raise LabelError(f"labels ({att_label}, {true_label}) out of range for K={k}")
    if att_label == true_label:
        raise InvalidRecordError("attacked label equals true label")
    logits = forward(tracer.net, x_att)
    return float(logits[att_label] - logits[true_label])


def trace_source(tracers: list[Tracer], x_att: np.ndarray, att_label: int,
                 true_label: int) -> TraceVerdict:
    """Name the copy whose tracer shows the largest DOL."""
    if len(tracers) < 2:
        raise ValueError("tracing needs at least two candidate tracers")
    dols = np.asarray([dol(t, x_att, att_label, true_label) for t in tracers])
    source = int(np.argmax(dols))  # argmax takes the lowest index on ties
    top2 = np.partition(dols, -2)[-2]
    return TraceVerdict(source=source, dols=dols, margin=float(dols[source] - top2))


def tracing_accuracy(verdicts: list[TraceVerdict], true_sources: list[int]) -> float:
    """Fraction of verdicts naming the right copy."""
    if not verdicts or len(verdicts) != len(true_sources):
        raise ValueError("need equal-length, nonempty verdicts and labels")
    hits = sum(int(v.source == s) for v, s in zip(verdicts, true_sources))
    return hits / len(verdicts)


def collect_distributions(records, source_tracer: Tracer,
                          victim_tracer: Tracer) -> tuple[DolDistribution, DolDistribution]:
    """Paired per-record DOL samples of the source and one victim tracer."""
    if not records:
        raise ValueError("no records")
    d_s, d_v = [], []
    for r in records:
        d_s.append(dol(source_tracer, r.x_att, r.attacked_label, r.true_label))
        d_v.append(dol(victim_tracer, r.x_att, r.attacked_label, r.true_label))
    return (DolDistribution(np.array(d_s), "source"),
            DolDistribution(np.array(d_v), "victim"))


def estimate_multicopy_accuracy(d_s: DolDistribution, d_v: DolDistribution,
                                n: int, trials: int = 10000,
                                rng: np.random.Generator | None = None) -> float:
    """Monte-Carlo estimate of n-copy tracing accuracy from two empirical
    distributions: draw one source sample and n-1 victim samples (with
    replacement); count trials where the source strictly dominates."""
    if n < 2:
        raise ValueError("n must be at least 2")
    if rng is None:
        rng = np.random.default_rng(0)
    s = rng.choice(d_s.samples, size=trials, replace=True)
    v = rng.choice(d_v.samples, size=(trials, n - 1), replace=True)
    return float((s > v.max(axis=1)).mean())


@dataclass
class TransferReport:
    """Table-4-style accounting of transferable vs non-transferable records."""

    n_nontransferable: int
    n_nontransferable_traced: int
    n_transferable: int
    n_transferable_traced: int

    @property
    def total(self) -> int:
        return self.n_nontransferable + self.n_transferable

    @property
    def transfer_rate(self) -> float:
        """Tracing accuracy restricted to transferable records (0 if none)."""
        if self.n_transferable == 0:
            return 0.0
        return self.n_transferable_traced / self.n_transferable

    @property
    def total_rate(self) -> float:
        if self.total == 0:
            return 0.0
        return (self.n_nontransferable_traced + self.n_transferable_traced) / self.total

    @classmethod
    def from_counts(cls, ntr: int, ntr_traced: int, tr: int, tr_traced: int):
        return cls(ntr, ntr_traced, tr, tr_traced)

    def as_dict(self) -> dict:
        return {
            "NTr": self.n_nontransferable,
            "NTr+": self.n_nontransferable_traced,
            "Tr": self.n_transferable,
            "Tr+": self.n_transferable_traced,
            "tr_rate": self.transfer_rate,
            "total_rate": self.total_rate,
        }


def transferability_report(records, all_models: list[ParallelModel],
                           verdicts: list[TraceVerdict]) -> TransferReport:
    """A record transfers if any victim copy also mislabels its adversarial
    input; traced means the verdict named the record's source copy."""
    if not records or len(records) != len(verdicts):
        raise ValueError("need records with matching verdicts")
    if len(all_models) < 2:
        raise ValueError("need at least one victim copy")
    ntr = ntr_t = tr = tr_t = 0
    for rec, verdict in zip(records, verdicts):
        transferred = False
        for model in all_models:
            if model.copy_id == rec.source_copy_id:
                continue
            if model.predict(rec.x_att) != rec.true_label:
                transferred = True
                break
        traced = verdict.source == rec.source_copy_id
        if transferred:
            tr += 1
            tr_t += int(traced)
        else:
            ntr += 1
            ntr_t += int(traced)
    return TransferReport(ntr, ntr_t, tr, tr_t)


def export_dol_csv(path: str, rows) -> None:
    """DOL export: (record_id, copy_id, role, dol, alpha, attack) rows."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["record_id", "copy_id", "role", "dol", "alpha", "attack"])
        for r in rows:
            writer.writerow([r[0], r[1], r[2], repr(float(r[3])), repr(float(r[4])), r[5]])
