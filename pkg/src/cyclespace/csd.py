"""Cycle-space detector: per-cycle null vectors, projection scores and MCE thresholds.

Each basis cycle gets a local detector whose null vector is the eigenvector of
the smallest eigenvalue of the cycle's measurement Gram matrix. A local score
is the magnitude of the projection of a measurement onto that vector; the
aggregate score is the root-sum-square of the local scores.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .case_io import GridCase
from .graph import Cycle, CycleBasis, OrientedGraph, build_graph, minimum_cycle_basis

__all__ = [
    "DegenerateFitWarning",
    "CycleDetector",
    "DetectorBank",
    "Metrics",
    "Threshold",
    "DetectionReport",
    "fit_cycle_null",
    "fit_bank",
    "score",
    "aggregate",
    "mce_threshold",
    "classify_threshold",
    "detection_metrics",
    "detect",
    "svd_baseline_detect",
    "PartialView",
    "mask_observability",
]

FLOOR = 1e-12


class DegenerateFitWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class CycleDetector:
    cycle: Cycle
    n_hat: np.ndarray
    threshold: float | None = None

    def __post_init__(self):
        n = np.asarray(self.n_hat, dtype=float)
        if n.shape != (len(self.cycle),):
            raise ValueError("null vector length must equal the cycle length")
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("null vector must be unit norm")
        object.__setattr__(self, "n_hat", n)

    @property
    def branch_ids(self) -> tuple[int, ...]:
        return self.cycle.edge_ids

    def embedded(self, m: int) -> np.ndarray:
        v = np.zeros(m)
        v[list(self.branch_ids)] = self.n_hat
        return v


@dataclass(frozen=True)
class DetectorBank:
    detectors: tuple[CycleDetector, ...]
    kind: str
    n_edges: int
    t_train: int
    source: str = ""

    def __len__(self):
        return len(self.detectors)

    def null_matrix(self) -> np.ndarray:
        """Embedded null vectors as columns, ``m x |basis|``."""
        if not self.detectors:
            return np.zeros((self.n_edges, 0))
        return np.column_stack([d.embedded(self.n_edges) for d in self.detectors])

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind,
                "n_edges": self.n_edges,
                "t_train": self.t_train,
                "source": self.source,
                "detectors": [
                    {"branch_ids": list(d.branch_ids), "signs": list(d.cycle.signs),
                     "n_hat": d.n_hat.tolist()}
                    for d in self.detectors
                ],
            },
            sort_keys=True,
        )


def _data(z):
    return np.asarray(getattr(z, "z", z), dtype=float)


def fit_cycle_null(train, cycle: Cycle) -> np.ndarray:
    """Unit eigenvector of ``Z_c Z_c^T`` for its smallest eigenvalue.

    ``train`` is an ``m x T_o`` matrix or a series. The sign is fixed so the
    largest-magnitude entry is positive.
    """
    Z = _data(train)[list(cycle.edge_ids)]
    if Z.shape[1] < len(cycle):
        raise ValueError(f"need at least {len(cycle)} training samples for this cycle, got {Z.shape[1]}")
    w, V = np.linalg.eigh(Z @ Z.T)
    if len(w) > 1 and abs(w[1] - w[0]) <= 1e-12 * max(1.0, abs(w[-1])):
        warnings.warn("smallest eigenvalue is repeated; null vector is not unique",
                      DegenerateFitWarning, stacklevel=2)
    n = V[:, 0]
    k = int(np.argmax(np.abs(n)))
    return n if n[k] > 0 else -n


def fit_bank(train, basis: CycleBasis, source: str = "") -> DetectorBank:
    Z = _data(train)
    if Z.shape[0] != basis.n_edges:
        raise ValueError(f"training data has {Z.shape[0]} rows, basis expects {basis.n_edges}")
    dets = tuple(CycleDetector(c, fit_cycle_null(Z, c)) for c in basis)
    return DetectorBank(dets, basis.kind, basis.n_edges, Z.shape[1], source)


def score(bank: DetectorBank, test) -> np.ndarray:
    """Local scores ``|n_hat^T z_c(t)|``, shape ``|basis| x T``."""
    Z = _data(test)
    if Z.shape[0] != bank.n_edges:
        raise ValueError(f"test data has {Z.shape[0]} rows, bank expects {bank.n_edges}")
    return np.abs(bank.null_matrix().T @ Z)


def aggregate(local: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(local * local, axis=0))


# -------------------------------------------------------------- thresholds


@dataclass(frozen=True)
class Threshold:
    tau: float
    separable: bool
    iterations: int


def mce_threshold(values, tol: float = 1e-9, max_iter: int = 500) -> float:
    """Li's iterative minimum cross-entropy threshold."""
    return _mce(values, tol, max_iter)[0]


def _mce(values, tol, max_iter):
    v = np.maximum(np.asarray(values, dtype=float).ravel(), FLOOR)
    if v.size == 0:
        raise ValueError("no values to threshold")
    tau = float(v.mean())
    for it in range(1, max_iter + 1):
        lo, hi = v[v <= tau], v[v > tau]
        if lo.size == 0 or hi.size == 0:
            return tau, it
        mu_b, mu_a = lo.mean(), hi.mean()
        if mu_a == mu_b:
            return tau, it
        new = float((mu_b - mu_a) / (np.log(mu_b) - np.log(mu_a)))
        if abs(new - tau) < tol * max(1.0, abs(tau)):
            return new, it
        tau = new
    return tau, max_iter


def classify_threshold(values, separation: float = 3.0, tol: float = 1e-9,
                       max_iter: int = 500) -> Threshold:
    """MCE threshold plus a check that the two classes are actually apart.

    The split is called separable when the class means differ by at least
    ``separation`` times the pooled within-class standard deviation.
    """
    v = np.maximum(np.asarray(values, dtype=float).ravel(), FLOOR)
    tau, it = _mce(v, tol, max_iter)
    lo, hi = v[v < tau], v[v >= tau]
    if lo.size == 0 or hi.size == 0:
        return Threshold(tau, False, it)
    pooled = np.sqrt((np.sum((lo - lo.mean()) ** 2) + np.sum((hi - hi.mean()) ** 2)) / v.size)
    gap = hi.mean() - lo.mean()
    return Threshold(tau, bool(gap > separation * pooled), it)


# ----------------------------------------------------------------- metrics


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def defined(self) -> bool:
        """False when there are no positives in either flags or labels."""
        return self.tp + self.fp + self.fn > 0

    @property
    def detection_rate(self) -> float:
        return self.recall

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
                "defined": self.defined}


def detection_metrics(flags, labels) -> Metrics:
    """Per-timestep precision, recall and F1; undefined ratios are reported as 0."""
    f = np.asarray(flags, dtype=bool)
    y = np.asarray(labels, dtype=bool)
    if f.shape != y.shape:
        raise ValueError("flags and labels differ in shape")
    tp = int(np.sum(f & y))
    fp = int(np.sum(f & ~y))
    fn = int(np.sum(~f & y))
    tn = int(np.sum(~f & ~y))
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return Metrics(p, r, f1, tp, fp, fn, tn)


# ----------------------------------------------------------------- reports


@dataclass
class DetectionReport:
    detector: str
    local_scores: np.ndarray  # |basis| x T
    aggregate_scores: np.ndarray  # T
    local_thresholds: list[Threshold]
    aggregate_threshold: Threshold
    mode: str = "aggregated"
    branch_ids: list[tuple[int, ...]] = field(default_factory=list)
    labels: np.ndarray | None = None

    @property
    def local_flags(self) -> np.ndarray:
        if not self.local_thresholds:
            return np.zeros((0, self.aggregate_scores.size), dtype=bool)
        out = np.zeros(self.local_scores.shape, dtype=bool)
        for i, th in enumerate(self.local_thresholds):
            if th.separable:
                out[i] = self.local_scores[i] >= th.tau
        return out

    @property
    def aggregate_flags(self) -> np.ndarray:
        th = self.aggregate_threshold
        if not th.separable:
            return np.zeros(self.aggregate_scores.size, dtype=bool)
        return self.aggregate_scores >= th.tau

    @property
    def flags(self) -> np.ndarray:
        if self.mode == "local":
            return self.local_flags.any(axis=0)
        return self.aggregate_flags

    @property
    def attack_class_found(self) -> bool:
        if self.mode == "local":
            return any(th.separable for th in self.local_thresholds)
        return self.aggregate_threshold.separable

    def metrics(self) -> Metrics | None:
        return None if self.labels is None else detection_metrics(self.flags, self.labels)

    def local_metrics(self) -> list[Metrics]:
        if self.labels is None:
            return []
        return [detection_metrics(f, self.labels) for f in self.local_flags]

    def to_dict(self, prefix: str = "") -> dict:
        m = self.metrics()
        return {
            "detector": self.detector,
            "mode": self.mode,
            "attack_class_found": self.attack_class_found,
            "per_cycle": [
                {"cycle_id": i, "branch_ids": list(self.branch_ids[i]) if self.branch_ids else [],
                 "threshold": th.tau, "separable": th.separable,
                 "scores_file": f"{prefix}local_scores.csv"}
                for i, th in enumerate(self.local_thresholds)
            ],
            "aggregate": {"threshold": self.aggregate_threshold.tau,
                          "separable": self.aggregate_threshold.separable,
                          "scores_file": f"{prefix}aggregate_scores.csv"},
            "metrics": None if m is None else m.to_dict(),
        }

    def write(self, out_dir, prefix: str = "", header: str = "") -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        head = f"# {header}\n" if header else ""
        paths = [out / f"{prefix}report.json", out / f"{prefix}local_scores.csv",
                 out / f"{prefix}aggregate_scores.csv"]
        paths[0].write_text(json.dumps({"header": header, **self.to_dict(prefix)},
                                       indent=2, sort_keys=True) + "\n")
        cols = [f"cycle{i}" for i in range(self.local_scores.shape[0])]
        rows = [",".join(["t"] + cols)]
        for t in range(self.aggregate_scores.size):
            rows.append(",".join([str(t)] + [repr(float(v)) for v in self.local_scores[:, t]]))
        paths[1].write_text(head + "\n".join(rows) + "\n")
        rows = ["t,score,flag"]
        flags = self.flags
        for t, (v, f) in enumerate(zip(self.aggregate_scores, flags)):
            rows.append(f"{t},{float(v)!r},{int(f)}")
        paths[2].write_text(head + "\n".join(rows) + "\n")
        return paths


def detect(bank: DetectorBank, test, labels=None, mode: str = "aggregated",
           thresholds: tuple[list[float], float] | None = None,
           separation: float = 3.0) -> DetectionReport:
    """Score a test trace and threshold it.

    By default thresholds are fitted by MCE on the test trace itself. Passing
    ``thresholds=(local_taus, aggregate_tau)`` freezes them instead, e.g. from
    a clean calibration trace.
    """
    if mode not in ("local", "aggregated"):
        raise ValueError(f"unknown mode {mode!r}")
    if labels is None and hasattr(test, "labels"):
        labels = test.labels
    local = score(bank, test)
    agg = aggregate(local)
    if thresholds is None:
        lth = [classify_threshold(row, separation) for row in local]
        ath = classify_threshold(agg, separation)
    else:
        taus, atau = thresholds
        if len(taus) != len(bank):
            raise ValueError("one frozen threshold per detector is required")
        lth = [Threshold(float(t), True, 0) for t in taus]
        ath = Threshold(float(atau), True, 0)
    return DetectionReport("csd", local, agg, lth, ath, mode,
                           [d.branch_ids for d in bank.detectors],
                           None if labels is None else np.asarray(labels, dtype=bool))


def svd_baseline_detect(train, test, n_states: int, labels=None,
                        separation: float = 3.0) -> DetectionReport:
    """Global numerical null space from the ``m - n_states`` smallest left singular vectors."""
    Ztr, Zte = _data(train), _data(test)
    m = Ztr.shape[0]
    if Ztr.shape[1] < m:
        raise ValueError(f"SVD baseline needs at least m={m} training samples, got {Ztr.shape[1]}")
    if Zte.shape[0] != m:
        raise ValueError("train and test disagree on m")
    U = np.linalg.svd(Ztr, full_matrices=True)[0]
    N = U[:, n_states:]
    s = np.linalg.norm(N.T @ Zte, axis=0)
    if labels is None and hasattr(test, "labels"):
        labels = test.labels
    return DetectionReport("svd", np.zeros((0, s.size)), s, [], classify_threshold(s, separation),
                           "aggregated", [], None if labels is None else np.asarray(labels, dtype=bool))


# ---------------------------------------------------- partial observability


@dataclass(frozen=True)
class PartialView:
    """Detector geometry after some branches stop reporting."""

    removed: tuple[int, ...]
    observed: tuple[int, ...]  # original ids of branches still measured
    basis: CycleBasis  # on the observed subgraph, original branch ids
    full_basis: CycleBasis
    broken: tuple[int, ...]  # indices into full_basis of cycles that lost a branch

    def covered(self) -> frozenset:
        return frozenset(e for c in self.basis for e in c.edge_ids)

    def classify(self, support) -> str:
        """Where an attack on the given branches falls relative to surviving cycles."""
        s = set(int(e) for e in support)
        cov = self.covered()
        inside = s & cov
        if not inside:
            return "in_missing_cycles_only"
        if s <= cov:
            return "in_remaining_cycles"
        return "mixed"


def mask_observability(case_or_graph: GridCase | OrientedGraph, removed) -> PartialView:
    """Recompute the minimum cycle basis with ``removed`` branches unobserved."""
    g = build_graph(case_or_graph) if isinstance(case_or_graph, GridCase) else case_or_graph
    removed = tuple(sorted(set(int(e) for e in removed)))
    if any(not 0 <= e < g.n_edges for e in removed):
        raise ValueError("removed branch id out of range")
    sub, kept = g.without_edges(removed)
    if not kept:
        raise ValueError("no observed branches remain")
    sub_basis = minimum_cycle_basis(sub)
    basis = CycleBasis([c.remap(kept) for c in sub_basis], "minimum", g.n_edges)
    full = minimum_cycle_basis(g)
    rem = set(removed)
    broken = tuple(i for i, c in enumerate(full) if c.edge_set & rem)
    return PartialView(removed, tuple(kept), basis, full, broken)
