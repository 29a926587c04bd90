"""False data injection: model-based, autoencoder-residual and subspace baselines."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .autoencoder import MlpAutoencoder
from .dcsim import JacobianH, MeasurementSeries, NoiseModel

__all__ = [
    "FAMILIES",
    "AttackScenario",
    "model_based_fdia",
    "ae_residual_attack",
    "pca_blind_attack",
    "lowrank_svd_attack",
    "rank_by_gap",
    "apply_attack",
]

FAMILIES = ("model_based", "ae_blind", "pca_blind", "lowrank_blind")


@dataclass(frozen=True)
class AttackScenario:
    family: str
    kappa: float
    window: tuple[int, int]
    gamma: float = 0.1
    seed: int = 0
    u: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown attack family {self.family!r}")
        if not self.kappa >= 0:
            raise ValueError("kappa must be nonnegative")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        start, stop = (int(v) for v in self.window)
        if not 0 <= start <= stop:
            raise ValueError(f"invalid window {self.window}")
        object.__setattr__(self, "window", (start, stop))

    def to_json(self) -> str:
        d = {"family": self.family, "kappa": self.kappa, "gamma": self.gamma,
             "window": list(self.window), "seed": self.seed}
        if self.u is not None:
            d["u"] = np.asarray(self.u).tolist()
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AttackScenario":
        d = json.loads(text)
        u = d.get("u")
        return cls(d["family"], float(d["kappa"]), tuple(d["window"]), float(d.get("gamma", 0.1)),
                   int(d.get("seed", 0)), None if u is None else np.asarray(u, dtype=float))


def _window(series: MeasurementSeries, scenario: AttackScenario) -> slice:
    start, stop = scenario.window
    if stop > series.T:
        raise ValueError(f"attack window {scenario.window} exceeds series length {series.T}")
    return slice(start, stop)


def _inject(series, sl, delta) -> MeasurementSeries:
    z = series.z.copy()
    z[:, sl] += delta
    labels = series.labels.copy()
    labels[sl] = True
    return replace(series, z=z, labels=labels)


def _expect(scenario, family):
    if scenario.family != family:
        raise ValueError(f"scenario family is {scenario.family!r}, expected {family!r}")


def model_based_fdia(series: MeasurementSeries, h: JacobianH, scenario: AttackScenario):
    """``z' = z + kappa * H u`` over the window."""
    _expect(scenario, "model_based")
    sl = _window(series, scenario)
    if scenario.u is None:
        raise ValueError("model-based attack needs a state direction u")
    u = np.asarray(scenario.u, dtype=float)
    if u.shape != (h.n_states,):
        raise ValueError(f"u must have length {h.n_states}")
    a = scenario.kappa * (h.matrix @ u)
    return _inject(series, sl, a[:, None])


def ae_residual_attack(series: MeasurementSeries, model: MlpAutoencoder,
                       scenario: AttackScenario, noise: NoiseModel):
    """``z' = z + kappa * (r + eta)`` with ``r = z - AE(z)``, ``eta ~ N(0, gamma R)``."""
    _expect(scenario, "ae_blind")
    if model.m != series.m or noise.m != series.m:
        raise ValueError("model / noise dimension does not match the series")
    sl = _window(series, scenario)
    zw = series.z[:, sl]
    r = zw - model.reconstruct(zw)
    rng = np.random.default_rng([scenario.seed, 0xA77])
    eta = np.sqrt(scenario.gamma) * noise.sigma[:, None] * rng.standard_normal(zw.shape)
    return _inject(series, sl, scenario.kappa * (r + eta))


def _check_history(history, rank):
    history = np.asarray(history, dtype=float)
    if history.shape[1] < rank:
        raise ValueError(f"history has {history.shape[1]} samples, need at least {rank}")
    return history


def _subspace_attack(series, scenario, basis):
    sl = _window(series, scenario)
    rng = np.random.default_rng([scenario.seed, 0x5B5])
    g = rng.standard_normal(basis.shape[1])  # one direction per window
    return _inject(series, sl, (scenario.kappa * (basis @ g))[:, None])


def pca_blind_attack(series: MeasurementSeries, history: np.ndarray, scenario: AttackScenario,
                     n_states: int):
    """Inject along the top ``n_states`` principal directions of the history."""
    _expect(scenario, "pca_blind")
    history = _check_history(history, n_states)
    centered = history - history.mean(axis=1, keepdims=True)
    U = np.linalg.svd(centered, full_matrices=False)[0]
    return _subspace_attack(series, scenario, U[:, :n_states])


def rank_by_gap(history: np.ndarray) -> int:
    """Rank at the largest ratio between consecutive singular values."""
    s = np.linalg.svd(np.asarray(history, dtype=float), compute_uv=False)
    if s.size < 2:
        return int(s.size)
    floor = s[0] * np.finfo(float).eps
    s = np.maximum(s, floor)
    return int(np.argmax(s[:-1] / s[1:]) + 1)


def lowrank_svd_attack(series: MeasurementSeries, history: np.ndarray, scenario: AttackScenario):
    """Inject along the leading singular directions of the raw history, rank by gap."""
    _expect(scenario, "lowrank_blind")
    history = _check_history(history, 1)
    r = rank_by_gap(history)
    U = np.linalg.svd(history, full_matrices=False)[0]
    return _subspace_attack(series, scenario, U[:, :r])


def apply_attack(series, scenario, *, h=None, model=None, noise=None, history=None, n_states=None):
    if scenario.family == "model_based":
        return model_based_fdia(series, h, scenario)
    if scenario.family == "ae_blind":
        return ae_residual_attack(series, model, scenario, noise)
    if scenario.family == "pca_blind":
        return pca_blind_attack(series, history, scenario, n_states)
    return lowrank_svd_attack(series, history, scenario)
