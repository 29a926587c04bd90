"""DC measurement model: Jacobian, state trajectories and noisy branch flows."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .case_io import GridCase, LoadProfile

__all__ = [
    "JacobianH",
    "NoiseModel",
    "MeasurementSeries",
    "build_h",
    "reduced_laplacian",
    "simulate_states",
    "generate_measurements",
    "isotropic_states",
    "series_to_csv",
    "series_from_csv",
]


@dataclass(frozen=True)
class JacobianH:
    matrix: np.ndarray
    state_buses: tuple[int, ...]
    slack_bus: int

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_states(self) -> int:
        return self.matrix.shape[1]

    @property
    def nullity(self) -> int:
        return self.m - np.linalg.matrix_rank(self.matrix)

    def rows(self, branch_ids) -> "JacobianH":
        return JacobianH(self.matrix[list(branch_ids)], self.state_buses, self.slack_bus)


@dataclass(frozen=True)
class NoiseModel:
    """Independent Gaussian sensor noise, ``R = diag(sigma**2)``."""

    sigma: np.ndarray

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if np.any(~np.isfinite(s)) or np.any(s <= 0):
            raise ValueError("noise standard deviations must be positive")
        object.__setattr__(self, "sigma", s)

    @classmethod
    def homoscedastic(cls, sigma: float, m: int) -> "NoiseModel":
        return cls(np.full(m, float(sigma)))

    @property
    def m(self) -> int:
        return self.sigma.size

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.sigma**2)

    def subset(self, ids) -> "NoiseModel":
        return NoiseModel(self.sigma[list(ids)])


@dataclass
class MeasurementSeries:
    z: np.ndarray  # m x T
    x_true: np.ndarray  # n_s x T
    clean: np.ndarray  # m x T
    labels: np.ndarray  # T, True = attacked
    seed: int | None = None
    sigma: np.ndarray | None = None
    case_name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.z.shape[0]

    @property
    def T(self) -> int:
        return self.z.shape[1]

    def segment(self, start: int, stop: int) -> "MeasurementSeries":
        return replace(
            self,
            z=self.z[:, start:stop].copy(),
            x_true=self.x_true[:, start:stop].copy(),
            clean=self.clean[:, start:stop].copy(),
            labels=self.labels[start:stop].copy(),
        )

    def rows(self, branch_ids) -> "MeasurementSeries":
        ids = list(branch_ids)
        return replace(
            self,
            z=self.z[ids].copy(),
            clean=self.clean[ids].copy(),
            sigma=None if self.sigma is None else self.sigma[ids].copy(),
        )


def build_h(case: GridCase) -> JacobianH:
    """Branch-flow Jacobian: row ``e`` is ``(u_from - u_to) / x_e`` without the slack column."""
    state_buses = tuple(sorted(b for b in case.bus_ids if b != case.slack_bus))
    col = {b: j for j, b in enumerate(state_buses)}
    H = np.zeros((case.n_branches, len(state_buses)))
    for e, br in enumerate(case.branches):
        b = 1.0 / br.reactance
        if br.from_bus in col:
            H[e, col[br.from_bus]] += b
        if br.to_bus in col:
            H[e, col[br.to_bus]] -= b
    return JacobianH(H, state_buses, case.slack_bus)


def reduced_laplacian(case: GridCase) -> np.ndarray:
    """Susceptance-weighted Laplacian with the slack row/column removed."""
    h = build_h(case)
    A = h.matrix * case.reactances[:, None]  # signed incidence, slack column dropped
    return A.T @ h.matrix


def simulate_states(case: GridCase, profile: LoadProfile, T: int, jitter: float = 0.1,
                    seed: int = 0) -> np.ndarray:
    """Bus angles from DC power flow under scaled, jittered loads.

    Loads at time ``t`` are ``base_load * profile[t mod len] * U(1-jitter, 1+jitter)``
    per bus; all loads are served from the slack bus.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 <= jitter < 1:
        raise ValueError("jitter must lie in [0, 1)")
    h = build_h(case)
    B = reduced_laplacian(case)
    if np.linalg.matrix_rank(B) < B.shape[0]:
        raise np.linalg.LinAlgError("reduced Laplacian is singular")
    loads = {b.id: b.base_load for b in case.buses}
    base = np.array([loads[b] for b in h.state_buses])
    scale = profile.scale_factors[np.arange(T) % len(profile)]
    rng = np.random.default_rng([seed, 0x57A7E])
    mult = rng.uniform(1 - jitter, 1 + jitter, size=(base.size, T)) if jitter > 0 else 1.0
    P = -(base[:, None] * scale[None, :]) * mult
    return np.linalg.solve(B, P)


def isotropic_states(n_s: int, T: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x150])
    return rng.standard_normal((n_s, T))


def generate_measurements(h: JacobianH, states: np.ndarray, noise: NoiseModel,
                          seed: int = 0, case_name: str = "") -> MeasurementSeries:
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[0] != h.n_states:
        raise ValueError(f"states must be {h.n_states} x T, got {states.shape}")
    if noise.m != h.m:
        raise ValueError("noise model and Jacobian disagree on m")
    clean = h.matrix @ states
    rng = np.random.default_rng([seed, 0xE55])
    eps = noise.sigma[:, None] * rng.standard_normal(clean.shape)
    return MeasurementSeries(
        z=clean + eps,
        x_true=states,
        clean=clean,
        labels=np.zeros(states.shape[1], dtype=bool),
        seed=seed,
        sigma=noise.sigma.copy(),
        case_name=case_name,
    )


def series_to_csv(series: MeasurementSeries) -> tuple[str, str]:
    """Return ``(csv, sidecar_json)``; rows are timesteps, columns branch flows."""
    header = ",".join(f"z{e}" for e in range(series.m))
    lines = [header]
    for t in range(series.T):
        lines.append(",".join(repr(float(v)) for v in series.z[:, t]))
    sidecar = {
        "case_name": series.case_name,
        "seed": series.seed,
        "sigma": None if series.sigma is None else [float(s) for s in series.sigma],
        "labels": [int(v) for v in series.labels],
        **series.meta,
    }
    return "\n".join(lines) + "\n", json.dumps(sidecar, indent=2, sort_keys=True)


def series_from_csv(csv_text: str, sidecar_text: str) -> MeasurementSeries:
    rows = [ln for ln in csv_text.splitlines() if ln.strip()]
    z = np.array([[float(v) for v in ln.split(",")] for ln in rows[1:]]).T
    side = json.loads(sidecar_text)
    labels = np.array(side.get("labels", [0] * z.shape[1]), dtype=bool)
    sigma = side.get("sigma")
    nan = np.full_like(z, np.nan)
    meta = {k: v for k, v in side.items() if k not in ("case_name", "seed", "sigma", "labels")}
    return MeasurementSeries(
        z=z,
        x_true=np.full((0, z.shape[1]), np.nan),
        clean=nan,
        labels=labels,
        seed=side.get("seed"),
        sigma=None if sigma is None else np.asarray(sigma, dtype=float),
        case_name=side.get("case_name", ""),
        meta=meta,
    )
