"""End-to-end experiments: scenarios, (kappa, sigma) sweeps, theory runs and partial observability.

Every random draw comes from a substream of the configured seed, and all
files are written with sorted keys and ``repr`` floats, so a run with a fixed
config is byte-reproducible. Each output file carries the config hash.
"""

from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import io
import json
import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import csd
from .attack import FAMILIES, AttackScenario, apply_attack
from .autoencoder import MlpAutoencoder, TrainConfig, train_autoencoder
from .case_io import GridCase, load_case, load_profile_csv, synthetic_profile
from .dcsim import MeasurementSeries, NoiseModel, build_h, generate_measurements, series_to_csv, simulate_states
from .estimation import ResidualStats, WlsEstimator, residual_rows_csv
from .graph import CycleBasis, basis_to_json, build_graph, fundamental_cycle_basis, minimum_cycle_basis
from .theory import (
    MonteCarloConfig,
    basis_rows_to_csv,
    egen_monte_carlo,
    estimates_to_csv,
    mcb_optimality_experiment,
)

__all__ = [
    "ConfigError",
    "StageError",
    "ExperimentConfig",
    "MetricRow",
    "ScenarioResult",
    "subseed",
    "run_scenario",
    "write_scenario",
    "run_sweep",
    "f1_regions",
    "coverage_disagreement",
    "run_theory",
    "pick_partial_branches",
    "run_partial",
]

log = logging.getLogger(__name__)

DETECTORS = ("csd", "svd", "bdd")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """Wraps the failure of one pipeline stage; ``cause`` keeps the original exception."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:  # tag and re-raise
        raise StageError(name, exc) from exc


@dataclass(frozen=True)
class ExperimentConfig:
    case: str = "ieee14"
    t_train: int = 2000  # attacker history length
    t_o: int = 1200  # detector training samples (head of the monitored series)
    t_u: int = 800  # evaluation samples
    sigma: float = 0.02
    kappa: float = 1.0
    sigmas: tuple[float, ...] = (0.005, 0.01, 0.02, 0.05, 0.1)
    kappas: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)
    family: str = "ae_blind"
    gamma: float = 0.1
    window: tuple[int, int] | None = None  # within the evaluation segment
    basis: str = "minimum"
    detectors: tuple[str, ...] = DETECTORS
    alpha: float = 0.05
    separation: float = 3.0
    epochs: int = 300
    jitter: float = 0.1
    profile: str | None = None
    seed: int = 0
    t_star: int = 1000
    trials: int = 100
    theory_sigmas: tuple[float, ...] = (0.01, 0.02, 0.05, 0.1, 0.5, 1.0)
    theory_t_o: int | None = None  # default 2m
    n_random_bases: int = 100
    removed_small: int | None = None
    removed_large: int | None = None

    def __post_init__(self):
        for name in ("sigmas", "kappas", "detectors", "theory_sigmas"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.window is not None:
            object.__setattr__(self, "window", tuple(int(v) for v in self.window))
        if min(self.t_train, self.t_o, self.t_u, self.epochs, self.t_star, self.trials) < 1:
            raise ConfigError("sample counts, epochs and trials must be positive")
        if not self.sigmas or not self.kappas or not self.theory_sigmas:
            raise ConfigError("sweep grids must be nonempty")
        if any(s <= 0 for s in self.sigmas + self.theory_sigmas) or self.sigma <= 0:
            raise ConfigError("noise levels must be positive")
        if any(k < 0 for k in self.kappas) or self.kappa < 0:
            raise ConfigError("attack magnitudes must be nonnegative")
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown attack family {self.family!r}")
        if self.basis not in ("minimum", "fundamental"):
            raise ConfigError(f"unknown basis kind {self.basis!r}")
        if not set(self.detectors) <= set(DETECTORS) or not self.detectors:
            raise ConfigError(f"detectors must be a nonempty subset of {DETECTORS}")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.window is not None:
            a, b = self.window
            if not 0 <= a <= b <= self.t_u:
                raise ConfigError(f"window {self.window} must lie within [0, {self.t_u}]")

    @property
    def attack_window(self) -> tuple[int, int]:
        return self.window if self.window is not None else (self.t_u // 3, 2 * self.t_u // 3)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def subseed(seed: int, *tags: int) -> int:
    """Deterministic 32-bit child seed for a tagged substream."""
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


# stream tags
_SERIES, _HISTORY, _ATTACK, _MODEL, _DIRECTION = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class MetricRow:
    detector: str
    kappa: float
    sigma: float
    precision: float
    recall: float
    f1: float
    seed: int
    class_found: bool = True

    def __post_init__(self):
        for v in (self.precision, self.recall, self.f1):
            if not 0.0 <= v <= 1.0:
                raise ValueError("metrics must lie in [0, 1]")

    @classmethod
    def from_report(cls, detector, report: csd.DetectionReport, kappa, sigma, seed, flags=None):
        m = csd.detection_metrics(report.flags if flags is None else flags, report.labels)
        found = report.attack_class_found if flags is None else bool(np.any(flags))
        return cls(detector, kappa, sigma, m.precision, m.recall, m.f1, seed, found)


@dataclass
class ScenarioResult:
    config: ExperimentConfig
    case: GridCase
    basis: CycleBasis
    train: MeasurementSeries
    clean: MeasurementSeries
    attacked: MeasurementSeries
    scenario: AttackScenario
    reports: dict[str, csd.DetectionReport] = field(default_factory=dict)
    model: MlpAutoencoder | None = None
    residuals: ResidualStats | None = None

    def rows(self, sigma=None, kappa=None, seed=None) -> list[MetricRow]:
        sigma = self.config.sigma if sigma is None else sigma
        kappa = self.config.kappa if kappa is None else kappa
        seed = self.config.seed if seed is None else seed
        out = []
        if "csd" in self.reports:
            rep = self.reports["csd"]
            for i, f in enumerate(rep.local_flags):
                out.append(MetricRow.from_report(f"cycle{i}", rep, kappa, sigma, seed, f))
            out.append(MetricRow.from_report("aggregate", rep, kappa, sigma, seed))
        for name in ("svd", "bdd"):
            if name in self.reports:
                out.append(MetricRow.from_report(name, self.reports[name], kappa, sigma, seed))
        return out


def _load_inputs(cfg: ExperimentConfig):
    with stage("parse"):
        case = load_case(cfg.case)
        g = build_graph(case)
        basis = minimum_cycle_basis(g) if cfg.basis == "minimum" else fundamental_cycle_basis(g)
        profile_text = Path(cfg.profile).read_text() if cfg.profile else None
    return case, basis, profile_text


def _profile(profile_text, T, seed):
    if profile_text is not None:
        return load_profile_csv(profile_text)
    return synthetic_profile(T, seed=seed)


def _simulate(case, h, noise, profile_text, T, jitter, seed):
    states = simulate_states(case, _profile(profile_text, T, seed), T, jitter=jitter, seed=seed)
    return generate_measurements(h, states, noise, seed=seed, case_name=case.case_name)


def _train_model(cfg, case, h, noise, profile_text, seed):
    hist = _simulate(case, h, noise, profile_text, cfg.t_train, cfg.jitter, subseed(seed, _HISTORY))
    model = None
    if cfg.family == "ae_blind":
        model = train_autoencoder(hist.z, h.n_states,
                                  TrainConfig(epochs=cfg.epochs, seed=subseed(seed, _MODEL)))
    return hist, model


def run_scenario(cfg: ExperimentConfig, *, sigma: float | None = None, kappa: float | None = None,
                 cell_seed: int | None = None, model: MlpAutoencoder | None = None,
                 history: MeasurementSeries | None = None, observed=None,
                 basis: CycleBasis | None = None, inputs=None) -> ScenarioResult:
    """Simulate, attack and detect one configuration.

    ``cell_seed`` selects the substream for the monitored series and the
    attack (defaults to the config seed). A pre-trained ``model`` and attacker
    ``history`` may be passed to reuse them across sweep cells. ``observed``
    restricts detection to a subset of branches; ``basis`` must then live on
    those branches.
    """
    sigma = cfg.sigma if sigma is None else sigma
    kappa = cfg.kappa if kappa is None else kappa
    seed = cfg.seed if cell_seed is None else cell_seed
    case, default_basis, profile_text = inputs or _load_inputs(cfg)
    basis = default_basis if basis is None else basis
    with stage("simulate"):
        h = build_h(case)
        noise = NoiseModel.homoscedastic(sigma, h.m)
        T = cfg.t_o + cfg.t_u
        series = _simulate(case, h, noise, profile_text, T, cfg.jitter, subseed(seed, _SERIES))
        train, ev = series.segment(0, cfg.t_o), series.segment(cfg.t_o, T)
    if history is None and cfg.family != "model_based":
        with stage("train"):
            history, model = _train_model(cfg, case, h, noise, profile_text, cfg.seed)
    with stage("attack"):
        u = None
        if cfg.family == "model_based":
            r = np.random.default_rng(subseed(seed, _DIRECTION))
            u = r.standard_normal(h.n_states)
            u /= np.linalg.norm(u)
        scenario = AttackScenario(cfg.family, kappa, cfg.attack_window, cfg.gamma,
                                  subseed(seed, _ATTACK), u)
        attacked = apply_attack(ev, scenario, h=h, model=model, noise=noise,
                                history=None if history is None else history.z,
                                n_states=h.n_states)
    res = ScenarioResult(cfg, case, basis, train, ev, attacked, scenario, model=model)
    with stage("detect"):
        rows = slice(None) if observed is None else list(observed)
        if "csd" in cfg.detectors:
            bank = csd.fit_bank(train, basis, source=f"seed={seed}")
            res.reports["csd"] = csd.detect(bank, attacked, separation=cfg.separation)
        if "svd" in cfg.detectors:
            n_obs = h.n_states if observed is None else int(np.linalg.matrix_rank(h.matrix[rows]))
            res.reports["svd"] = csd.svd_baseline_detect(
                train.z[rows], attacked.z[rows], n_obs, attacked.labels, cfg.separation)
        if "bdd" in cfg.detectors and observed is None:
            est = WlsEstimator(h, noise)
            stats = est.detect(attacked.z, cfg.alpha)
            res.residuals = stats
            res.reports["bdd"] = csd.DetectionReport(
                "bdd", np.zeros((0, attacked.T)), np.asarray(stats.lnr),
                [], csd.Threshold(stats.threshold, True, 0), labels=attacked.labels)
    return res


def _header(cfg: ExperimentConfig, extra: str = "") -> str:
    return f"config_hash={cfg.hash} seed={cfg.seed} case={cfg.case}" + (f" {extra}" if extra else "")


def _claim_dir(out_dir, cfg: ExperimentConfig, command: str, force: bool = False) -> Path:
    """Create ``out_dir`` and record the config hash; refuse to mix runs of different configs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.json"
    if manifest.exists() and not force:
        old = json.loads(manifest.read_text())
        if old.get("config_hash") != cfg.hash or old.get("command") != command:
            raise ConfigError(f"{out} holds output of a different run "
                              f"({old.get('command')}, {old.get('config_hash')}); use --force")
    manifest.write_text(json.dumps({"command": command, "config_hash": cfg.hash,
                                    "config": cfg.to_dict()}, indent=2, sort_keys=True) + "\n")
    return out


def _write_series(out: Path, name: str, series: MeasurementSeries, header: str) -> None:
    text, side = series_to_csv(series)
    (out / f"{name}.csv").write_text(f"# {header}\n" + text)
    (out / f"{name}.json").write_text(side + "\n")


def write_scenario(res: ScenarioResult, out_dir, force: bool = False, command: str = "detect") -> list[Path]:
    cfg = res.config
    out = _claim_dir(out_dir, cfg, command, force)
    head = _header(cfg)
    _write_series(out, "attacked", res.attacked, head)
    (out / "scenario.json").write_text(res.scenario.to_json() + "\n")
    (out / "basis.json").write_text(basis_to_json(res.basis) + "\n")
    if res.model is not None:
        (out / "autoencoder.json").write_text(res.model.to_json() + "\n")
    for name, rep in sorted(res.reports.items()):
        rep.write(out, prefix=f"{name}_", header=head)
    if res.residuals is not None:
        (out / "bdd_residuals.csv").write_text(residual_rows_csv(res.residuals, head))
    (out / "metrics.csv").write_text(rows_to_csv(res.rows(), head))
    return sorted(out.iterdir())


def rows_to_csv(rows: list[MetricRow], header: str = "") -> str:
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    buf.write("detector,kappa,sigma,precision,recall,f1,seed,class_found\n")
    for r in rows:
        buf.write(f"{r.detector},{r.kappa!r},{r.sigma!r},{r.precision!r},{r.recall!r},{r.f1!r},"
                  f"{r.seed},{int(r.class_found)}\n")
    return buf.getvalue()


# ------------------------------------------------------------------- sweep


def _cell(args):
    cfg, inputs, sigma, kappa, cell_seed, model, history, observed, basis = args
    res = run_scenario(cfg, sigma=sigma, kappa=kappa, cell_seed=cell_seed, model=model,
                       history=history, observed=observed, basis=basis, inputs=inputs)
    return res.rows(sigma, kappa, cell_seed)


def _models(cfg, inputs):
    """Attacker history and trained model per noise level (shared across kappa)."""
    case, _, profile_text = inputs
    h = build_h(case)
    out = {}
    for j, sigma in enumerate(cfg.sigmas):
        noise = NoiseModel.homoscedastic(sigma, h.m)
        with stage("train"):
            out[j] = _train_model(cfg, case, h, noise, profile_text, subseed(cfg.seed, _HISTORY, j))
    return out


def _grid(cfg, inputs, models, observed=None, basis=None, executor=None):
    jobs = []
    for j, sigma in enumerate(cfg.sigmas):
        hist, model = models[j]
        for i, kappa in enumerate(cfg.kappas):
            jobs.append((cfg, inputs, sigma, kappa, subseed(cfg.seed, _SERIES, i, j), model,
                         hist, observed, basis))
    results = executor.map(_cell, jobs) if executor is not None else map(_cell, jobs)
    return [row for rows in results for row in rows]


def run_sweep(cfg: ExperimentConfig, executor: Executor | None = None) -> list[MetricRow]:
    """MetricRows for every (kappa, sigma) cell and every detector, in grid order."""
    inputs = _load_inputs(cfg)
    return _grid(cfg, inputs, _models(cfg, inputs), executor=executor)


def f1_regions(rows: list[MetricRow], level: float = 0.8) -> dict[str, list[tuple[float, float]]]:
    """Cells ``(kappa, sigma)`` where each detector reaches ``f1 >= level``."""
    out: dict[str, list] = {}
    for r in rows:
        out.setdefault(r.detector, [])
        if r.f1 >= level:
            out[r.detector].append((r.kappa, r.sigma))
    return out


def coverage_disagreement(rows: list[MetricRow], level: float = 0.8) -> dict[str, float]:
    """Per single cycle detector: fraction of grid cells it covers but the aggregate does not."""
    regions = f1_regions(rows, level)
    n_cells = len({(r.kappa, r.sigma) for r in rows})
    agg = set(regions.get("aggregate", []))
    return {d: len(set(c) - agg) / n_cells for d, c in regions.items() if d.startswith("cycle")}


def write_sweep(rows: list[MetricRow], cfg: ExperimentConfig, out_dir, force=False) -> list[Path]:
    out = _claim_dir(out_dir, cfg, "sweep", force)
    head = _header(cfg)
    (out / "sweep.csv").write_text(rows_to_csv(rows, head))
    summary = {"header": head,
               "f1_regions": {k: [list(c) for c in v] for k, v in f1_regions(rows).items()},
               "coverage_disagreement": coverage_disagreement(rows)}
    (out / "regions.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return [out / "sweep.csv", out / "regions.json"]


# ------------------------------------------------------------------ theory


def run_theory(cfg: ExperimentConfig, out_dir=None, force=False, executor=None):
    """Monte-Carlo check of the closed-form error and the basis comparison table."""
    case, _, _ = _load_inputs(cfg)
    h = build_h(case)
    t_o = cfg.theory_t_o or 2 * h.m
    with stage("theory"):
        mc = MonteCarloConfig(cfg.trials, cfg.t_star, cfg.theory_sigmas, cfg.seed)
        estimates = egen_monte_carlo(h, mc, t_o, executor=executor)
        rows = mcb_optimality_experiment(case, t_o, cfg.sigma, cfg.trials, cfg.seed,
                                         cfg.n_random_bases, cfg.t_star)
    if out_dir is not None:
        out = _claim_dir(out_dir, cfg, "theory", force)
        head = _header(cfg, f"t_o={t_o}")
        (out / "egen.csv").write_text(estimates_to_csv(estimates, head))
        (out / "mcb.csv").write_text(basis_rows_to_csv(rows, head))
    return estimates, rows


# ----------------------------------------------------- partial observability


def pick_partial_branches(case: GridCase) -> tuple[int, int]:
    """A branch only on a shortest MCB cycle, and one only on the longest MCB cycle."""
    basis = minimum_cycle_basis(build_graph(case))
    if len(basis) < 2:
        raise ConfigError("need at least two independent cycles for the partial experiment")
    count = np.zeros(case.n_branches, dtype=int)
    for c in basis:
        count[list(c.edge_ids)] += 1

    def private(cycle):
        ids = [e for e in cycle.edge_ids if count[e] == 1]
        return min(ids) if ids else None

    order = sorted(range(len(basis)), key=lambda i: (len(basis[i]), i))
    small = next((private(basis[i]) for i in order if private(basis[i]) is not None), None)
    large = next((private(basis[i]) for i in reversed(order) if private(basis[i]) is not None), None)
    if small is None or large is None or small == large:
        raise ConfigError("could not find branches private to a small and a large cycle")
    return small, large


def run_partial(cfg: ExperimentConfig, removed_small: int | None = None,
                removed_large: int | None = None, executor: Executor | None = None):
    """Aggregated CSD F1 surfaces under full observability and two single-branch masks.

    All three surfaces use the same simulated data per cell; only the
    observed branch set and its cycle basis change.
    """
    inputs = _load_inputs(cfg)
    case = inputs[0]
    small = removed_small if removed_small is not None else cfg.removed_small
    large = removed_large if removed_large is not None else cfg.removed_large
    if small is None or large is None:
        auto_small, auto_large = pick_partial_branches(case)
        small = auto_small if small is None else small
        large = auto_large if large is None else large
    models = _models(cfg, inputs)
    only_csd = cfg.replace(detectors=("csd",))
    surfaces, masks = {}, {}
    for label, removed in (("baseline", ()), ("missing_small", (small,)), ("missing_large", (large,))):
        view = csd.mask_observability(case, removed)
        support = range(case.n_branches)  # the blind attack touches every branch
        masks[label] = {"removed": list(removed), "basis_size": len(view.basis),
                        "broken_cycles": list(view.broken),
                        "classification": view.classify(support)}
        rows = _grid(only_csd, inputs, models, view.observed, view.basis, executor)
        surfaces[label] = [r for r in rows if r.detector == "aggregate"]
    return surfaces, masks


def partial_to_csv(surfaces: dict[str, list[MetricRow]], header: str = "") -> str:
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    buf.write("mask,kappa,sigma,precision,recall,f1,class_found\n")
    for label in sorted(surfaces):
        for r in surfaces[label]:
            buf.write(f"{label},{r.kappa!r},{r.sigma!r},{r.precision!r},{r.recall!r},{r.f1!r},"
                      f"{int(r.class_found)}\n")
    return buf.getvalue()


def write_partial(surfaces, masks, cfg: ExperimentConfig, out_dir, force=False) -> list[Path]:
    out = _claim_dir(out_dir, cfg, "partial", force)
    head = _header(cfg)
    (out / "partial.csv").write_text(partial_to_csv(surfaces, head))
    (out / "masks.json").write_text(json.dumps({"header": head, **masks}, indent=2, sort_keys=True) + "\n")
    return [out / "partial.csv", out / "masks.json"]
