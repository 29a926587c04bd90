"""Generalization error of null-vector estimates: closed forms and Monte-Carlo checks.

The closed form is ``sigma^2 (1 + rank / (T_o - n))`` where ``n = rank + 1`` is
the column count of a Jacobian whose rank is one short of full (the slack
column included). For a single cycle of length ``|c|`` the measurement block
has rank ``|c| - 1``, so ``n = |c|``; for the reduced Jacobian of a connected
grid ``n`` is the number of buses.
"""

from __future__ import annotations

import io
from concurrent.futures import Executor
from dataclasses import dataclass

import numpy as np

from .case_io import GridCase
from .dcsim import JacobianH, build_h
from .graph import (
    CycleBasis,
    build_graph,
    fundamental_cycle_basis,
    minimum_cycle_basis,
    random_spanning_tree,
)

__all__ = [
    "GenErrorEstimate",
    "MonteCarloConfig",
    "egen_closed_form",
    "cycle_egen",
    "cycle_basis_egen",
    "egen_monte_carlo",
    "first_order_err",
    "err_covariance_check",
    "CovarianceCheck",
    "BasisRow",
    "mcb_optimality_experiment",
    "estimates_to_csv",
    "basis_rows_to_csv",
    "smallest_left_singular",
]

DEFAULT_SIGMAS = (0.01, 0.02, 0.05, 0.1, 0.5, 1.0)


@dataclass(frozen=True)
class GenErrorEstimate:
    sigma: float
    t_o: int
    rank_h: int
    n: int
    e_gen_closed: float
    e_gen_empirical: float
    std_err: float
    trials: int
    seed: int

    @property
    def rel_dev(self) -> float:
        return abs(self.e_gen_empirical - self.e_gen_closed) / self.e_gen_closed


@dataclass(frozen=True)
class MonteCarloConfig:
    trials: int = 100
    t_star: int = 1000
    sigmas: tuple[float, ...] = DEFAULT_SIGMAS
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1 or self.t_star < 1:
            raise ValueError("trials and t_star must be >= 1")
        if not self.sigmas or any(s <= 0 for s in self.sigmas):
            raise ValueError("sigma grid must be nonempty and positive")
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))


def egen_closed_form(sigma: float, rank_h: int, t_o: int, n: int) -> float:
    if t_o <= n:
        raise ValueError(f"need t_o > n (t_o={t_o}, n={n})")
    return sigma**2 * (1.0 + rank_h / (t_o - n))


def cycle_egen(length: int, t_o: int, sigma: float) -> float:
    return egen_closed_form(sigma, length - 1, t_o, length)


def cycle_basis_egen(basis: CycleBasis | list[int], t_o: int, sigma: float) -> float:
    """Sum of per-cycle closed-form errors; depends only on the cycle lengths."""
    lengths = basis.lengths if isinstance(basis, CycleBasis) else [int(v) for v in basis]
    if lengths and t_o <= max(lengths):
        raise ValueError(f"need t_o > longest cycle ({max(lengths)})")
    return float(sum(cycle_egen(c, t_o, sigma) for c in lengths))


def _matrix(h) -> np.ndarray:
    return h.matrix if isinstance(h, JacobianH) else np.asarray(h, dtype=float)


def smallest_left_singular(Z: np.ndarray) -> np.ndarray:
    """Unit direction minimising ``||Z^T n||``; largest-magnitude entry made positive."""
    w, V = np.linalg.eigh(Z @ Z.T)
    n = V[:, 0]
    return n if n[np.argmax(np.abs(n))] > 0 else -n


def _trial_error(H, sigma, t_o, t_star, rng):
    m, k = H.shape
    X = rng.standard_normal((k, t_o + t_star))
    Z = H @ X + sigma * rng.standard_normal((m, t_o + t_star))
    n_hat = smallest_left_singular(Z[:, :t_o])
    return float(np.sum((n_hat @ Z[:, t_o:]) ** 2) / t_star)


def _run_trials(fn, args, trials, executor):
    if executor is None:
        return np.array([fn(*args, t) for t in range(trials)])
    return np.array(list(executor.map(fn, *zip(*[(*args, t) for t in range(trials)]))))


def _egen_trial(H, sigma, t_o, t_star, seed, k, trial):
    rng = np.random.default_rng([seed, 0xE6E, k, trial])
    return _trial_error(H, sigma, t_o, t_star, rng)


def egen_monte_carlo(h, cfg: MonteCarloConfig, t_o: int, n: int | None = None,
                     executor: Executor | None = None) -> list[GenErrorEstimate]:
    """Empirical generalization error of the global smallest-singular-direction fit.

    Each trial draws isotropic states, a training set of ``t_o`` samples and a
    test set of ``cfg.t_star`` samples. Trial ``i`` at grid point ``k`` uses the
    substream ``[seed, k, i]``, so passing an executor gives the serial result.
    """
    H = _matrix(h)
    rank = int(np.linalg.matrix_rank(H))
    if H.shape[0] - rank < 1:
        raise ValueError("nullity of H^T is zero (tree graph): no null vector to estimate")
    n = rank + 1 if n is None else int(n)
    out = []
    for k, sigma in enumerate(cfg.sigmas):
        closed = egen_closed_form(sigma, rank, t_o, n)
        vals = _run_trials(_egen_trial, (H, sigma, t_o, cfg.t_star, cfg.seed, k), cfg.trials, executor)
        se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
        out.append(GenErrorEstimate(sigma, t_o, rank, n, closed, float(vals.mean()), se,
                                    cfg.trials, cfg.seed))
    return out


def first_order_err(h, states: np.ndarray, noise: np.ndarray, n_true: np.ndarray) -> np.ndarray:
    """First-order null-vector error ``-(Zbar^T)^+ E^T n`` with ``Zbar = H states``."""
    H = _matrix(h)
    states = np.asarray(states, dtype=float)
    E = np.asarray(noise, dtype=float)
    if states.shape[0] != H.shape[1] or E.shape != (H.shape[0], states.shape[1]):
        raise ValueError("states must be k x T and noise m x T for an m x k Jacobian")
    if n_true.shape != (H.shape[0],):
        raise ValueError("n_true must have length m")
    Zbar = H @ states
    return -np.linalg.pinv(Zbar.T) @ (E.T @ n_true)


@dataclass(frozen=True)
class CovarianceCheck:
    empirical: np.ndarray
    closed: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    trials: int

    @property
    def rel_err(self) -> float:
        return float(np.linalg.norm(self.empirical - self.closed) / np.linalg.norm(self.closed))


def _null_vector(H):
    U = np.linalg.svd(H, full_matrices=True)[0]
    rank = np.linalg.matrix_rank(H)
    if rank == H.shape[0]:
        raise ValueError("nullity of H^T is zero")
    return U[:, rank]


def err_covariance_check(h, t_o: int, sigma: float, trials: int, seed: int = 0,
                         n_true: np.ndarray | None = None) -> CovarianceCheck:
    """Sample covariance of the first-order error against ``sigma^2/(T_o-n) (H H^T)^+``."""
    H = _matrix(h)
    m, k = H.shape
    rank = int(np.linalg.matrix_rank(H))
    n = rank + 1
    if t_o <= n:
        raise ValueError(f"need t_o > n (t_o={t_o}, n={n})")
    nt = _null_vector(H) if n_true is None else np.asarray(n_true, dtype=float)
    errs = np.empty((trials, m))
    for i in range(trials):
        rng = np.random.default_rng([seed, 0xC0F, i])
        X = rng.standard_normal((k, t_o))
        E = sigma * rng.standard_normal((m, t_o))
        errs[i] = first_order_err(H, X, E, nt)
    mean = errs.mean(axis=0)
    emp = errs.T @ errs / trials  # zero-mean by construction
    closed = sigma**2 / (t_o - n) * np.linalg.pinv(H @ H.T)
    return CovarianceCheck(emp, closed, mean, errs.std(axis=0, ddof=1), trials)


# ------------------------------------------------------------ basis choice


@dataclass(frozen=True)
class BasisRow:
    label: str
    kind: str
    total_length: int
    closed: float
    empirical: float
    std_err: float
    lengths: tuple[int, ...]


def mcb_optimality_experiment(case: GridCase, t_o: int, sigma: float, trials: int,
                              seed: int = 0, n_random: int = 100, t_star: int = 1000
                              ) -> list[BasisRow]:
    """Compare the minimum cycle basis with random fundamental bases.

    The first row is the MCB. Every basis is scored on the same trial data
    (common random numbers); a basis's empirical value is the sum over its
    cycles of the per-cycle generalization error.
    """
    g = build_graph(case)
    H = build_h(case).matrix
    m, k = H.shape
    rng = np.random.default_rng([seed, 0xB45])
    bases = [("mcb", minimum_cycle_basis(g))]
    for i in range(n_random):
        bases.append((f"fundamental_{i}", fundamental_cycle_basis(g, random_spanning_tree(g, rng))))
    longest = max(max(b.lengths) for _, b in bases)
    if t_o <= longest:
        raise ValueError(f"need t_o > longest cycle ({longest})")

    keys = {}
    for _, b in bases:
        for c in b:
            keys.setdefault(tuple(sorted(c.edge_ids)), len(keys))
    supports = [list(s) for s in keys]
    per_cycle = np.empty((trials, len(supports)))
    for t in range(trials):
        r = np.random.default_rng([seed, 0xB46, t])
        X = r.standard_normal((k, t_o + t_star))
        Z = H @ X + sigma * r.standard_normal((m, t_o + t_star))
        G_tr = Z[:, :t_o] @ Z[:, :t_o].T
        G_te = Z[:, t_o:] @ Z[:, t_o:].T / t_star
        for j, s in enumerate(supports):
            w, V = np.linalg.eigh(G_tr[np.ix_(s, s)])
            v = V[:, 0]
            per_cycle[t, j] = v @ G_te[np.ix_(s, s)] @ v

    rows = []
    for label, b in bases:
        cols = [keys[tuple(sorted(c.edge_ids))] for c in b]
        tot = per_cycle[:, cols].sum(axis=1)
        se = float(tot.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
        rows.append(BasisRow(label, b.kind, b.total_length, cycle_basis_egen(b, t_o, sigma),
                             float(tot.mean()), se, tuple(b.lengths)))
    return rows


# ------------------------------------------------------------------ output


def estimates_to_csv(estimates: list[GenErrorEstimate], header: str = "") -> str:
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    buf.write("sigma,t_o,rank,closed,empirical,rel_dev,trials,seed\n")
    for e in estimates:
        buf.write(f"{e.sigma!r},{e.t_o},{e.rank_h},{e.e_gen_closed!r},{e.e_gen_empirical!r},"
                  f"{e.rel_dev!r},{e.trials},{e.seed}\n")
    return buf.getvalue()


def basis_rows_to_csv(rows: list[BasisRow], header: str = "") -> str:
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    buf.write("label,kind,total_length,closed,empirical,std_err\n")
    for r in rows:
        buf.write(f"{r.label},{r.kind},{r.total_length},{r.closed!r},{r.empirical!r},{r.std_err!r}\n")
    return buf.getvalue()
