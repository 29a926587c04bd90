"""
How many samples does a null-vector estimate need?
==================================================

The expected squared projection of fresh data onto an estimated null vector
is sigma^2 (1 + rank / (T_o - n)). Short cycles have small rank and need few
samples, which is why the minimum cycle basis is the best choice of basis.
"""

from cyclespace import build_h, load_case
from cyclespace import theory

case = load_case("ieee14")
h = build_h(case)
t_o = 2 * h.m

# global fit: closed form against Monte Carlo
cfg = theory.MonteCarloConfig(trials=100, t_star=1000)
for e in theory.egen_monte_carlo(h, cfg, t_o):
    print(f"sigma={e.sigma:<5g} closed={e.e_gen_closed:.3e} empirical={e.e_gen_empirical:.3e} "
          f"rel_dev={e.rel_dev:.3f}")

# per-basis totals: the MCB has the smallest closed-form value
rows = theory.mcb_optimality_experiment(case, t_o, sigma=0.02, trials=30, n_random=20)
best = min(rows[1:], key=lambda r: r.closed)
print(f"MCB       total length {rows[0].total_length}  closed {rows[0].closed:.4e}  empirical {rows[0].empirical:.4e}")
print(f"best tree total length {best.total_length}  closed {best.closed:.4e}  empirical {best.empirical:.4e}")
