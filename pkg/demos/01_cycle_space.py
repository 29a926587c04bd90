"""
Cycles of a grid and the null space of the measurement Jacobian
================================================================

Kirchhoff's voltage law makes angle differences telescope to zero around a
cycle, so every cycle yields a reactance-weighted vector orthogonal to all
noise-free branch flows.
"""

import numpy as np

from cyclespace import build_graph, build_h, load_case, minimum_cycle_basis
from cyclespace.dcsim import NoiseModel, generate_measurements, isotropic_states
from cyclespace.graph import fundamental_cycle_basis, topology_null_space

case = load_case("ieee14")
g = build_graph(case)
print(case.case_name, case.n_buses, "buses,", case.n_branches, "branches, cycle rank", g.cycle_rank())

# the minimum basis is shorter than a BFS fundamental basis
mcb = minimum_cycle_basis(g)
fb = fundamental_cycle_basis(g)
print("MCB lengths", mcb.lengths, "total", mcb.total_length)
print("fundamental lengths", fb.lengths, "total", fb.total_length)

# each column of N is zeta_c * x normalised; it annihilates clean flows
h = build_h(case)
N = topology_null_space(case, mcb)
clean = generate_measurements(h, isotropic_states(h.n_states, 500, seed=0),
                              NoiseModel.homoscedastic(1e-300, h.m), seed=0)
print("max |Z^T N| on clean flows:", np.abs(clean.z.T @ N).max())
print("rank of N:", np.linalg.matrix_rank(N), "= m - n_s =", h.m - h.n_states)
