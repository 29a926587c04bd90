"""Cycle-space false-data-injection detection for DC power-flow measurements."""

from .case_io import GridCase, load_case
from .dcsim import JacobianH, MeasurementSeries, NoiseModel, build_h
from .graph import CycleBasis, build_graph, fundamental_cycle_basis, minimum_cycle_basis

__all__ = [
    "GridCase",
    "load_case",
    "JacobianH",
    "MeasurementSeries",
    "NoiseModel",
    "build_h",
    "CycleBasis",
    "build_graph",
    "fundamental_cycle_basis",
    "minimum_cycle_basis",
]
