"""Simulation of a driven, monitored three-level system.

Monte Carlo trajectories with inefficient photodetection, the hybrid
Liouvillians that describe their post-selected averages, and spectral tools
for locating exceptional points of those generators.
"""
from .linalg import EigenDecomposition, EigenSolverError, MatrixExpOverflow, eig_general, matrix_exp, rk4_evolve
from .model import (
    SystemParams,
    KrausSet,
    build_kraus_set,
    build_generator,
    build_lindblad,
    build_hybrid_nj,
    build_hybrid_j,
    build_h_eff,
    vectorize,
    unvectorize,
    projector,
)
from .trajectory import PostSelect, TrajectoryConfig, EnsembleStats, run_trajectory, run_ensemble
from .spectral import (
    BiorthogonalSystem,
    EPReport,
    SpectrumSweep,
    biorthogonal_decompose,
    spectral_evolve,
    sweep_spectrum,
    detect_eps,
    coherence_time,
    ep_of_heff,
)

__version__ = "0.1.0"
