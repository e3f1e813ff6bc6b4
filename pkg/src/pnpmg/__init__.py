"""Plug-and-play voltage and frequency control of AC islanded microgrids.

Modules
-------
model      dq-frame DGU, line and microgrid models, topology changes
lmi        a small dense LMI solver (barrier method) and a cvxpy adapter
synthesis  per-DGU controller synthesis (LMI or closed form) and certificates
analysis   global Lyapunov, Laplacian and invariant-set checks
sim        event-driven RK4 simulation, canned scenarios and metrics
cli        the ``pnpmg`` command line tool
"""

from .model import DguParams, GridSpec, LineParams
from .synthesis import Controller, Route, SynthesisOptions, synthesize, synthesize_all, verify_local
from .analysis import Verdict, certify_stability, check_lasalle_sets

__all__ = [
    "DguParams",
    "GridSpec",
    "LineParams",
    "Controller",
    "Route",
    "SynthesisOptions",
    "synthesize",
    "synthesize_all",
    "verify_local",
    "Verdict",
    "certify_stability",
    "check_lasalle_sets",
]
