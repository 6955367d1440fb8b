"""Enumerate every real power-flow solution inside a box, or certify there is none."""
from .bisect import AtlasResult, Certificate, Tolerances, run_atlas
from .caseio import CaseError, Network, load_case, parse_case, scale_load
from .gpfmodel import BoxBounds, BusRegion, RegionSpec, build_gpf, load_region
from .netmatrix import build_admittance, build_quadratic_forms
from .refine import LocateResult, PfSolution, locate_all, newton_refine
from .relax import RelaxKind

__version__ = "0.1.0"

__all__ = [
    "AtlasResult", "BoxBounds", "BusRegion", "CaseError", "Certificate", "LocateResult", "Network",
    "PfSolution", "RegionSpec", "RelaxKind", "Tolerances", "build_admittance", "build_gpf",
    "build_quadratic_forms", "load_case", "load_region", "locate_all", "newton_refine", "parse_case",
    "run_atlas", "scale_load",
]
