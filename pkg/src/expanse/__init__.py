"""Generalized dynamical balls, slope-constrained warps and entropy estimators
for regular flows on the torus and on shift suspensions.

Submodules load on first attribute access, so importing the package does
not start the JIT runtime.
"""

from importlib import import_module

_EXPORTS = {
    "flows": ["FlowSystem", "TorusPoint", "SuspensionPoint", "BernoulliSymbols",
              "PeriodicSymbols", "SplicedSymbols", "OrbitTrace", "flow_map", "distance",
              "sample_orbit", "theta_for"],
    "reparam": ["Warp", "GammaSignature", "RegularizationError", "slope_class", "invert",
                "compose", "regularize", "gamma_signature"],
    "warp_align": ["BallQuery", "DistanceGrid", "AlignmentVerdict", "build_grid", "feasible",
                   "enumerate_feasible", "min_eps", "ball_membership"],
    "measures": ["EmpiricalMeasure", "ScanReport", "sample_measure", "ball_mass",
                 "pushforward", "expansivity_scan", "tube_inclusion_check"],
    "entropy": ["EntropyEstimate", "CoverResult", "katok_entropy", "brin_katok_curve",
                "brin_katok_rate", "cover_generalized_ball"],
    "cli": ["ExperimentConfig", "validate", "run"],
}
_OWNER = {name: mod for mod, names in _EXPORTS.items() for name in names}
__all__ = sorted(_OWNER)


def __getattr__(name):
    if name in _OWNER:
        return getattr(import_module(f".{_OWNER[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
