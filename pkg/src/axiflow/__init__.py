"""ALE finite element solver for axisymmetric two-phase incompressible flow.

The solver tracks the fluid interface as a generating curve in the meridian
half-plane, keeps the bulk triangulation fitted to it, and advances the
coupled velocity/pressure/interface system with one of eight time-stepping
schemes (stable or equidistributing, conservative or nonconservative, each
with an exactly volume-preserving variant).
"""

from .errors import (
    AxiflowError,
    DegenerateSegmentError,
    MeshGenerationError,
    PicardError,
    SolverError,
    TimeStepError,
)


def _lazy_api():
    # keep heavy imports (scipy) out of plain `import axiflow`
    from .benchmarks import bubble_setup, droplet_setup
    from .curve import GeneratingCurve
    from .schemes import SchemeConfig, initial_state, run_simulation, step

    return {
        "GeneratingCurve": GeneratingCurve,
        "SchemeConfig": SchemeConfig,
        "initial_state": initial_state,
        "run_simulation": run_simulation,
        "step": step,
        "bubble_setup": bubble_setup,
        "droplet_setup": droplet_setup,
    }


_API_NAMES = {
    "GeneratingCurve",
    "SchemeConfig",
    "initial_state",
    "run_simulation",
    "step",
    "bubble_setup",
    "droplet_setup",
}


def __getattr__(name):
    if name in _API_NAMES:
        return _lazy_api()[name]
    raise AttributeError(f"module 'axiflow' has no attribute {name!r}")


__all__ = [
    "AxiflowError",
    "DegenerateSegmentError",
    "MeshGenerationError",
    "PicardError",
    "SolverError",
    "TimeStepError",
    "GeneratingCurve",
    "SchemeConfig",
    "initial_state",
    "run_simulation",
    "step",
    "bubble_setup",
    "droplet_setup",
]

__version__ = "0.1.0"
