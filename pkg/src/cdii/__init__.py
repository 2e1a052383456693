"""Current density impedance imaging on the unit square.

Forward solves use the complete electrode model; the inverse step
minimizes a weighted gradient functional over CEM-feasible potentials and
a boundary-curve measurement calibrates away the inherent non-uniqueness.
"""

import os as _os


def _cap_threads() -> None:
    # CDII_THREADS caps BLAS pools; must run before numpy spins them up.
    raw = _os.environ.get("CDII_THREADS")
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        return
    if n > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            _os.environ.setdefault(var, str(n))


_cap_threads()

from .calibration import (  # noqa: E402
    BoundaryVoltageTrace,
    PhiMap,
    apply_calibration,
    build_monotone_map,
    collect_pairs,
    side_trace,
)
from .config import ConfigError, PipelineConfig, load_config  # noqa: E402
from .fem_cem import (  # noqa: E402
    BlockSystem,
    ConductivityField,
    CurrentPattern,
    ForwardSolution,
    SolverError,
    assemble_system,
    electrode_flux,
    energy_derivative,
    energy_value,
    interior_current,
    max_principle_excess,
    solve_forward,
)
from .mesh import (  # noqa: E402
    Electrode,
    ElectrodeSetup,
    Mesh,
    SIDES,
    basis_gradients,
    build_uniform_mesh,
    centroids,
    locate_electrodes,
    triangle_gradients,
)
from .phantom import (  # noqa: E402
    add_noise,
    gaussian_phantom,
    simulate_data,
    transform_conductivity,
)
from .weighted_gradient import (  # noqa: E402
    InteriorData,
    IterationRecord,
    ReconstructionConfig,
    ReconstructionResult,
    clamp_conductivity,
    functional_value,
    minimum_value,
    reconstruct,
    should_stop,
)

__version__ = "0.1.0"

__all__ = [
    "BlockSystem",
    "BoundaryVoltageTrace",
    "ConductivityField",
    "ConfigError",
    "CurrentPattern",
    "Electrode",
    "ElectrodeSetup",
    "ForwardSolution",
    "InteriorData",
    "IterationRecord",
    "Mesh",
    "PhiMap",
    "PipelineConfig",
    "ReconstructionConfig",
    "ReconstructionResult",
    "SIDES",
    "SolverError",
    "add_noise",
    "apply_calibration",
    "assemble_system",
    "basis_gradients",
    "build_monotone_map",
    "build_uniform_mesh",
    "centroids",
    "clamp_conductivity",
    "collect_pairs",
    "electrode_flux",
    "energy_derivative",
    "energy_value",
    "functional_value",
    "gaussian_phantom",
    "interior_current",
    "load_config",
    "locate_electrodes",
    "max_principle_excess",
    "minimum_value",
    "reconstruct",
    "should_stop",
    "side_trace",
    "simulate_data",
    "solve_forward",
    "transform_conductivity",
    "triangle_gradients",
]
