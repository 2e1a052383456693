"""Weighted-gradient functional and the iterative conductivity reconstruction.

Given the interior magnitude ``a`` of one current density field, the
forward solution minimizes

    integral of a |grad v|  +  electrode mismatch penalty  -  current work

over candidates with zero-sum electrode voltages.  The reconstruction loop
alternates a conductivity update ``a / |grad u|`` (clamped to
``[eps, 1/eps]``) with a forward solve, and stops once the per-triangle
gradients settle.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .fem_cem import (
    ConductivityField,
    CurrentPattern,
    ForwardSolution,
    SolverError,
    ZERO_SUM_TOL,
    _check_candidate,
    _check_setup,
    _edge_square_integral,
    solve_forward,
)
from .mesh import ElectrodeSetup, Mesh, triangle_gradients

#: Gradient magnitudes below this floor are treated as degenerate in the
#: conductivity update; the clamp bounds the result anyway.
GRAD_FLOOR = 1e-14


@dataclass(frozen=True)
class InteriorData:
    """Per-triangle current-density magnitude (A/m^2), nonnegative."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ValueError("interior data must be a 1-d array")
        if np.any(v < 0.0):
            raise ValueError("current-density magnitude cannot be negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def essinf(self) -> float:
        """Minimum over triangles; must be positive for reconstruction."""
        return float(self.values.min())


@dataclass(frozen=True)
class ReconstructionConfig:
    epsilon: float
    delta: float
    max_iter: int = 1000
    solver_tol: float = 1e-10

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not self.delta > 0.0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")
        if not self.solver_tol > 0.0:
            raise ValueError(f"solver_tol must be positive, got {self.solver_tol}")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: float
    max_grad_diff: float  # nan for the initial solve
    wall_ms: float


@dataclass(frozen=True)
class ReconstructionResult:
    """Outcome of the iterative reconstruction.

    ``sigma_v`` is the clamped intermediate conductivity ``a / |grad v|``
    built from the final solution ``solution``; it is determined only up to
    a monotone reparameterization of the potential and generally needs the
    boundary-curve calibration step to match the true conductivity.
    """

    sigma_v: ConductivityField
    solution: ForwardSolution
    log: list[IterationRecord] = field(repr=False)
    converged: bool
    iterations: int


def functional_value(mesh: Mesh, data: InteriorData, setup: ElectrodeSetup,
                     currents: CurrentPattern, candidate) -> float:
    """Weighted-gradient functional at a candidate ``(v, V)``, V zero-sum.

    Exact for piecewise-linear candidates: the gradient term is a plain sum
    of ``a * |grad v| * area`` over triangles and the electrode terms use
    closed-form edge quadrature.
    """
    if len(data.values) != mesh.triangle_count:
        raise ValueError("interior data does not match the mesh")
    _check_setup(mesh, setup, currents)
    v, V = _check_candidate(mesh, setup, candidate)
    scale = np.max(np.abs(V)) if len(V) else 0.0
    if abs(V.sum()) > ZERO_SUM_TOL * max(scale, 1e-300):
        raise ValueError("candidate voltages must sum to zero")
    g = triangle_gradients(mesh, v)
    val = float(np.sum(data.values * np.hypot(g[:, 0], g[:, 1]))) * mesh.triangle_area
    for k, e in enumerate(setup.electrodes):
        val += _edge_square_integral(v, V[k], e.edges, mesh.h) / (2.0 * e.impedance)
    val -= float(np.dot(currents.values, V))
    return val


def minimum_value(mesh: Mesh, setup: ElectrodeSetup, solution: ForwardSolution) -> float:
    """Value of the weighted-gradient functional at the forward solution,
    computed from electrode boundary integrals alone:
    ``-1/2 sum_k (1/z_k) integral (u - U_k)^2``."""
    val = 0.0
    for k, e in enumerate(setup.electrodes):
        val += _edge_square_integral(solution.u, solution.U[k], e.edges, mesh.h) \
            / e.impedance
    return -0.5 * val


def clamp_conductivity(data: InteriorData, grad: np.ndarray,
                       epsilon: float) -> ConductivityField:
    """Conductivity update ``clamp(a / |grad u|, eps, 1/eps)``.

    Triangles whose gradient magnitude falls below ``GRAD_FLOOR`` map to
    the upper bound ``1/eps``.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    grad = np.asarray(grad, dtype=float)
    if grad.shape != (len(data.values), 2):
        raise ValueError("gradient field does not match the interior data")
    norm = np.hypot(grad[:, 0], grad[:, 1])
    ratio = data.values / np.maximum(norm, GRAD_FLOOR)
    values = np.clip(ratio, epsilon, 1.0 / epsilon)
    values[norm < GRAD_FLOOR] = 1.0 / epsilon
    return ConductivityField(values)


def should_stop(grad_n: np.ndarray, grad_prev: np.ndarray, delta: float,
                epsilon: float, essinf_a: float) -> bool:
    """Stopping rule of the reconstruction loop.

    Stop once the sup over triangles of the Euclidean norm of the gradient
    change is at or below ``delta * epsilon / essinf_a``; the gradients are
    triangle-constant, so this max is the exact discrete sup-norm.
    Equality stops.
    """
    grad_n = np.asarray(grad_n, dtype=float)
    grad_prev = np.asarray(grad_prev, dtype=float)
    if grad_n.shape != grad_prev.shape:
        raise ValueError("gradient fields have different shapes")
    if not essinf_a > 0.0:
        raise ValueError("essinf of the interior data must be positive")
    diff = np.max(np.hypot(grad_n[:, 0] - grad_prev[:, 0],
                           grad_n[:, 1] - grad_prev[:, 1]))
    return bool(diff <= delta * epsilon / essinf_a)


def reconstruct(mesh: Mesh, data: InteriorData, setup: ElectrodeSetup,
                currents: CurrentPattern, config: ReconstructionConfig) -> ReconstructionResult:
    """Run the fixed-point reconstruction from interior data.

    Starts from unit conductivity, then repeats clamp-update and forward
    solve until the gradient change drops to ``delta * epsilon / essinf(a)``
    or ``max_iter`` is reached.  The per-iteration log records the
    weighted-gradient objective, which is non-increasing along the
    iteration up to solver residual.

    Raises
    ------
    ValueError
        If the interior data is not bounded away from zero.
    SolverError
        If a forward solve fails; the message names the iteration.
    """
    if len(data.values) != mesh.triangle_count:
        raise ValueError("interior data does not match the mesh")
    if not data.essinf > 0.0:
        raise ValueError(
            f"interior data must be bounded away from zero, min is {data.essinf:.3e}"
        )
    essinf_a = data.essinf
    threshold = config.delta * config.epsilon / essinf_a

    t0 = time.perf_counter()
    sol = solve_forward(mesh, ConductivityField(np.ones(mesh.triangle_count)),
                        setup, currents, config.solver_tol)
    log = [IterationRecord(
        iteration=0,
        objective=functional_value(mesh, data, setup, currents, (sol.u, sol.U)),
        max_grad_diff=float("nan"),
        wall_ms=(time.perf_counter() - t0) * 1e3,
    )]

    converged = False
    iterations = 0
    for n in range(1, config.max_iter + 1):
        t0 = time.perf_counter()
        sigma_n = clamp_conductivity(data, sol.grad_u, config.epsilon)
        try:
            new_sol = solve_forward(mesh, sigma_n, setup, currents, config.solver_tol)
        except SolverError as exc:
            raise SolverError(f"iteration {n}: {exc}") from exc
        diff = float(np.max(np.hypot(new_sol.grad_u[:, 0] - sol.grad_u[:, 0],
                                     new_sol.grad_u[:, 1] - sol.grad_u[:, 1])))
        log.append(IterationRecord(
            iteration=n,
            objective=functional_value(mesh, data, setup, currents,
                                       (new_sol.u, new_sol.U)),
            max_grad_diff=diff,
            wall_ms=(time.perf_counter() - t0) * 1e3,
        ))
        sol = new_sol
        iterations = n
        if diff <= threshold:
            converged = True
            break

    return ReconstructionResult(
        sigma_v=clamp_conductivity(data, sol.grad_u, config.epsilon),
        solution=sol,
        log=log,
        converged=converged,
        iterations=iterations,
    )
