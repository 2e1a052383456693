"""Complete electrode model (CEM) forward solver on the unit square.

The discrete problem couples the nodal potential with the electrode
voltages.  With electrode voltages constrained to sum to zero, the last
voltage is eliminated and the remaining unknowns solve the symmetric
positive definite block system

    [ Lambda  Psi     ] [ u ]   [ 0         ]
    [ Psi^T   Upsilon ] [ U ] = [ I_k - I_N ]

where Lambda carries the conductivity stiffness plus electrode trace mass,
Psi couples nodes to voltages, and Upsilon is the voltage block.  All
electrode boundary integrals of products of linear traces are evaluated in
closed form (edge mass matrix h/6 * [[2, 1], [1, 2]]), so no quadrature
error enters the electrode terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import ElectrodeSetup, Mesh, triangle_gradients

#: Default relative-residual tolerance of the linear solve.
DEFAULT_SOLVER_TOL = 1e-10

#: Relative tolerance for the zero-sum current / voltage invariants.
ZERO_SUM_TOL = 1e-12

# Element stiffness pattern: area * (grad_i . grad_j) is h-independent and
# identical for lower and upper triangles in their local vertex orders.
_STIFF = 0.5 * np.array([[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])


class SolverError(RuntimeError):
    """Linear solve failed to meet the residual contract."""


@dataclass(frozen=True)
class ConductivityField:
    """Piecewise-constant conductivity, one positive value per triangle (S/m)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ValueError("conductivity values must be a 1-d array")
        if not np.all(v > 0.0):
            raise ValueError("conductivity must be positive on every triangle")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class CurrentPattern:
    """Net injected currents (A), one per electrode, summing to zero."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or len(v) < 2:
            raise ValueError("need one current per electrode (at least two)")
        scale = np.max(np.abs(v))
        if abs(v.sum()) > ZERO_SUM_TOL * scale:
            raise ValueError(
                f"currents must sum to zero; got sum {v.sum():.3e} at scale {scale:.3e}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class ForwardSolution:
    """Nodal potential, electrode voltages on the zero-sum hyperplane, and
    the derived per-triangle potential gradient."""

    u: np.ndarray
    U: np.ndarray
    grad_u: np.ndarray

    def __post_init__(self):
        for name in ("u", "U", "grad_u"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        scale = np.max(np.abs(self.U)) if len(self.U) else 0.0
        if scale > 0.0 and abs(self.U.sum()) > ZERO_SUM_TOL * scale:
            raise ValueError("electrode voltages must sum to zero")


@dataclass(frozen=True)
class BlockSystem:
    """Assembled blocks of the discrete CEM system."""

    Lambda: sp.csr_matrix
    Psi: np.ndarray
    Upsilon: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        d = sp.csr_matrix(self.Lambda - self.Lambda.T)
        scale = max(np.max(np.abs(self.Lambda.data)), 1.0)
        if d.nnz and np.max(np.abs(d.data)) > 1e-13 * scale:
            raise ValueError("stiffness block lost symmetry during assembly")

    def full_matrix(self) -> sp.csc_matrix:
        """The symmetric block matrix of the eliminated-voltage system."""
        return sp.bmat(
            [
                [self.Lambda, sp.csr_matrix(self.Psi)],
                [sp.csr_matrix(self.Psi.T), sp.csr_matrix(self.Upsilon)],
            ],
            format="csc",
        )


def _check_setup(mesh: Mesh, setup: ElectrodeSetup, currents: CurrentPattern) -> None:
    if len(currents.values) != setup.count:
        raise ValueError(
            f"{len(currents.values)} currents for {setup.count} electrodes"
        )
    n_edges = len(mesh.boundary_edges)
    for k, e in enumerate(setup.electrodes):
        if np.any(e.edge_ids < 0) or np.any(e.edge_ids >= n_edges):
            raise ValueError(f"electrode {k} references edges outside the mesh")


def _check_problem(mesh: Mesh, sigma: ConductivityField,
                   setup: ElectrodeSetup, currents: CurrentPattern) -> None:
    if len(sigma.values) != mesh.triangle_count:
        raise ValueError(
            f"conductivity has {len(sigma.values)} values for "
            f"{mesh.triangle_count} triangles"
        )
    _check_setup(mesh, setup, currents)


def _check_candidate(mesh: Mesh, setup: ElectrodeSetup, candidate) -> tuple[np.ndarray, np.ndarray]:
    u, U = candidate
    u = np.asarray(u, dtype=float)
    U = np.asarray(U, dtype=float)
    if u.shape != (mesh.node_count,):
        raise ValueError(f"candidate potential has shape {u.shape}, "
                         f"expected ({mesh.node_count},)")
    if U.shape != (setup.count,):
        raise ValueError(f"candidate voltages have shape {U.shape}, "
                         f"expected ({setup.count},)")
    return u, U


def _edge_square_integral(u: np.ndarray, U_k: float, edges: np.ndarray, h: float) -> float:
    """Exact integral of (u - U_k)^2 over an electrode's edges."""
    wp = u[edges[:, 0]] - U_k
    wq = u[edges[:, 1]] - U_k
    return float(np.sum(wp * wp + wp * wq + wq * wq)) * h / 3.0


def _edge_bilinear_integral(u: np.ndarray, U_k: float, v: np.ndarray, V_k: float,
                            edges: np.ndarray, h: float) -> float:
    """Exact integral of (u - U_k)(v - V_k) over an electrode's edges."""
    ap = u[edges[:, 0]] - U_k
    aq = u[edges[:, 1]] - U_k
    bp = v[edges[:, 0]] - V_k
    bq = v[edges[:, 1]] - V_k
    return float(np.sum(2.0 * ap * bp + ap * bq + aq * bp + 2.0 * aq * bq)) * h / 6.0


def assemble_system(mesh: Mesh, sigma: ConductivityField, setup: ElectrodeSetup,
                    currents: CurrentPattern) -> BlockSystem:
    """Assemble the discrete CEM block system.

    The stiffness block is the conductivity-weighted gradient inner product
    plus the electrode trace mass; the coupling block subtracts each
    electrode's single-basis edge integrals from the last electrode's; the
    voltage block is ``|e_N|/z_N + diag(|e_j|/z_j)``, the symmetric form
    obtained by eliminating the last voltage from the zero-sum constraint.
    """
    _check_problem(mesh, sigma, setup, currents)
    m = mesh.node_count
    N = setup.count - 1
    tri = mesh.triangles
    h = mesh.h

    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            rows.append(tri[:, i])
            cols.append(tri[:, j])
            vals.append(sigma.values * _STIFF[i, j])
    for e in setup.electrodes:
        p, q = e.edges[:, 0], e.edges[:, 1]
        c = h / (6.0 * e.impedance)
        rows += [p, q, p, q]
        cols += [p, q, q, p]
        vals += [np.full(len(p), 2.0 * c), np.full(len(p), 2.0 * c),
                 np.full(len(p), c), np.full(len(p), c)]
    Lam = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m, m),
    ).tocsr()

    # Per-node single-basis edge integrals, h/2 per incident electrode edge.
    w = np.zeros((N + 1, m))
    for k, e in enumerate(setup.electrodes):
        np.add.at(w[k], e.edges[:, 0], h / 2.0)
        np.add.at(w[k], e.edges[:, 1], h / 2.0)

    z = setup.impedances
    length = setup.lengths
    Psi = np.empty((m, N))
    for k in range(N):
        Psi[:, k] = w[N] / z[N] - w[k] / z[k]
    Upsilon = np.full((N, N), length[N] / z[N]) + np.diag(length[:N] / z[:N])

    rhs = np.zeros(m + N)
    rhs[m:] = currents.values[:N] - currents.values[N]
    return BlockSystem(Lambda=Lam, Psi=Psi, Upsilon=Upsilon, rhs=rhs)


def solve_forward(mesh: Mesh, sigma: ConductivityField, setup: ElectrodeSetup,
                  currents: CurrentPattern,
                  solver_tol: float = DEFAULT_SOLVER_TOL) -> ForwardSolution:
    """Solve the forward problem for the nodal potential and electrode voltages.

    The sparse system is factorized directly and the solution is accepted
    only if the relative residual is at most ``solver_tol``; one step of
    iterative refinement is attempted before giving up.  Deterministic for
    identical inputs.

    Raises
    ------
    SolverError
        If the residual contract cannot be met.
    """
    system = assemble_system(mesh, sigma, setup, currents)
    M = system.full_matrix()
    b = system.rhs
    lu = spla.splu(M)
    x = lu.solve(b)

    b_norm = np.linalg.norm(b)
    res = np.linalg.norm(M @ x - b)
    if b_norm > 0.0 and res > solver_tol * b_norm:
        x = x + lu.solve(b - M @ x)
        res = np.linalg.norm(M @ x - b)
        if res > solver_tol * b_norm:
            raise SolverError(
                f"linear solve stalled at relative residual {res / b_norm:.3e} "
                f"(tolerance {solver_tol:.1e})"
            )

    m = mesh.node_count
    N = setup.count - 1
    u = x[:m]
    U = np.empty(N + 1)
    U[:N] = x[m:]
    U[N] = -np.sum(U[:N])
    return ForwardSolution(u=u, U=U, grad_u=triangle_gradients(mesh, u))


def energy_value(mesh: Mesh, sigma: ConductivityField, setup: ElectrodeSetup,
                 currents: CurrentPattern, candidate) -> float:
    """Quadratic energy of the forward problem at a candidate ``(u, U)``.

    Half the conductivity-weighted Dirichlet integral, plus half the
    impedance-weighted electrode mismatch, minus the work of the injected
    currents.  Exact for piecewise-linear candidates.
    """
    _check_problem(mesh, sigma, setup, currents)
    u, U = _check_candidate(mesh, setup, candidate)
    g = triangle_gradients(mesh, u)
    val = 0.5 * float(np.sum(sigma.values * (g[:, 0] ** 2 + g[:, 1] ** 2))) * mesh.triangle_area
    for k, e in enumerate(setup.electrodes):
        val += _edge_square_integral(u, U[k], e.edges, mesh.h) / (2.0 * e.impedance)
    val -= float(np.dot(currents.values, U))
    return val


def energy_derivative(mesh: Mesh, sigma: ConductivityField, setup: ElectrodeSetup,
                      currents: CurrentPattern, at, direction) -> float:
    """Directional (Gateaux) derivative of the energy at ``at`` along ``direction``.

    The energy is quadratic, so this equals the central difference
    ``(E(at + t d) - E(at - t d)) / 2t`` for any step ``t`` up to roundoff.
    The direction's voltage part is expected on the zero-sum hyperplane.
    """
    _check_problem(mesh, sigma, setup, currents)
    u, U = _check_candidate(mesh, setup, at)
    v, V = _check_candidate(mesh, setup, direction)
    gu = triangle_gradients(mesh, u)
    gv = triangle_gradients(mesh, v)
    val = float(np.sum(sigma.values * (gu[:, 0] * gv[:, 0] + gu[:, 1] * gv[:, 1]))) \
        * mesh.triangle_area
    for k, e in enumerate(setup.electrodes):
        val += _edge_bilinear_integral(u, U[k], v, V[k], e.edges, mesh.h) / e.impedance
    val -= float(np.dot(currents.values, V))
    return val


def electrode_flux(mesh: Mesh, setup: ElectrodeSetup, solution: ForwardSolution,
                   k: int) -> float:
    """Discrete current through electrode ``k`` via the Robin identity.

    Integrates ``(U_k - u) / z_k`` over the electrode with exact edge
    quadrature; for a converged forward solution this reproduces the
    injected current.
    """
    if not 0 <= k < setup.count:
        raise ValueError(f"electrode index {k} out of range")
    e = setup.electrodes[k]
    mid = 0.5 * (solution.u[e.edges[:, 0]] + solution.u[e.edges[:, 1]])
    return float(np.sum(solution.U[k] - mid)) * mesh.h / e.impedance


def interior_current(mesh: Mesh, sigma: ConductivityField,
                     solution: ForwardSolution) -> tuple[np.ndarray, np.ndarray]:
    """Per-triangle current density ``J = -sigma grad u`` and magnitude ``a``."""
    if len(sigma.values) != mesh.triangle_count:
        raise ValueError("conductivity does not match the mesh")
    if solution.grad_u.shape != (mesh.triangle_count, 2):
        raise ValueError("solution gradients do not match the mesh")
    J = -sigma.values[:, None] * solution.grad_u
    a = sigma.values * np.hypot(solution.grad_u[:, 0], solution.grad_u[:, 1])
    return J, a


def max_principle_excess(mesh: Mesh, setup: ElectrodeSetup,
                         solution: ForwardSolution) -> float:
    """How far the potential's range off the electrodes leaves its range on them.

    The continuum potential attains its extrema on the electrode closures;
    the discrete scheme is not guaranteed monotone, so this is a diagnostic:
    nonpositive means the discrete solution honors the principle, a positive
    value is the worst overshoot (in V).
    """
    electrode_nodes = np.unique(np.concatenate([e.nodes() for e in setup.electrodes]))
    mask = np.zeros(mesh.node_count, dtype=bool)
    mask[electrode_nodes] = True
    if mask.all():
        return 0.0
    u = solution.u
    over = float(u[~mask].max() - u[mask].max())
    under = float(u[mask].min() - u[~mask].min())
    return max(over, under)
