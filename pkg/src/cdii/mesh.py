"""Uniform triangulation of the unit square and electrode placement.

Every grid cell is split along its southeast-to-northwest diagonal into a
lower triangle anchored at the cell's southwest corner and an upper triangle
anchored at the northeast corner.  Node numbering is row-major from the
southwest corner of the box; triangles are numbered cell by cell, west to
east then south to north, lower triangle before upper.

All geometry is exact: spacing is ``h = 1/(side_nodes - 1)``, every triangle
has area ``h**2 / 2``, every boundary edge has length ``h``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

SIDES = ("bottom", "right", "top", "left")

#: Tolerance for matching electrode interval endpoints to grid nodes.
ALIGN_TOL = 1e-12

# Constant basis-function gradients, times h, in local vertex order.
# Lower triangles list vertices (SW, SE, NW); upper triangles (NE, SE, NW).
_LOWER_GRADS = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
_UPPER_GRADS = np.array([[1.0, 1.0], [0.0, -1.0], [-1.0, 0.0]])


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Mesh:
    """Uniform right-triangle mesh of the unit square.

    Attributes
    ----------
    side_nodes : int
        Nodes per side; the total node count is ``side_nodes**2``.
    h : float
        Grid spacing, ``1 / (side_nodes - 1)``.
    nodes : ndarray, shape (m, 2)
        Node coordinates, row-major from the southwest corner.
    triangles : ndarray, shape (n_tri, 3)
        Vertex indices in the local order the plane basis functions are
        defined in (lower: SW, SE, NW; upper: NE, SE, NW).
    boundary_edges : ndarray, shape (n_edges, 2)
        Node pairs of the boundary edges, grouped by side in the order
        bottom, right, top, left and oriented along increasing coordinate.
    edge_sides : ndarray of str, shape (n_edges,)
        Side tag of each boundary edge.
    """

    side_nodes: int
    h: float
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_sides: np.ndarray

    @property
    def node_count(self) -> int:
        return self.side_nodes ** 2

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)

    @property
    def triangle_area(self) -> float:
        """Unsigned area shared by every triangle."""
        return self.h * self.h / 2.0

    def nodes_on_side(self, side: str) -> np.ndarray:
        """Node ids along one side, ordered by increasing coordinate."""
        n = self.side_nodes
        if side == "bottom":
            return np.arange(n)
        if side == "top":
            return np.arange(n) + (n - 1) * n
        if side == "left":
            return np.arange(n) * n
        if side == "right":
            return np.arange(n) * n + (n - 1)
        raise ValueError(f"unknown side tag {side!r}")

    def edges_on_side(self, side: str) -> np.ndarray:
        """Indices into ``boundary_edges`` of the edges on one side."""
        if side not in SIDES:
            raise ValueError(f"unknown side tag {side!r}")
        per_side = self.side_nodes - 1
        offset = SIDES.index(side) * per_side
        return np.arange(offset, offset + per_side)

    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges)


@dataclass(frozen=True)
class Electrode:
    """A contiguous run of boundary edges with a constant contact impedance."""

    edge_ids: np.ndarray
    edges: np.ndarray  # (E, 2) node pairs
    impedance: float
    length: float

    def __post_init__(self):
        if len(self.edge_ids) == 0:
            raise ValueError("electrode has no edges (zero surface measure)")
        if not self.impedance > 0.0:
            raise ValueError(f"impedance must be positive, got {self.impedance}")

    def nodes(self) -> np.ndarray:
        return np.unique(self.edges)


@dataclass(frozen=True)
class ElectrodeSetup:
    """The full electrode configuration; holds N+1 disjoint electrodes."""

    electrodes: tuple[Electrode, ...]

    def __post_init__(self):
        if len(self.electrodes) < 2:
            raise ValueError("at least two electrodes are required")
        seen: set[int] = set()
        for k, e in enumerate(self.electrodes):
            ids = set(int(i) for i in e.edge_ids)
            if seen & ids:
                raise ValueError(f"electrode {k} shares boundary edges with another electrode")
            seen |= ids

    @property
    def count(self) -> int:
        return len(self.electrodes)

    @property
    def impedances(self) -> np.ndarray:
        return np.array([e.impedance for e in self.electrodes])

    @property
    def lengths(self) -> np.ndarray:
        return np.array([e.length for e in self.electrodes])


def build_uniform_mesh(side_nodes: int) -> Mesh:
    """Triangulate the unit square with ``side_nodes**2`` nodes.

    Parameters
    ----------
    side_nodes : int
        Grid nodes per side, at least 2.

    Returns
    -------
    Mesh
        ``2 * (side_nodes - 1)**2`` triangles on a grid of spacing
        ``1 / (side_nodes - 1)``.
    """
    if not isinstance(side_nodes, (int, np.integer)) or side_nodes < 2:
        raise ValueError(f"side_nodes must be an integer >= 2, got {side_nodes!r}")
    n = int(side_nodes)
    h = 1.0 / (n - 1)

    ids = np.arange(n * n)
    nodes = np.column_stack([(ids % n) * h, (ids // n) * h])

    cr, cc = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="ij")
    base = (cr * n + cc).ravel()  # SW node of each cell, cell-major west->east
    tri = np.empty((2 * (n - 1) ** 2, 3), dtype=np.int64)
    tri[0::2] = np.column_stack([base, base + 1, base + n])          # lower
    tri[1::2] = np.column_stack([base + n + 1, base + 1, base + n])  # upper

    runs = []
    tags = []
    side_starts = {
        "bottom": np.arange(n),
        "right": np.arange(n) * n + (n - 1),
        "top": np.arange(n) + (n - 1) * n,
        "left": np.arange(n) * n,
    }
    for side in SIDES:
        s = side_starts[side]
        runs.append(np.column_stack([s[:-1], s[1:]]))
        tags.extend([side] * (n - 1))
    boundary_edges = np.vstack(runs)
    edge_sides = np.array(tags)

    return Mesh(
        side_nodes=n,
        h=h,
        nodes=_frozen(nodes),
        triangles=_frozen(tri),
        boundary_edges=_frozen(boundary_edges),
        edge_sides=_frozen(edge_sides),
    )


def basis_gradients(mesh: Mesh, triangle_id: int) -> np.ndarray:
    """Constant gradients of the three plane functions of one triangle.

    Returned in the triangle's local vertex order; they sum to zero since
    the plane functions partition unity.
    """
    if not 0 <= triangle_id < mesh.triangle_count:
        raise ValueError(f"triangle index {triangle_id} out of range")
    pattern = _LOWER_GRADS if triangle_id % 2 == 0 else _UPPER_GRADS
    return pattern / mesh.h


def triangle_gradients(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Per-triangle gradient of the piecewise-linear function with given nodal values."""
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.node_count,):
        raise ValueError(
            f"expected {mesh.node_count} nodal values, got shape {values.shape}"
        )
    grads = np.empty((mesh.triangle_count, 2))
    grads[0::2] = values[mesh.triangles[0::2]] @ (_LOWER_GRADS / mesh.h)
    grads[1::2] = values[mesh.triangles[1::2]] @ (_UPPER_GRADS / mesh.h)
    return grads


def centroids(mesh: Mesh) -> np.ndarray:
    """Triangle centroids, shape (n_tri, 2)."""
    return mesh.nodes[mesh.triangles].mean(axis=1)


def locate_electrodes(
    mesh: Mesh,
    side_spans: Sequence[tuple[str, tuple[float, float]]],
    impedances: Iterable[float],
) -> ElectrodeSetup:
    """Place electrodes on grid-aligned intervals of the boundary.

    Parameters
    ----------
    side_spans : sequence of (side, (lo, hi))
        Coordinate intervals along the named sides.  Endpoints must align
        with grid nodes to within ``ALIGN_TOL`` so boundary integrals of
        piecewise-linear traces stay exact.
    impedances : iterable of float
        Contact impedance of each electrode, positive.

    Raises
    ------
    ValueError
        On misaligned endpoints, overlapping spans, or non-positive
        impedance.
    """
    impedances = list(impedances)
    if len(impedances) != len(side_spans):
        raise ValueError(
            f"{len(side_spans)} spans but {len(impedances)} impedances"
        )
    h = mesh.h
    electrodes = []
    for k, ((side, (lo, hi)), z) in enumerate(zip(side_spans, impedances)):
        if side not in SIDES:
            raise ValueError(f"electrode {k}: unknown side tag {side!r}")
        i_lo, i_hi = round(lo / h), round(hi / h)
        if abs(lo - i_lo * h) > ALIGN_TOL or abs(hi - i_hi * h) > ALIGN_TOL:
            raise ValueError(
                f"electrode {k}: interval ({lo}, {hi}) does not align with the "
                f"grid of spacing {h}"
            )
        if not 0 <= i_lo < i_hi <= mesh.side_nodes - 1:
            raise ValueError(
                f"electrode {k}: interval ({lo}, {hi}) is empty or leaves [0, 1]"
            )
        edge_ids = mesh.edges_on_side(side)[i_lo:i_hi]
        electrodes.append(
            Electrode(
                edge_ids=_frozen(edge_ids.copy()),
                edges=_frozen(mesh.boundary_edges[edge_ids].copy()),
                impedance=float(z),
                length=(i_hi - i_lo) * h,
            )
        )
    return ElectrodeSetup(electrodes=tuple(electrodes))
