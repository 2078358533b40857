"""Grids on the unit box, scalar fields, boundary traces and quadrature.

The domain is [0,1]^dim (dim 2 or 3) sampled on a uniform node lattice with
n_cells cells per axis, h = 1/n_cells.  Nodes are ordered lexicographically
(C order of the multi-index).  Every node is either interior or boundary;
each boundary node carries one outward unit normal.  At edge and corner
nodes the normal of the lexicographically smallest incident face (ordered by
(axis, side)) is used, so the assignment is deterministic.

Volume integrals use tensor-product trapezoid weights, boundary integrals
face-wise trapezoid weights accumulated over all faces a node belongs to.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


def _axis_trapezoid(n: int, h: float) -> np.ndarray:
    w = np.full(n + 1, h)
    w[0] = w[-1] = h / 2.0
    return w


@dataclass(frozen=True)
class Grid:
    """Uniform node lattice on the unit box with boundary classification."""

    dim: int
    n_cells: int
    h: float
    shape: tuple
    num_nodes: int
    coords: np.ndarray          # (num_nodes, dim) node coordinates
    boundary_nodes: np.ndarray  # node indices of boundary nodes
    interior_nodes: np.ndarray  # node indices of interior nodes
    normals: np.ndarray         # (num_boundary, dim) outward unit normals
    boundary_pos: np.ndarray    # node index -> position in boundary list, -1 if interior
    interior_pos: np.ndarray    # node index -> position in interior list, -1 if boundary
    neighbors: np.ndarray       # (num_nodes, dim, 2) node index of -/+ neighbor, -1 off-grid
    volume_weights: np.ndarray  # trapezoid quadrature weights per node
    boundary_weights: np.ndarray    # face-wise trapezoid weights per boundary node
    inward_node: np.ndarray     # per boundary node: unique interior neighbor, -1 for edges/corners
    inward_node2: np.ndarray    # per boundary node: second node along the inward normal
    face_node_mask: np.ndarray  # per boundary node: True when it has a unique interior neighbor

    @property
    def num_boundary(self) -> int:
        return len(self.boundary_nodes)

    @property
    def num_interior(self) -> int:
        return len(self.interior_nodes)

    def face_pairing_weights(self) -> np.ndarray:
        """Plain h^(dim-1) weights on face nodes, zero on edges and corners.

        This is the weight set under which the discrete Green identity for
        flux traces is exact; see dn_map.
        """
        w = np.where(self.face_node_mask, self.h ** (self.dim - 1), 0.0)
        return w


def make_grid(dim: int, n_cells: int) -> Grid:
    """Build the node lattice with classified boundary and normals."""
    if dim not in (2, 3):
        raise ParameterError(f"dim must be 2 or 3, got {dim}")
    if n_cells < 3:
        raise ParameterError(f"n_cells must be at least 3, got {n_cells}")
    n = n_cells
    h = 1.0 / n
    shape = (n + 1,) * dim
    num_nodes = (n + 1) ** dim

    idx = np.indices(shape).reshape(dim, -1).T  # (num_nodes, dim) multi-indices
    coords = idx * h

    on_face_lo = idx == 0
    on_face_hi = idx == n
    is_boundary = (on_face_lo | on_face_hi).any(axis=1)
    boundary_nodes = np.flatnonzero(is_boundary)
    interior_nodes = np.flatnonzero(~is_boundary)

    boundary_pos = np.full(num_nodes, -1, dtype=np.int64)
    boundary_pos[boundary_nodes] = np.arange(len(boundary_nodes))
    interior_pos = np.full(num_nodes, -1, dtype=np.int64)
    interior_pos[interior_nodes] = np.arange(len(interior_nodes))

    # neighbor table; -1 past the lattice edge
    neighbors = np.full((num_nodes, dim, 2), -1, dtype=np.int64)
    strides = np.array([(n + 1) ** (dim - 1 - a) for a in range(dim)])
    flat = np.arange(num_nodes)
    for a in range(dim):
        has_lo = idx[:, a] > 0
        has_hi = idx[:, a] < n
        neighbors[has_lo, a, 0] = flat[has_lo] - strides[a]
        neighbors[has_hi, a, 1] = flat[has_hi] + strides[a]

    # outward normal from the lexicographically smallest incident face (axis, side)
    b_idx = idx[boundary_nodes]
    normals = np.zeros((len(boundary_nodes), dim))
    face_axis = np.full(len(boundary_nodes), -1, dtype=np.int64)
    face_side = np.zeros(len(boundary_nodes), dtype=np.int64)
    remaining = np.ones(len(boundary_nodes), dtype=bool)
    for a in range(dim):
        for side in (0, 1):
            on = b_idx[:, a] == (0 if side == 0 else n)
            take = on & remaining
            normals[take, a] = -1.0 if side == 0 else 1.0
            face_axis[take] = a
            face_side[take] = side
            remaining &= ~take

    # inward nodes along the priority normal (exists for every boundary node)
    inward_node = np.full(len(boundary_nodes), -1, dtype=np.int64)
    inward_node2 = np.full(len(boundary_nodes), -1, dtype=np.int64)
    step = np.where(face_side == 0, strides[face_axis], -strides[face_axis])
    inward_node = boundary_nodes + step
    inward_node2 = boundary_nodes + 2 * step

    # nodes lying on exactly one face have a unique interior neighbor
    face_count = (on_face_lo[boundary_nodes] | on_face_hi[boundary_nodes]).sum(axis=1)
    face_node_mask = face_count == 1

    # face-wise trapezoid boundary weights, accumulated over incident faces
    axis_w = _axis_trapezoid(n, h)
    boundary_weights = np.zeros(len(boundary_nodes))
    for a in range(dim):
        for side in (0, 1):
            on = b_idx[:, a] == (0 if side == 0 else n)
            tang = [t for t in range(dim) if t != a]
            w = np.ones(on.sum())
            for t in tang:
                w *= axis_w[b_idx[on, t]]
            boundary_weights[on] += w

    vol_w = np.ones(num_nodes)
    for a in range(dim):
        vol_w *= axis_w[idx[:, a]]

    return Grid(
        dim=dim, n_cells=n, h=h, shape=shape, num_nodes=num_nodes,
        coords=coords, boundary_nodes=boundary_nodes, interior_nodes=interior_nodes,
        normals=normals, boundary_pos=boundary_pos, interior_pos=interior_pos,
        neighbors=neighbors, volume_weights=vol_w, boundary_weights=boundary_weights,
        inward_node=inward_node, inward_node2=inward_node2, face_node_mask=face_node_mask,
    )


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise ParameterError(f"{what} contains NaN or Inf")


@dataclass(frozen=True)
class ScalarField:
    """One real or complex value per grid node."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (self.grid.num_nodes,):
            raise ParameterError(
                f"field needs {self.grid.num_nodes} values, got shape {v.shape}")
        _check_finite(v, "field")
        object.__setattr__(self, "values", v)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def boundary_values(self) -> np.ndarray:
        return self.values[self.grid.boundary_nodes]

    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.interior_nodes]


@dataclass(frozen=True)
class BoundaryTrace:
    """One value per boundary node."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (self.grid.num_boundary,):
            raise ParameterError(
                f"trace needs {self.grid.num_boundary} values, got shape {v.shape}")
        _check_finite(v, "trace")
        object.__setattr__(self, "values", v)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if len(self.values) else 0.0


@dataclass(frozen=True)
class BoundaryRegion:
    """Subset of boundary nodes, optionally defined by a direction and threshold."""

    grid: Grid
    mask: np.ndarray
    direction: np.ndarray | None = None
    eps0: float | None = None
    sign: int | None = None

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.shape != (self.grid.num_boundary,):
            raise ParameterError("region mask length must equal boundary node count")
        object.__setattr__(self, "mask", m)


def field_from_function(grid: Grid, fn) -> ScalarField:
    """Sample fn(x, y[, z]) at the nodes."""
    cols = [grid.coords[:, a] for a in range(grid.dim)]
    return ScalarField(grid, np.asarray(fn(*cols)) * np.ones(grid.num_nodes))


def constant_field(grid: Grid, value) -> ScalarField:
    return ScalarField(grid, np.full(grid.num_nodes, value))


def trace_from_function(grid: Grid, fn) -> BoundaryTrace:
    xb = grid.coords[grid.boundary_nodes]
    cols = [xb[:, a] for a in range(grid.dim)]
    return BoundaryTrace(grid, np.asarray(fn(*cols)) * np.ones(grid.num_boundary))


def constant_trace(grid: Grid, value) -> BoundaryTrace:
    return BoundaryTrace(grid, np.full(grid.num_boundary, value))


def embed_trace(trace: BoundaryTrace, fill=0.0) -> np.ndarray:
    """Full node vector carrying the trace on boundary nodes."""
    g = trace.grid
    out = np.full(g.num_nodes, fill, dtype=np.result_type(trace.values.dtype, type(fill)))
    out[g.boundary_nodes] = trace.values
    return out


def l2_norm(f: ScalarField) -> float:
    """Trapezoid approximation of the L2(Omega) norm."""
    return float(np.sqrt(np.sum(f.grid.volume_weights * np.abs(f.values) ** 2)))


def l2_norm_values(grid: Grid, values: np.ndarray, mask: np.ndarray | None = None) -> float:
    """L2 norm of raw node values, optionally restricted to a node mask."""
    w = grid.volume_weights
    v2 = np.abs(values) ** 2
    if mask is not None:
        return float(np.sqrt(np.sum(w[mask] * v2[mask])))
    return float(np.sqrt(np.sum(w * v2)))


def boundary_l2_norm(trace: BoundaryTrace) -> float:
    w = trace.grid.boundary_weights
    return float(np.sqrt(np.sum(w * np.abs(trace.values) ** 2)))


def normal_derivative(f: ScalarField) -> BoundaryTrace:
    """Second-order one-sided difference along the outward normal.

    Uses the 3-point stencil through the two nodes inward of each boundary
    node, so linear and quadratic variations along the normal are exact.
    """
    g = f.grid
    v = f.values
    b = g.boundary_nodes
    # derivative along the inward direction, then flip to outward
    d_in = (-3.0 * v[b] + 4.0 * v[g.inward_node] - v[g.inward_node2]) / (2.0 * g.h)
    return BoundaryTrace(g, -d_in)


def boundary_region(grid: Grid, direction, eps0: float, sign: int) -> BoundaryRegion:
    """Boundary nodes with direction . normal > eps0 (+) or < eps0 (-)."""
    lam = np.asarray(direction, dtype=float)
    if lam.shape != (grid.dim,):
        raise ParameterError(f"direction must have {grid.dim} components")
    if abs(np.linalg.norm(lam) - 1.0) > 1e-12:
        raise ParameterError("direction must be a unit vector")
    if not (0.0 <= eps0 < 1.0):
        raise ParameterError("eps0 must lie in [0, 1)")
    if sign not in (+1, -1):
        raise ParameterError("sign must be +1 or -1")
    proj = grid.normals @ lam
    mask = proj > eps0 if sign == +1 else proj < eps0
    return BoundaryRegion(grid, mask, direction=lam, eps0=eps0, sign=sign)


def save_field_csv(f: ScalarField, path) -> None:
    """CSV layout: `# dim,n_cells` header then index,value_re,value_im rows."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# {f.grid.dim},{f.grid.n_cells}\n")
        w = csv.writer(fh)
        vals = np.asarray(f.values, dtype=complex)
        for i in range(f.grid.num_nodes):
            w.writerow([i, repr(float(vals[i].real)), repr(float(vals[i].imag))])


def load_field_csv(path, grid: Grid | None = None) -> ScalarField:
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ParameterError(f"{path}: missing '# dim,n_cells' header")
        dim, n_cells = (int(s) for s in header[1:].split(","))
        if grid is None:
            grid = make_grid(dim, n_cells)
        elif (grid.dim, grid.n_cells) != (dim, n_cells):
            raise ParameterError(f"{path}: grid mismatch ({dim},{n_cells})")
        vals = np.zeros(grid.num_nodes, dtype=complex)
        for row in csv.reader(fh):
            if not row:
                continue
            vals[int(row[0])] = float(row[1]) + 1j * float(row[2])
    if np.allclose(vals.imag, 0.0):
        vals = vals.real
    return ScalarField(grid, vals)
