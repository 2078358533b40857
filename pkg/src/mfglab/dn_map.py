"""Dirichlet-to-Neumann measurement model on full or partial boundaries.

Measurement convention.  All DN data produced here is the first-order
one-sided flux  t(w)_j = (w_j - w_inward) / h  at boundary nodes with a
unique interior neighbor (zero at edges and corners).  With the plain
h^(dim-1) face weights this convention is the exact discrete adjoint of the
interior operator: for discrete solutions m1, m2 of two screened equations
sharing boundary data, and any discrete solution z of the first equation,

    h^dim sum_I (c2 - c1) m2 z  =  - v h^(dim-1) sum_faces (t(m1) - t(m2)) z

holds to solver precision.  Every reconstruction identity in this package
rests on that equality, and it also makes the Galerkin compression of the
linearized DN matrix exactly symmetric.  The second-order one-sided stencil
(field.normal_derivative) remains available for grid-convergence
diagnostics, but is not used for measurements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elliptic import DiscreteOperator
from .errors import ParameterError, SupportViolation
from .field import BoundaryRegion, BoundaryTrace, Grid, ScalarField
from .mfg_forward import MfgCoefficients, NewtonOptions, solve_mfg

SUPPORT_TOL = 1e-12


def flux_trace_values(grid: Grid, w: np.ndarray) -> np.ndarray:
    """First-order outward flux of full node values; zero at edge/corner nodes."""
    b = grid.boundary_nodes
    t = (w[b] - w[grid.inward_node]) / grid.h
    return np.where(grid.face_node_mask, t, 0.0)


def flux_trace(f: ScalarField) -> BoundaryTrace:
    return BoundaryTrace(f.grid, flux_trace_values(f.grid, f.values))


def flux_pairing(grid: Grid, v: float, trace_diff: np.ndarray, z_boundary: np.ndarray):
    """Discrete boundary pairing  -v h^(dim-1) sum_faces trace_diff * z."""
    w = grid.face_pairing_weights()
    return -v * np.sum(w * trace_diff * z_boundary)


@dataclass(frozen=True)
class BoundaryBasis:
    """Face-supported tensor-trigonometric boundary traces, unit sup-norm."""

    grid: Grid
    traces: np.ndarray          # (B, num_boundary)
    labels: tuple               # (axis, side, freqs) per trace

    @property
    def size(self) -> int:
        return self.traces.shape[0]

    def combine(self, coefficients: np.ndarray) -> BoundaryTrace:
        return BoundaryTrace(self.grid, coefficients @ self.traces)

    def gram_condition(self) -> float:
        w = self.grid.boundary_weights
        G = (self.traces * w) @ self.traces.T
        s = np.linalg.svd(G, compute_uv=False)
        return float(s[0] / s[-1])


def trig_basis(grid: Grid, max_freq: int = 4) -> BoundaryBasis:
    """Per face, products over tangential axes of cos(q pi t), q = 0..max_freq.

    Each boundary node is assigned to the face of its priority normal, so the
    face supports partition the boundary and the constant trace lies exactly
    in the span.
    """
    xb = grid.coords[grid.boundary_nodes]
    owner_axis = np.argmax(np.abs(grid.normals), axis=1)
    owner_side = grid.normals[np.arange(grid.num_boundary), owner_axis] > 0
    rows, labels = [], []
    for axis in range(grid.dim):
        for side in (0, 1):
            on = (owner_axis == axis) & (owner_side == bool(side))
            tang = [t for t in range(grid.dim) if t != axis]
            freq_grids = np.meshgrid(*[np.arange(max_freq + 1)] * len(tang), indexing="ij")
            combos = np.stack([f.ravel() for f in freq_grids], axis=1)
            for qs in combos:
                vals = np.zeros(grid.num_boundary)
                prod = np.ones(on.sum())
                for t, q in zip(tang, qs):
                    prod = prod * np.cos(q * np.pi * xb[on, t])
                sup = np.max(np.abs(prod))
                if sup < 1e-14:
                    continue
                vals[on] = prod / sup
                rows.append(vals)
                labels.append((axis, side, tuple(int(q) for q in qs)))
    basis = BoundaryBasis(grid, np.array(rows), tuple(labels))
    if basis.gram_condition() > 1e8:
        raise ParameterError("boundary basis is numerically dependent on this grid")
    return basis


@dataclass(frozen=True)
class DnMatrix:
    """Columns: flux traces of the linearized solves for each basis trace."""

    grid: Grid
    data: np.ndarray            # (num_boundary, B)
    slot: str                   # "u" or "m"

    def apply(self, coefficients: np.ndarray) -> BoundaryTrace:
        return BoundaryTrace(self.grid, self.data @ coefficients)


def linearized_dn_matrix(coeffs: MfgCoefficients, basis: BoundaryBasis,
                         slot: str) -> DnMatrix:
    """DN matrix of the linearization at zero; one factorization, B solves."""
    if slot not in ("u", "m"):
        raise ParameterError("slot must be 'u' or 'm'")
    if basis.grid is not coeffs.grid:
        raise ParameterError("basis and coefficients must share one grid")
    g = coeffs.grid
    c = coeffs.k if slot == "u" else coeffs.r
    op = DiscreteOperator(g, coeffs.v, c.values, None)
    zero_src = np.zeros(g.num_nodes)
    cols = np.empty((g.num_boundary, basis.size))
    for j in range(basis.size):
        w = op.solve(zero_src, basis.traces[j])
        cols[:, j] = flux_trace_values(g, w)
    return DnMatrix(grid=g, data=cols, slot=slot)


def compress(dn: DnMatrix, basis: BoundaryBasis) -> np.ndarray:
    """Galerkin compression G[a, b] = <trace_a, Lambda trace_b> (face weights)."""
    w = dn.grid.face_pairing_weights()
    return (basis.traces * w) @ dn.data


def evaluate_dn(coeffs: MfgCoefficients, f: BoundaryTrace, g: BoundaryTrace,
                opts: NewtonOptions | None = None):
    """Nonlinear DN map: forward solve, then flux traces of u and m."""
    sol = solve_mfg(coeffs, f, g, opts)
    return flux_trace(sol.u), flux_trace(sol.m)


@dataclass(frozen=True)
class PartialDataSpec:
    """Input region U+, measurement region U-, around a direction lambda'."""

    direction: np.ndarray
    eps0: float
    input_region: BoundaryRegion
    measure_region: BoundaryRegion

    def __post_init__(self):
        lam = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(lam) - 1.0) > 1e-12:
            raise ParameterError("lambda' must be a unit vector")
        if not (0.0 < self.eps0 < 0.5):
            raise ParameterError("eps0 must lie in (0, 0.5)")
        object.__setattr__(self, "direction", lam)
        g = self.input_region.grid
        proj = g.normals @ lam
        need_plus = proj > -2.0 * self.eps0
        if np.any(need_plus & ~self.input_region.mask):
            raise ParameterError("U+ must contain {lambda'. nu > -2 eps0}")
        need_minus = (proj > 0.0) & (proj < 2.0 * self.eps0)
        if np.any(need_minus & ~self.measure_region.mask):
            raise ParameterError("U- must contain {0 < lambda'. nu < 2 eps0}")

    @property
    def grid(self) -> Grid:
        return self.input_region.grid


def default_partial_spec(grid: Grid, direction, eps0: float) -> PartialDataSpec:
    """Minimal admissible regions: U+ = {l.nu > -2 eps0}, U- = {l.nu < 2 eps0}.

    The public boundary_region op is restricted to thresholds in [0, 1); the
    neighborhoods here need thresholds +-2 eps0, so the masks are built
    directly from the normal projections.
    """
    lam = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(lam) - 1.0) > 1e-12:
        raise ParameterError("direction must be a unit vector")
    proj = grid.normals @ lam
    u_plus = BoundaryRegion(grid, proj > -2.0 * eps0, direction=lam, eps0=-2.0 * eps0, sign=+1)
    u_minus = BoundaryRegion(grid, proj < 2.0 * eps0, direction=lam, eps0=2.0 * eps0, sign=-1)
    return PartialDataSpec(direction=lam, eps0=eps0,
                           input_region=u_plus, measure_region=u_minus)


def check_support(trace: BoundaryTrace, region: BoundaryRegion, what: str) -> None:
    outside = np.abs(trace.values[~region.mask])
    if outside.size and outside.max() > SUPPORT_TOL:
        raise SupportViolation(
            f"{what} is nonzero (max {outside.max():.2e}) outside the input region")


def evaluate_partial_dn(coeffs: MfgCoefficients, f: BoundaryTrace, g: BoundaryTrace,
                        spec: PartialDataSpec, opts: NewtonOptions | None = None):
    """Full DN evaluation masked to U-; data must be supported in U+."""
    check_support(f, spec.input_region, "f")
    check_support(g, spec.input_region, "g")
    tu, tm = evaluate_dn(coeffs, f, g, opts)
    mask = spec.measure_region.mask
    return (BoundaryTrace(coeffs.grid, np.where(mask, tu.values, 0.0)),
            BoundaryTrace(coeffs.grid, np.where(mask, tm.values, 0.0)))


def save_dn_csv(dn: DnMatrix, path) -> None:
    """CSV layout: row (boundary node), col (basis index), value."""
    with open(path, "w", newline="") as fh:
        fh.write("row,col,value\n")
        B_, B = dn.data.shape
        for i in range(B_):
            for j in range(B):
                fh.write(f"{i},{j},{dn.data[i, j]!r}\n")
