"""Linear elliptic solves with Dirichlet data on the unit-box lattice.

Operator: L w = -v * Lap w - div(w grad U) + c w, discretized with the
5/7-point Laplacian; the divergence term is in flux form with face-averaged
w and centered differences of the potential U, which keeps it the exact
adjoint of the centered transport term used by the forward MFG solver.

Boundary unknowns are eliminated: the interior matrix A_II and the boundary
coupling A_IB are assembled once and can be refactored/reused across many
right-hand sides (the DN-map module exploits this heavily).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NonConvergence, ParameterError, SingularOperator
from .field import BoundaryTrace, Grid, ScalarField

PIVOT_RTOL = 1e-12       # relative pivot threshold flagging a Dirichlet eigenvalue
ITER_BUDGET = 10_000
ITER_TOL = 1e-12
DIRECT_LIMIT_3D = 32     # direct factorization up to this n_cells in 3D


def _drift_coefficients(grid: Grid, drift: np.ndarray):
    """Per-axis neighbor coefficients of -div(w grad U) in flux form."""
    h2 = grid.h ** 2
    I = grid.interior_nodes
    coefs = []
    for a in range(grid.dim):
        jm = grid.neighbors[I, a, 0]
        jp = grid.neighbors[I, a, 1]
        dUp = drift[jp] - drift[I]
        dUm = drift[I] - drift[jm]
        c_p = -dUp / (2.0 * h2)
        c_m = +dUm / (2.0 * h2)
        c_0 = -(dUp - dUm) / (2.0 * h2)
        coefs.append((c_m, c_0, c_p))
    return coefs


class DiscreteOperator:
    """Assembled interior operator with its boundary coupling."""

    def __init__(self, grid: Grid, v: float, c: np.ndarray, drift: np.ndarray | None):
        if v <= 0:
            raise ParameterError("viscosity v must be positive")
        self.grid = grid
        self.v = float(v)
        self.c = np.asarray(c)
        self.drift = None if drift is None else np.asarray(drift)
        self._factor = None
        self._assemble()

    def _assemble(self):
        g = self.grid
        I = g.interior_nodes
        nI = len(I)
        dtype = np.result_type(self.c.dtype, np.float64,
                               self.drift.dtype if self.drift is not None else np.float64)
        h2 = g.h ** 2
        diag = np.full(nI, 2.0 * g.dim * self.v / h2, dtype=dtype) + self.c[I]
        rows, cols, vals = [np.arange(nI)], [np.arange(nI)], [diag]
        brows, bcols, bvals = [], [], []

        drift_coefs = _drift_coefficients(g, self.drift) if self.drift is not None else None
        for a in range(g.dim):
            for d, side in ((0, "m"), (1, "p")):
                nbr = g.neighbors[I, a, d]
                w = np.full(nI, -self.v / h2, dtype=dtype)
                if drift_coefs is not None:
                    c_m, c_0, c_p = drift_coefs[a]
                    w = w + (c_m if d == 0 else c_p)
                into_interior = g.interior_pos[nbr] >= 0
                rows.append(np.flatnonzero(into_interior))
                cols.append(g.interior_pos[nbr[into_interior]])
                vals.append(w[into_interior])
                into_boundary = ~into_interior
                brows.append(np.flatnonzero(into_boundary))
                bcols.append(g.boundary_pos[nbr[into_boundary]])
                bvals.append(w[into_boundary])
            if drift_coefs is not None:
                _, c_0, _ = drift_coefs[a]
                rows.append(np.arange(nI))
                cols.append(np.arange(nI))
                vals.append(c_0.astype(dtype))

        self.A_II = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nI, nI))
        self.A_IB = sp.csr_matrix(
            (np.concatenate(bvals), (np.concatenate(brows), np.concatenate(bcols))),
            shape=(nI, g.num_boundary))

        # M-matrix sanity for the screened Laplacian (no drift, real c >= 0)
        if self.drift is None and not np.iscomplexobj(self.c) and np.all(self.c >= 0):
            if diag.real.min() <= 0:
                raise SingularOperator("screened Laplacian lost diagonal dominance")

    @property
    def is_symmetric(self) -> bool:
        return self.drift is None

    def _direct(self) -> bool:
        g = self.grid
        return g.dim == 2 or g.n_cells <= DIRECT_LIMIT_3D

    def factor(self):
        if self._factor is None:
            try:
                lu = spla.splu(sp.csc_matrix(self.A_II))
            except RuntimeError as exc:  # "Factor is exactly singular"
                raise SingularOperator(str(exc)) from exc
            piv = np.abs(lu.U.diagonal())
            ratio = piv.min() / piv.max()
            if ratio < PIVOT_RTOL:
                raise SingularOperator(
                    f"pivot ratio {ratio:.2e} below {PIVOT_RTOL:.0e}: "
                    "0 is numerically a Dirichlet eigenvalue")
            self._factor = lu
        return self._factor

    def solve_interior(self, rhs: np.ndarray, force_iterative: bool = False) -> np.ndarray:
        """Solve A_II x = rhs for interior values."""
        if self._direct() and not force_iterative:
            lu = self.factor()
            if np.iscomplexobj(rhs) and not np.iscomplexobj(self.A_II.data):
                return lu.solve(rhs.real.copy()) + 1j * lu.solve(rhs.imag.copy())
            return lu.solve(rhs)
        return self._solve_iterative(rhs)

    def _solve_iterative(self, rhs: np.ndarray) -> np.ndarray:
        A = self.A_II
        M = spla.LinearOperator(A.shape, matvec=lambda x: x / A.diagonal())
        solver = spla.cg if (self.is_symmetric and not np.iscomplexobj(A.data)
                             and not np.iscomplexobj(rhs)) else spla.bicgstab
        x, info = solver(A, rhs, rtol=ITER_TOL, atol=0.0, maxiter=ITER_BUDGET, M=M)
        if info != 0:
            raise NonConvergence(f"iterative solve failed (info={info})")
        return x

    def solve(self, source: np.ndarray, dirichlet: np.ndarray,
              force_iterative: bool = False) -> np.ndarray:
        """Full node vector solving L w = source inside, w = dirichlet on the boundary."""
        g = self.grid
        rhs = source[g.interior_nodes] - self.A_IB @ dirichlet
        xI = self.solve_interior(rhs, force_iterative=force_iterative)
        out = np.zeros(g.num_nodes, dtype=np.result_type(xI.dtype, dirichlet.dtype))
        out[g.interior_nodes] = xI
        out[g.boundary_nodes] = dirichlet
        return out

    def apply(self, w: np.ndarray) -> np.ndarray:
        """Interior values of L w (boundary slots left zero)."""
        g = self.grid
        out = np.zeros(g.num_nodes, dtype=np.result_type(w.dtype, self.A_II.dtype))
        out[g.interior_nodes] = self.A_II @ w[g.interior_nodes] + self.A_IB @ w[g.boundary_nodes]
        return out


@dataclass(frozen=True)
class LinearEllipticProblem:
    """-v Lap w - div(w grad U) + c w = source, w = dirichlet on the boundary."""

    v: float
    c: ScalarField
    source: ScalarField
    dirichlet: BoundaryTrace
    drift_potential: ScalarField | None = None

    def __post_init__(self):
        if self.v <= 0:
            raise ParameterError("viscosity v must be positive")
        for f in (self.source, self.dirichlet, self.drift_potential):
            if f is not None and f.grid is not self.c.grid:
                raise ParameterError("all problem fields must share one grid")

    @property
    def grid(self) -> Grid:
        return self.c.grid

    def operator(self) -> DiscreteOperator:
        drift = None if self.drift_potential is None else self.drift_potential.values
        return DiscreteOperator(self.grid, self.v, self.c.values, drift)


def solve_linear(problem: LinearEllipticProblem, operator: DiscreteOperator | None = None,
                 force_iterative: bool = False) -> ScalarField:
    op = operator if operator is not None else problem.operator()
    w = op.solve(problem.source.values, problem.dirichlet.values,
                 force_iterative=force_iterative)
    return ScalarField(problem.grid, w)


def apply_operator(problem: LinearEllipticProblem, w: ScalarField,
                   operator: DiscreteOperator | None = None) -> ScalarField:
    """Interior slots: L w; boundary slots: w - dirichlet."""
    op = operator if operator is not None else problem.operator()
    out = op.apply(w.values)
    g = problem.grid
    out = out.astype(np.result_type(out.dtype, problem.dirichlet.values.dtype))
    out[g.boundary_nodes] = w.values[g.boundary_nodes] - problem.dirichlet.values
    return ScalarField(g, out)


def min_eigen_estimate(problem: LinearEllipticProblem, rtol: float = 1e-4,
                       max_iter: int = 1000) -> float:
    """Smallest eigenvalue of the interior operator by inverse power iteration."""
    if problem.drift_potential is not None:
        raise ParameterError("eigenvalue estimate requires a drift-free operator")
    if np.iscomplexobj(problem.c.values):
        raise ParameterError("eigenvalue estimate requires a real coefficient")
    op = problem.operator()
    A = op.A_II
    lu = op.factor()
    x = np.ones(A.shape[0])
    x /= np.linalg.norm(x)
    lam = float(x @ (A @ x))
    for _ in range(max_iter):
        y = lu.solve(x)
        x = y / np.linalg.norm(y)
        Ax = A @ x
        lam = float(x @ Ax)
        if np.linalg.norm(Ax - lam * x) <= rtol * abs(lam):
            return lam
    raise NonConvergence(f"inverse power iteration exceeded {max_iter} iterations")
