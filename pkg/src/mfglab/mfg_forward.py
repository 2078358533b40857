"""Newton solver for the coupled stationary mean-field-game system.

    -v Lap u + |grad u|^2 / 2 + k(x) u = F(x, m)      in Omega
    -v Lap m - div(m grad u) + r(x) m  = 0            in Omega
    u = f, m = g                                      on the boundary

The cost function is a truncated power series F(x, z) = sum_i F_i(x) z^i / i!
starting at order 2, so F(x, 0) = dF/dz(x, 0) = 0 and (0, 0) is the exact
solution for zero data.  Newton iteration starts there and uses the exact
Jacobian of the discrete residual: gradients are centered, the transport
term is in flux form with face-averaged m, matching the elliptic assembly.
Small boundary data is the intended regime; outside it the iteration is
allowed to fail loudly rather than be globalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elliptic import DiscreteOperator, _drift_coefficients
from .errors import NonConvergence, ParameterError, SingularOperator
from .field import BoundaryTrace, Grid, ScalarField, embed_trace


@dataclass(frozen=True)
class FSeries:
    """Truncated cost-function series: pairs (order i >= 2, coefficient field)."""

    terms: tuple = ()

    def __post_init__(self):
        orders = [o for o, _ in self.terms]
        if any(o < 2 for o in orders):
            raise ParameterError("cost series starts at order 2")
        if orders != sorted(set(orders)):
            raise ParameterError("cost series orders must be strictly increasing")
        if orders and max(orders) > 6:
            raise ParameterError("cost series truncation order is capped at 6")
        object.__setattr__(self, "terms", tuple(self.terms))

    def coefficient(self, order: int):
        for o, f in self.terms:
            if o == order:
                return f
        return None


@dataclass(frozen=True)
class MfgCoefficients:
    v: float
    k: ScalarField
    r: ScalarField
    F: FSeries = dc_field(default_factory=FSeries)

    def __post_init__(self):
        if self.v <= 0:
            raise ParameterError("viscosity v must be positive")
        for name, f in (("k", self.k), ("r", self.r)):
            if np.iscomplexobj(f.values) or np.min(f.values) < 0:
                raise ParameterError(f"discount field {name} must be real and nonnegative")
        if self.r.grid is not self.k.grid:
            raise ParameterError("k and r must share one grid")
        for _, f in self.F.terms:
            if f.grid is not self.k.grid:
                raise ParameterError("cost coefficients must share the grid of k, r")

    @property
    def grid(self) -> Grid:
        return self.k.grid


@dataclass
class NewtonOptions:
    delta: float = 0.1
    tol: float = 1e-10
    max_iter: int = 20
    require_nonneg_g: bool = False


@dataclass(frozen=True)
class MfgSolution:
    u: ScalarField
    m: ScalarField
    newton_iterations: int
    final_residual: float
    residual_history: tuple


def evaluate_F(F: FSeries, m: ScalarField) -> ScalarField:
    """Pointwise sum of F_i(x) m(x)^i / i! over the stored orders."""
    out = np.zeros(m.grid.num_nodes)
    import math
    for order, coef in F.terms:
        out = out + coef.values * m.values ** order / math.factorial(order)
    return ScalarField(m.grid, out)


def evaluate_dF(F: FSeries, m: ScalarField) -> ScalarField:
    """Pointwise d/dz of the series at z = m(x)."""
    out = np.zeros(m.grid.num_nodes)
    import math
    for order, coef in F.terms:
        out = out + coef.values * m.values ** (order - 1) / math.factorial(order - 1)
    return ScalarField(m.grid, out)


def _laplacian_interior(grid: Grid, w: np.ndarray) -> np.ndarray:
    I = grid.interior_nodes
    out = np.zeros(len(I), dtype=w.dtype)
    for a in range(grid.dim):
        jm = grid.neighbors[I, a, 0]
        jp = grid.neighbors[I, a, 1]
        out += w[jm] + w[jp] - 2.0 * w[I]
    return out / grid.h ** 2


def _centered_gradient_interior(grid: Grid, w: np.ndarray) -> list:
    I = grid.interior_nodes
    return [(w[grid.neighbors[I, a, 1]] - w[grid.neighbors[I, a, 0]]) / (2.0 * grid.h)
            for a in range(grid.dim)]


def flux_divergence_interior(grid: Grid, m: np.ndarray, u: np.ndarray) -> np.ndarray:
    """div(m grad u) at interior nodes, flux form with face-averaged m."""
    I = grid.interior_nodes
    h2 = grid.h ** 2
    out = np.zeros(len(I), dtype=np.result_type(m.dtype, u.dtype))
    for a in range(grid.dim):
        jm = grid.neighbors[I, a, 0]
        jp = grid.neighbors[I, a, 1]
        flux_p = (m[I] + m[jp]) * (u[jp] - u[I])
        flux_m = (m[jm] + m[I]) * (u[I] - u[jm])
        out += (flux_p - flux_m) / (2.0 * h2)
    return out


def _interior_matrix(grid: Grid, per_axis_coefs) -> sp.csr_matrix:
    """Interior-to-interior matrix from (c_minus, c_diag, c_plus) per axis.

    Couplings into boundary nodes are dropped: Newton updates vanish there.
    """
    I = grid.interior_nodes
    nI = len(I)
    rows, cols, vals = [], [], []
    for a, (c_m, c_0, c_p) in enumerate(per_axis_coefs):
        rows.append(np.arange(nI)); cols.append(np.arange(nI)); vals.append(c_0)
        for d, c in ((0, c_m), (1, c_p)):
            nbr = grid.neighbors[I, a, d]
            keep = grid.interior_pos[nbr] >= 0
            rows.append(np.flatnonzero(keep))
            cols.append(grid.interior_pos[nbr[keep]])
            vals.append(np.asarray(c)[keep])
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nI, nI))


def _advection_matrix(grid: Grid, velocity: list) -> sp.csr_matrix:
    """Centered discretization of velocity . grad, interior couplings only."""
    nI = grid.num_interior
    coefs = []
    for a in range(grid.dim):
        g_a = velocity[a]
        coefs.append((-g_a / (2.0 * grid.h), np.zeros(nI), g_a / (2.0 * grid.h)))
    return _interior_matrix(grid, coefs)


def _flux_div_in_m_matrix(grid: Grid, u: np.ndarray) -> sp.csr_matrix:
    """delta m -> -div(delta m grad u) as an interior matrix."""
    return _interior_matrix(grid, _drift_coefficients(grid, u))


def _flux_div_in_u_matrix(grid: Grid, m: np.ndarray) -> sp.csr_matrix:
    """delta u -> -div(m grad delta u) as an interior matrix."""
    I = grid.interior_nodes
    h2 = grid.h ** 2
    coefs = []
    for a in range(grid.dim):
        jm = grid.neighbors[I, a, 0]
        jp = grid.neighbors[I, a, 1]
        mbar_p = (m[I] + m[jp]) / 2.0
        mbar_m = (m[jm] + m[I]) / 2.0
        coefs.append((-mbar_m / h2, (mbar_p + mbar_m) / h2, -mbar_p / h2))
    return _interior_matrix(grid, coefs)


def _interior_residuals(coeffs: MfgCoefficients, u: np.ndarray, m: np.ndarray):
    g = coeffs.grid
    I = g.interior_nodes
    grad_u = _centered_gradient_interior(g, u)
    grad_sq = sum(ga ** 2 for ga in grad_u)
    res_u = (-coeffs.v * _laplacian_interior(g, u) + 0.5 * grad_sq
             + coeffs.k.values[I] * u[I]
             - evaluate_F(coeffs.F, ScalarField(g, m)).values[I])
    res_m = (-coeffs.v * _laplacian_interior(g, m)
             - flux_divergence_interior(g, m, u)
             + coeffs.r.values[I] * m[I])
    return res_u, res_m, grad_u


def mfg_residual(coeffs: MfgCoefficients, u: ScalarField, m: ScalarField,
                 f: BoundaryTrace, g: BoundaryTrace):
    """Residual fields of the coupled system; boundary slots carry u-f, m-g."""
    gr = coeffs.grid
    res_u, res_m, _ = _interior_residuals(coeffs, u.values, m.values)
    out_u = np.zeros(gr.num_nodes)
    out_m = np.zeros(gr.num_nodes)
    out_u[gr.interior_nodes] = res_u
    out_m[gr.interior_nodes] = res_m
    out_u[gr.boundary_nodes] = u.values[gr.boundary_nodes] - f.values
    out_m[gr.boundary_nodes] = m.values[gr.boundary_nodes] - g.values
    return ScalarField(gr, out_u), ScalarField(gr, out_m)


def solve_mfg(coeffs: MfgCoefficients, f: BoundaryTrace, g: BoundaryTrace,
              opts: NewtonOptions | None = None) -> MfgSolution:
    """Newton iteration from (0, 0) with the exact block Jacobian."""
    opts = opts or NewtonOptions()
    gr = coeffs.grid
    if f.sup_norm() + g.sup_norm() > opts.delta:
        raise ParameterError(
            f"boundary data amplitude {f.sup_norm() + g.sup_norm():.3g} exceeds "
            f"the small-data bound delta = {opts.delta}")
    if opts.require_nonneg_g and np.min(g.values) < 0:
        raise ParameterError("boundary datum g must be nonnegative")

    I = gr.interior_nodes
    nI = len(I)
    u = embed_trace(f)
    m = embed_trace(g)
    op_k = DiscreteOperator(gr, coeffs.v, coeffs.k.values, None)
    op_r = DiscreteOperator(gr, coeffs.v, coeffs.r.values, None)

    history = []
    for it in range(opts.max_iter + 1):
        res_u, res_m, grad_u = _interior_residuals(coeffs, u, m)
        resnorm = max(np.max(np.abs(res_u)), np.max(np.abs(res_m)), 0.0)
        history.append(float(resnorm))
        if resnorm <= opts.tol:
            return MfgSolution(
                u=ScalarField(gr, u), m=ScalarField(gr, m),
                newton_iterations=it, final_residual=float(resnorm),
                residual_history=tuple(history))
        if it == opts.max_iter:
            break
        J_uu = op_k.A_II + _advection_matrix(gr, grad_u)
        J_um = sp.diags(-evaluate_dF(coeffs.F, ScalarField(gr, m)).values[I])
        J_mu = _flux_div_in_u_matrix(gr, m)
        J_mm = op_r.A_II + _flux_div_in_m_matrix(gr, u)
        J = sp.bmat([[J_uu, J_um], [J_mu, J_mm]], format="csc")
        rhs = -np.concatenate([res_u, res_m])
        try:
            lu = spla.splu(J)
        except RuntimeError as exc:
            raise SingularOperator(str(exc)) from exc
        delta = lu.solve(rhs)
        if not np.all(np.isfinite(delta)):
            raise NonConvergence("Newton step produced non-finite values")
        u = u.copy(); m = m.copy()
        u[I] += delta[:nI]
        m[I] += delta[nI:]
    raise NonConvergence(
        f"Newton did not reach tol={opts.tol:g} in {opts.max_iter} iterations "
        f"(last residual {history[-1]:.3e}); data may be outside the small-data regime")
