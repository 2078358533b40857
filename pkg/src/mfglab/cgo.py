"""Complex geometrical optics solutions of (-v Lap + c) z = 0 and the
least-squares Runge approximation used to replace them by admissible data.

A CGO field is z = e^{s(i psi + phi)/h}(a + b) with phi = lambda . x,
psi = eta . x, s = +-1, {lambda, eta} orthonormal, and amplitude a = 1 or
a = e^{i x . xi} with xi completing an orthogonal triplet (dimension 3).

Construction.  The continuum exponent vector rho = s(lambda + i eta)/h is
null (rho . rho = 0), which makes e^{rho . x} annihilate the Laplacian; the
7-point stencil has a slightly different symbol, so rho is first corrected
by a complex Newton iteration to satisfy the DISCRETE dispersion relation
   sum_a 2 (cosh(rho_a h_mesh) - 1) / h_mesh^2 = 0.
A plane-wave amplitude is folded into the exponent (rho + i xi, then
corrected), so the phase times the amplitude is an exact discrete mode of
-Lap and the remainder responds only to c.

The remainder itself is the MINIMAL-NORM solution of the interior
equations: minimize ||b||_L2 subject to the assembled field satisfying the
discrete screened equation at every interior node, with the boundary values
of b left free (pinned to -1 on the shadowed region for the vanishing
variant).  Pinning b = 0 on the whole boundary instead would contaminate
||b|| with exponentially amplified far-field response and destroy the decay
in h; the free-boundary minimal-norm solve is the discrete counterpart of
the functional-analytic construction and makes the decay measurable.  The
assembled field satisfies the discrete equation to solver precision either
way.

Exponentials are stored peak-normalized: the true field is
assembled * e^{scale_log}; downstream pairings recombine the scalar
exponents algebraically, so no intermediate overflow occurs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dn_map import trig_basis
from .elliptic import DiscreteOperator
from .errors import AmplitudeInvalid, NonConvergence, ParameterError, RankDeficient
from .field import (
    BoundaryRegion, BoundaryTrace, Grid, ScalarField, l2_norm, l2_norm_values,
)

ORTH_TOL = 1e-12
AMPLITUDE_TOL = 1e-8
# phase wavelength 2 pi h must span >= 10 mesh cells, else decay is spurious
RESOLUTION_FACTOR = 10.0


def min_resolved_h(grid: Grid) -> float:
    return RESOLUTION_FACTOR * grid.h / (2.0 * np.pi)


@dataclass(frozen=True)
class CgoParams:
    lam: np.ndarray
    eta: np.ndarray
    xi: np.ndarray
    h: float
    sign: int

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        eta = np.asarray(self.eta, dtype=float)
        xi = np.asarray(self.xi, dtype=float)
        if lam.shape != (3,) or eta.shape != (3,) or xi.shape != (3,):
            raise ParameterError("CGO phases require dimension 3")
        if abs(np.linalg.norm(lam) - 1.0) > ORTH_TOL or abs(np.linalg.norm(eta) - 1.0) > ORTH_TOL:
            raise ParameterError("lambda and eta must be unit vectors")
        for a, b, name in ((lam, eta, "lambda.eta"), (xi, lam, "xi.lambda"),
                           (xi, eta, "xi.eta")):
            if abs(np.dot(a, b)) > ORTH_TOL * max(1.0, np.linalg.norm(a)):
                raise ParameterError(f"orthogonality violated: {name}")
        if not (0.0 < self.h <= 1.0):
            raise ParameterError("h must lie in (0, 1]")
        if self.sign not in (+1, -1):
            raise ParameterError("sign must be +1 or -1")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "xi", xi)


@dataclass(frozen=True)
class CgoSolution:
    params: CgoParams
    amplitude: ScalarField
    remainder: ScalarField
    assembled: ScalarField      # peak-normalized: true field = assembled * e^scale_log
    scale_log: float
    remainder_norm: float
    residual_rel: float

    def boundary_values(self) -> np.ndarray:
        return self.assembled.values[self.assembled.grid.boundary_nodes]


def orthogonal_triplet(xi) -> tuple:
    """Deterministic unit pair (lambda, eta) completing xi to an orthogonal triplet."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (3,):
        raise ParameterError("orthogonal triplets require dimension 3")
    nrm = np.linalg.norm(xi)
    if nrm == 0.0:
        raise ParameterError("xi must be nonzero")
    u = xi / nrm
    # Gram-Schmidt against the axis least aligned with xi (ties -> lowest index)
    fallback = int(np.argmin(np.abs(u)))
    e = np.zeros(3)
    e[fallback] = 1.0
    lam = e - np.dot(e, u) * u
    lam /= np.linalg.norm(lam)
    eta = np.cross(u, lam)
    eta /= np.linalg.norm(eta)
    return lam, eta


def discrete_symbol(zeta: np.ndarray, h_mesh: float) -> complex:
    """Symbol of the 7/5-point Laplacian on the exponential e^{zeta . x}."""
    return complex(np.sum(2.0 * (np.cosh(zeta * h_mesh) - 1.0)) / h_mesh ** 2)


def correct_null_vector(zeta0: np.ndarray, h_mesh: float,
                        max_iter: int = 60) -> np.ndarray:
    """Minimal-norm Newton correction making the discrete symbol vanish."""
    z = np.asarray(zeta0, dtype=complex).copy()
    scale = max(1.0, float(np.max(np.abs(z))) ** 2)
    for _ in range(max_iter):
        G = discrete_symbol(z, h_mesh)
        if abs(G) <= 1e-12 * scale:
            return z
        J = 2.0 * np.sinh(z * h_mesh) / h_mesh
        z = z - J.conj() * (G / np.sum(np.abs(J) ** 2))
    raise NonConvergence("discrete dispersion correction did not converge")


def correct_null_pair(xi: np.ndarray, zeta0: np.ndarray, h_mesh: float,
                      max_iter: int = 60) -> tuple:
    """Pair (p, i xi - p), both discrete-null, Newton-corrected jointly."""
    xi = np.asarray(xi, dtype=float)
    if np.linalg.norm(xi) < 1e-14:
        # the symbol is even, so -p is null together with p
        p = correct_null_vector(zeta0, h_mesh, max_iter)
        return p, -p
    p = np.asarray(zeta0, dtype=complex).copy()
    scale = max(1.0, float(np.max(np.abs(p))) ** 2, float(np.max(np.abs(xi))) ** 2)
    for _ in range(max_iter):
        G = np.array([discrete_symbol(p, h_mesh),
                      discrete_symbol(1j * xi - p, h_mesh)])
        if np.max(np.abs(G)) <= 1e-12 * scale:
            return p, 1j * xi - p
        J = np.vstack([2.0 * np.sinh(p * h_mesh) / h_mesh,
                       -2.0 * np.sinh((1j * xi - p) * h_mesh) / h_mesh])
        gram = J @ J.conj().T
        try:
            y = np.linalg.solve(gram, -G)
        except np.linalg.LinAlgError:
            y = np.linalg.lstsq(gram, -G, rcond=None)[0]
        p = p + J.conj().T @ y
    raise NonConvergence("discrete dispersion pair correction did not converge")


def solve_phase_mode(op: DiscreteOperator, zeta: np.ndarray,
                     region_mask: np.ndarray | None = None,
                     min_norm: bool = False):
    """Discrete solution carrying the mode e^{zeta . x} (masked on a region).

    Returns (z, M) with the true field z * e^M; z is an exact discrete
    solution of op's equation, peak-normalized through M = max Re(zeta . x).
    With min_norm the remainder relative to the mode is the minimal-norm one
    (free boundary values); otherwise the mode's own trace is imposed.  The
    minimal-norm variant costs an extra factorization but keeps the
    remainder small over the whole box, which matters when the probed
    density is not localized.
    """
    g = op.grid
    if min_norm:
        a = np.ones(g.num_nodes, dtype=complex)
        z, _, M = _min_norm_remainder(op, zeta, a, pin_mask=region_mask)
        return z, M
    expo = g.coords @ zeta
    M = float(np.max(expo.real))
    trace = np.exp(expo[g.boundary_nodes] - M)
    if region_mask is not None:
        trace = np.where(region_mask, 0.0, trace)
    z = op.solve(np.zeros(g.num_nodes), trace)
    return z, M


def _lu_solve_any(lu, f):
    if np.iscomplexobj(f) and not np.iscomplexobj(lu.U.data):
        return lu.solve(f.real.copy()) + 1j * lu.solve(f.imag.copy())
    return lu.solve(f)


def _min_norm_remainder(op: DiscreteOperator, zeta: np.ndarray, a_vals: np.ndarray,
                        pin_mask: np.ndarray | None = None):
    """Assembled field z = P(a + b) with minimal ||b||_L2.

    Solves the underdetermined interior system A z = 0 for the correction
    beta = P b with the weighted-minimal-norm formula beta = W A^H y,
    (A W A^H) y = -A(P a), where W = |P|^2 carries the exponential weights;
    pin_mask pins z = 0 (b = -1) on those boundary nodes.
    """
    g = op.grid
    expo = g.coords @ zeta
    M = float(np.max(expo.real))
    P = np.exp(expo - M)
    Pa = P * a_vals
    cache = getattr(op, "_min_norm_cache", None)
    if cache is None:
        A_full = sp.hstack([op.A_II, op.A_IB], format="csr")
        perm = np.concatenate([g.interior_nodes, g.boundary_nodes])
        cache = (A_full, perm)
        op._min_norm_cache = cache
    A_full, perm = cache
    f = -(op.A_II @ Pa[g.interior_nodes] + op.A_IB @ Pa[g.boundary_nodes])
    W = np.exp(2.0 * (expo.real - M))[perm]
    beta_pin = None
    if pin_mask is not None:
        pin_cols = g.num_interior + np.flatnonzero(pin_mask)
        beta_pin = -Pa[g.boundary_nodes][pin_mask]
        f = f - A_full[:, pin_cols] @ beta_pin
        keep = np.ones(A_full.shape[1], dtype=bool)
        keep[pin_cols] = False
        A_use, W_use = A_full[:, keep], W[keep]
    else:
        keep = None
        A_use, W_use = A_full, W
    N = (A_use.multiply(W_use) @ A_use.conj().T).tocsc()
    # symmetric equilibration keeps the factorization well scaled across the
    # exponential weight range
    d = 1.0 / np.sqrt(np.abs(N.diagonal().real))
    Nd = (sp.diags(d) @ N @ sp.diags(d)).tocsc()
    try:
        lu = spla.splu(Nd, permc_spec="MMD_AT_PLUS_A",
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise NonConvergence(f"minimal-norm remainder solve failed: {exc}") from exc
    y = d * _lu_solve_any(lu, d * f)
    beta = np.zeros(g.num_nodes, dtype=complex)
    nodes = perm if keep is None else perm[keep]
    beta[nodes] = W_use * (A_use.conj().T @ y)
    if pin_mask is not None:
        beta[g.boundary_nodes[pin_mask]] = beta_pin
    z = Pa + beta
    return z, beta / P, M


def _residual_rel(op: DiscreteOperator, z: np.ndarray) -> float:
    g = op.grid
    res = op.apply(z)
    scale = 2.0 * g.dim * op.v / g.h ** 2 + float(np.max(np.abs(op.c)))
    return l2_norm_values(g, res) / max(scale * l2_norm_values(g, z), 1e-300)


def _check_h(grid: Grid, h: float):
    floor = min_resolved_h(grid)
    if h < floor:
        raise ParameterError(
            f"h = {h:g} is below the resolution floor {floor:.3g} "
            f"(phase wavelength must span >= {RESOLUTION_FACTOR:g} cells)")


def build_cgo(c: ScalarField, v: float, params: CgoParams,
              amplitude_kind: str = "one", wave_vector=None,
              operator: DiscreteOperator | None = None) -> CgoSolution:
    """CGO field with amplitude a = 1 or a = e^{i x . xi}."""
    g = c.grid
    if g.dim != 3:
        raise ParameterError("CGO construction requires a 3D grid")
    _check_h(g, params.h)
    rho0 = params.sign * (params.lam + 1j * params.eta) / params.h
    if amplitude_kind == "one":
        a = np.ones(g.num_nodes, dtype=complex)
        zeta = correct_null_vector(rho0, g.h)
    elif amplitude_kind == "plane_wave":
        xi = params.xi if wave_vector is None else np.asarray(wave_vector, dtype=float)
        trans = params.lam @ xi + 1j * (params.eta @ xi)
        if abs(trans) > AMPLITUDE_TOL * max(1.0, np.linalg.norm(xi)):
            raise AmplitudeInvalid(
                "plane-wave amplitude violates (lambda + i eta) . grad a = 0: "
                f"|(lambda + i eta) . xi| = {abs(trans):.2e}")
        a = np.exp(1j * (g.coords @ xi))
        zeta = correct_null_vector(rho0 + 1j * xi, g.h)
    else:
        raise ParameterError(f"unknown amplitude kind {amplitude_kind!r}")

    op = operator if operator is not None else DiscreteOperator(g, v, c.values, None)
    z, b0, M = _min_norm_remainder(op, zeta, np.ones(g.num_nodes, dtype=complex))
    # report the remainder in the e^{phase}(a + b) decomposition; for the
    # plane wave b = a * b0, which leaves the L2 norm unchanged
    b = a * b0
    return CgoSolution(
        params=params, amplitude=ScalarField(g, a), remainder=ScalarField(g, b),
        assembled=ScalarField(g, z), scale_log=M,
        remainder_norm=l2_norm(ScalarField(g, b)),
        residual_rel=_residual_rel(op, z))


def build_vanishing_cgo(c: ScalarField, v: float, params: CgoParams,
                        region: BoundaryRegion,
                        operator: DiscreteOperator | None = None) -> CgoSolution:
    """Decaying CGO vanishing on the shadowed region {lambda . nu > eps0}.

    The remainder carries Dirichlet values -1 on the region (forcing the
    assembled field to zero there) and 0 on the rest of the boundary.
    """
    g = c.grid
    if g.dim != 3:
        raise ParameterError("CGO construction requires a 3D grid")
    if params.sign != -1:
        raise ParameterError("the boundary-vanishing variant uses the decaying sign")
    if region.direction is None or not np.allclose(region.direction, params.lam, atol=1e-12) \
            or region.sign != +1:
        raise ParameterError("region must be built from params.lam with sign +")
    _check_h(g, params.h)
    zeta = correct_null_vector(-(params.lam + 1j * params.eta) / params.h, g.h)
    op = operator if operator is not None else DiscreteOperator(g, v, c.values, None)
    a = np.ones(g.num_nodes, dtype=complex)
    z, b, M = _min_norm_remainder(op, zeta, a, pin_mask=region.mask)
    return CgoSolution(
        params=params, amplitude=ScalarField(g, a), remainder=ScalarField(g, b),
        assembled=ScalarField(g, z), scale_log=M,
        remainder_norm=l2_norm(ScalarField(g, b)),
        residual_rel=_residual_rel(op, z))


def runge_approximate(c: ScalarField, v: float, target: ScalarField,
                      constraint: BoundaryRegion | None = None,
                      subdomain: np.ndarray | None = None,
                      reg: float = 1e-8, basis=None,
                      node_weights: np.ndarray | None = None):
    """Boundary datum whose solution best matches the target in L2.

    Tikhonov-regularized least squares over the boundary-basis coefficients;
    traces are zeroed on the constraint region before solving.  Returns
    (datum, achieved_error) with the error measured by the quadrature L2
    norm over the subdomain (default: all of Omega).  node_weights, when
    given, multiply the quadrature weights inside the objective (the
    reported error stays unweighted); exponentially growing targets are fit
    uniformly in relative terms by weighting with their reciprocal
    magnitude.
    """
    g = c.grid
    op = DiscreteOperator(g, v, c.values, None)
    node_mask = np.ones(g.num_nodes, dtype=bool) if subdomain is None else subdomain
    # the target must be a discrete solution on the relevant domain
    check_nodes = node_mask.copy()
    check_nodes[g.boundary_nodes] = False
    res = op.apply(target.values)
    scale = 2.0 * g.dim * v / g.h ** 2 + float(np.max(np.abs(c.values)))
    rel = (l2_norm_values(g, res, check_nodes)
           / max(scale * l2_norm_values(g, target.values, node_mask), 1e-300))
    if rel > 1e-6:
        raise ParameterError(
            f"target is not a discrete solution (relative residual {rel:.2e})")

    basis = basis if basis is not None else trig_basis(g, 4)
    traces = basis.traces.astype(
        complex if np.iscomplexobj(target.values) else float).copy()
    if constraint is not None:
        traces[:, constraint.mask] = 0.0

    w = g.volume_weights[node_mask]
    w_fit = w if node_weights is None else w * node_weights[node_mask]
    zero_src = np.zeros(g.num_nodes)
    A = np.empty((int(node_mask.sum()), basis.size), dtype=traces.dtype)
    for j in range(basis.size):
        A[:, j] = op.solve(zero_src, traces[j])[node_mask]
    N = A.conj().T @ (A * w_fit[:, None])
    rhs = A.conj().T @ (w_fit * target.values[node_mask])
    # reg is relative to the mean diagonal so the penalty tracks the scale
    # of the (possibly strongly weighted) normal equations
    gram_scale = max(float(np.real(np.trace(N))) / max(basis.size, 1), 1e-300)
    N[np.diag_indices_from(N)] += reg * gram_scale
    try:
        eig = np.linalg.eigvalsh(N)
        if eig[0] <= 0 or eig[0] / eig[-1] < 1e-16:
            raise RankDeficient(
                f"normal equations numerically singular at reg = {reg:g}")
        alpha = np.linalg.solve(N, rhs)
    except np.linalg.LinAlgError as exc:
        raise RankDeficient(str(exc)) from exc
    fit = A @ alpha
    err = float(np.sqrt(np.sum(w * np.abs(fit - target.values[node_mask]) ** 2)))
    datum = BoundaryTrace(g, alpha @ traces)
    return datum, err
