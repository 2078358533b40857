"""Higher-order linearization of the MFG solution map in the data amplitudes.

Boundary data enters as f = sum_l eps_l f_l, g = sum_l eps_l g_l with eps in
the positive cone.  Differentiating the discrete residual at eps = 0 gives a
hierarchy of linear systems whose sources involve only lower orders:

  order 1:  (-v Lap + k) u1 = 0,  u1 = f_l     (-v Lap + r) m1 = 0,  m1 = g_l
  order 2:  (-v Lap + k) u12 = F2 m1 m2 - grad u1 . grad u2,      u12 = 0
            (-v Lap + r) m12 = div(m1 grad u2) + div(m2 grad u1), m12 = 0
  order 3:  mixed u123 with the F3 m1 m2 m3 source plus every proper
            bipartition of {1,2,3} feeding the quadratic couplings.

All sources reuse the forward solver's discretization (centered gradients,
flux-form divergence), so finite differences of solve_mfg converge to these
fields at first order in eps; fd_derivative measures exactly that, keeping
every nonlinear evaluation inside the positive cone via a base shift so the
summed boundary datum stays positive where required.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .elliptic import DiscreteOperator
from .errors import ParameterError, PositivityViolation
from .field import BoundaryTrace, Grid, ScalarField
from .mfg_forward import (
    MfgCoefficients, NewtonOptions, flux_divergence_interior,
    _centered_gradient_interior, solve_mfg,
)


@dataclass(frozen=True)
class EpsFamily:
    """Boundary-data directions (f_l, g_l) with amplitudes eps_l > 0."""

    components: tuple          # ((f_1, g_1), ..., (f_N, g_N))
    eps: tuple                 # amplitudes, all > 0
    require_positive: bool = False

    def __post_init__(self):
        n = len(self.components)
        if n == 0 or n > 3:
            raise ParameterError("family size must be 1..3")
        if len(self.eps) != n:
            raise ParameterError("one amplitude per component required")
        if any(e <= 0 for e in self.eps):
            raise ParameterError("amplitudes must be positive")
        for l, (_, g_l) in enumerate(self.components, start=1):
            if l != 2 and np.min(g_l.values) < 0:
                raise ParameterError(f"g_{l} must be nonnegative (only slot 2 is free)")
        if self.require_positive and positivity_margin(self) <= 0:
            raise ParameterError("summed boundary datum g is not pointwise positive")

    @property
    def grid(self) -> Grid:
        return self.components[0][0].grid

    def summed_data(self, eps=None):
        eps = self.eps if eps is None else eps
        f = sum(e * c[0].values for e, c in zip(eps, self.components))
        g = sum(e * c[1].values for e, c in zip(eps, self.components))
        gr = self.grid
        return BoundaryTrace(gr, f), BoundaryTrace(gr, g)


@dataclass(frozen=True)
class LinearizationResult:
    fields: dict               # multi-index tuple -> (u field, m field)
    provenance: str            # "analytic-system" or "finite-difference"


def positivity_margin(family: EpsFamily) -> float:
    """Min over boundary nodes of the summed datum g."""
    _, g = family.summed_data()
    return float(np.min(g.values))


def linearize_family(coeffs: MfgCoefficients, family: EpsFamily,
                     method: str = "analytic-system",
                     opts: NewtonOptions | None = None) -> LinearizationResult:
    """All first- and mixed-order fields of a family, by either route.

    method "analytic-system" solves the linearized systems; method
    "finite-difference" differences the nonlinear solution map at the
    family's amplitudes.  Keys of the result are multi-index tuples.
    """
    if method not in ("analytic-system", "finite-difference"):
        raise ParameterError("method must be 'analytic-system' or 'finite-difference'")
    n = len(family.components)
    singles = list(range(1, n + 1))
    pairs = list(itertools.combinations(singles, 2))
    fields = {}
    if method == "analytic-system":
        firsts = {l: first_order(coeffs, *family.components[l - 1]) for l in singles}
        for l in singles:
            fields[(l,)] = firsts[l]
        for p in pairs:
            fields[p] = second_order(coeffs, firsts[p[0]], firsts[p[1]])
        if n == 3:
            seconds = {p: fields[p] for p in pairs}
            fields[(1, 2, 3)] = third_order(coeffs, firsts, seconds)
    else:
        for l in singles:
            fields[(l,)] = fd_derivative(coeffs, family, {l}, opts)
        for p in pairs:
            fields[p] = fd_derivative(coeffs, family, set(p), opts)
        if n == 3:
            fields[(1, 2, 3)] = fd_derivative(coeffs, family, {1, 2, 3}, opts)
    return LinearizationResult(fields=fields, provenance=method)


def first_order(coeffs: MfgCoefficients, f_l: BoundaryTrace, g_l: BoundaryTrace):
    """Decoupled screened solves; the cost series does not enter."""
    gr = coeffs.grid
    op_k = DiscreteOperator(gr, coeffs.v, coeffs.k.values, None)
    op_r = DiscreteOperator(gr, coeffs.v, coeffs.r.values, None)
    zero = np.zeros(gr.num_nodes)
    u1 = op_k.solve(zero, f_l.values)
    m1 = op_r.solve(zero, g_l.values)
    return ScalarField(gr, u1), ScalarField(gr, m1)


def _second_order_sources(coeffs, first1, first2):
    gr = coeffs.grid
    I = gr.interior_nodes
    u1, m1 = first1
    u2, m2 = first2
    g1 = _centered_gradient_interior(gr, u1.values)
    g2 = _centered_gradient_interior(gr, u2.values)
    grad_dot = sum(a * b for a, b in zip(g1, g2))
    F2 = coeffs.F.coefficient(2)
    f2 = F2.values[I] if F2 is not None else 0.0
    src_u = np.zeros(gr.num_nodes, dtype=np.result_type(u1.values.dtype, m1.values.dtype))
    src_u[I] = f2 * m1.values[I] * m2.values[I] - grad_dot
    src_m = np.zeros_like(src_u)
    src_m[I] = (flux_divergence_interior(gr, m1.values, u2.values)
                + flux_divergence_interior(gr, m2.values, u1.values))
    return src_u, src_m


def second_order(coeffs: MfgCoefficients, first1, first2):
    """Mixed second-order pair (u12, m12) with zero boundary data."""
    gr = coeffs.grid
    src_u, src_m = _second_order_sources(coeffs, first1, first2)
    op_k = DiscreteOperator(gr, coeffs.v, coeffs.k.values, None)
    op_r = DiscreteOperator(gr, coeffs.v, coeffs.r.values, None)
    zero_b = np.zeros(gr.num_boundary)
    u12 = op_k.solve(src_u, zero_b)
    m12 = op_r.solve(src_m, zero_b)
    return ScalarField(gr, u12), ScalarField(gr, m12)


def third_order(coeffs: MfgCoefficients, firsts, seconds):
    """Mixed third-order pair (u123, m123), zero boundary data.

    firsts: dict {1: (u1, m1), 2: ..., 3: ...}
    seconds: dict {(1, 2): (u12, m12), (1, 3): ..., (2, 3): ...}
    """
    gr = coeffs.grid
    I = gr.interior_nodes
    pairs = [((1,), (2, 3)), ((2,), (1, 3)), ((3,), (1, 2))]
    F2 = coeffs.F.coefficient(2)
    F3 = coeffs.F.coefficient(3)
    src_u = np.zeros(gr.num_nodes)
    src_m = np.zeros(gr.num_nodes)
    if F3 is not None:
        src_u[I] += (F3.values[I]
                     * firsts[1][1].values[I]
                     * firsts[2][1].values[I]
                     * firsts[3][1].values[I])
    for (single,), pair in pairs:
        u_s, m_s = firsts[single]
        u_p, m_p = seconds[pair]
        if F2 is not None:
            src_u[I] += F2.values[I] * m_s.values[I] * m_p.values[I]
        gs = _centered_gradient_interior(gr, u_s.values)
        gp = _centered_gradient_interior(gr, u_p.values)
        src_u[I] -= sum(a * b for a, b in zip(gs, gp))
        src_m[I] += (flux_divergence_interior(gr, m_s.values, u_p.values)
                     + flux_divergence_interior(gr, m_p.values, u_s.values))
    op_k = DiscreteOperator(gr, coeffs.v, coeffs.k.values, None)
    op_r = DiscreteOperator(gr, coeffs.v, coeffs.r.values, None)
    zero_b = np.zeros(gr.num_boundary)
    return (ScalarField(gr, op_k.solve(src_u, zero_b)),
            ScalarField(gr, op_r.solve(src_m, zero_b)))


def _solve_at(coeffs, family, eps_point, opts):
    if all(e == 0.0 for e in eps_point):
        gr = family.grid
        zero = ScalarField(gr, np.zeros(gr.num_nodes))
        return zero, zero
    f, g = family.summed_data(eps_point)
    if family.require_positive and np.min(g.values) <= 0:
        raise PositivityViolation(
            "an evaluation point of the difference quotient has g not positive; "
            "enlarge the base shift or shrink eps_2")
    sol = solve_mfg(coeffs, f, g, opts)
    return sol.u, sol.m


def fd_derivative(coeffs: MfgCoefficients, family: EpsFamily, multi_index,
                  opts: NewtonOptions | None = None, base_shift: float | None = None):
    """One-sided difference quotient of the solution map at eps = 0.

    multi_index is a set of distinct slots from {1..N}; each slot is
    differenced once.  When positivity is requested and slot 2 (the
    sign-unconstrained one) is differenced, the slot-1 amplitude is held at a
    positive base so every evaluated datum keeps g > 0; the quotient then
    carries an O(base) bias on top of the O(eps) one-sided bias.
    """
    opts = opts or NewtonOptions()
    mi = tuple(sorted(set(multi_index)))
    n = len(family.components)
    if not mi or any(l < 1 or l > n for l in mi):
        raise ParameterError(f"multi-index must be nonempty within 1..{n}")

    base = [0.0] * n
    if family.require_positive and 2 in mi and n >= 2:
        g1 = family.components[0][1]
        g2 = family.components[1][1]
        min_g1 = float(np.min(g1.values))
        if min_g1 <= 0:
            raise PositivityViolation("base shift needs min g_1 > 0")
        if base_shift is None:
            base_shift = 2.0 * family.eps[1] * float(np.max(np.abs(g2.values))) / min_g1
        base[0] = base_shift
    elif base_shift is not None:
        base[0] = base_shift

    deltas = {l: family.eps[l - 1] for l in mi}
    du = None
    dm = None
    denom = np.prod([deltas[l] for l in mi])
    for subset in itertools.chain.from_iterable(
            itertools.combinations(mi, k) for k in range(len(mi) + 1)):
        point = list(base)
        for l in subset:
            point[l - 1] += deltas[l]
        sign = (-1.0) ** (len(mi) - len(subset))
        u, m = _solve_at(coeffs, family, tuple(point), opts)
        if du is None:
            du = sign * u.values / denom
            dm = sign * m.values / denom
        else:
            du = du + sign * u.values / denom
            dm = dm + sign * m.values / denom
    gr = family.grid
    return ScalarField(gr, du), ScalarField(gr, dm)
