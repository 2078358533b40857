"""Recovery of the discount fields and cost-series coefficients from
Dirichlet-to-Neumann data, via CGO-probed boundary pairings.

All extraction rests on one discrete identity (exact to solver precision,
see dn_map): if w solves the reference screened equation with a
perturbation source s at interior nodes and w = 0 on the boundary, then
for any discrete reference solution z,

    h^dim sum_I s z  =  flux_pairing(t(w), z)   .

With s = (c_hidden - c_ref) * m and the datum m, probe z chosen as a CGO
pair whose exponents sum to i xi, the boundary data of the pairing are
measurable and its volume side tends to the Fourier coefficient of
(c_hidden - c_ref) at xi as the CGO scale h -> 0.  The probe pair splits
the frequency between the two exponents (zeta_m + zeta_z = i xi, both
discrete-null, amplitudes 1), which keeps both remainders O(h ||c||)
uniformly in xi; the datum is built from reference coefficients, so the
extraction is linearized in the hidden perturbation (Born-type bias,
measured by the acceptance suite).

Measured DN data enters through oracle callables mapping a boundary trace
(values over boundary nodes, complex allowed) to the flux trace of the
corresponding hidden-coefficient solve; simulators for all oracle kinds are
provided here and used by the CLI and the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .cgo import (
    correct_null_pair, orthogonal_triplet, runge_approximate, solve_phase_mode,
)
from .dn_map import (
    PartialDataSpec, check_support, flux_pairing, flux_trace_values, trig_basis,
)
from .elliptic import DiscreteOperator
from .errors import (
    FrequencyUnresolved, ParameterError, PositivityFloor,
)
from .field import (
    BoundaryRegion, BoundaryTrace, Grid, ScalarField, l2_norm,
)
from .mfg_forward import MfgCoefficients

ALIAS_LIMIT = 1.0   # reject frequencies with |xi| * h_mesh above this


@dataclass(frozen=True)
class FourierData:
    """Extracted values of the perturbation's Fourier transform."""

    frequencies: np.ndarray     # (n, 3)
    values: np.ndarray          # (n,) complex
    domain: str                 # "full-lattice" or "cone"
    h: float
    cone_direction: np.ndarray | None = None
    cone_eps0: float | None = None
    diagnostics: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        v = np.asarray(self.values, dtype=complex)
        if len(f) != len(v):
            raise ParameterError("one value per frequency required")
        if len(f) > 1:
            d = np.linalg.norm(f[:, None, :] - f[None, :, :], axis=2)
            d[np.diag_indices_from(d)] = np.inf
            if d.min() < 1e-12:
                raise ParameterError("frequencies must be distinct")
        if not np.all(np.isfinite(v)):
            raise ParameterError("Fourier values must be finite")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class ReconstructionResult:
    field: ScalarField
    rel_error: float | None
    cutoff: int
    h: float
    diagnostics: dict


@dataclass
class ReconstructionOptions:
    cutoff: int = 4
    h: float = 0.25
    richardson: bool = True
    positivity_floor: float = 1e-3
    runge_reg: float = 1e-8
    runge_basis_freq: int = 4
    collar_cells: int = 2


# ---------------------------------------------------------------------------
# simulated measurement oracles

def make_linear_dn_oracle(coeffs: MfgCoefficients, slot: str):
    """Flux trace of the linearized slot equation for arbitrary boundary data."""
    g = coeffs.grid
    c = coeffs.k if slot == "u" else coeffs.r
    op = DiscreteOperator(g, coeffs.v, c.values, None)
    zero = np.zeros(g.num_nodes)

    def oracle(trace_values: np.ndarray) -> np.ndarray:
        w = op.solve(zero, np.asarray(trace_values))
        return flux_trace_values(g, w)

    return oracle


def make_second_order_oracle(coeffs: MfgCoefficients, g1: BoundaryTrace):
    """Flux trace of the mixed second-order value field for f-probes = 0.

    With both f-probes zero the mixed system reduces to
    (-v Lap + k) u12 = F2 m1 m2, u12 = 0, where m1, m2 solve the screened
    density equation with data g1 and the queried trace.
    """
    g = coeffs.grid
    op_r = DiscreteOperator(g, coeffs.v, coeffs.r.values, None)
    op_k = DiscreteOperator(g, coeffs.v, coeffs.k.values, None)
    zero = np.zeros(g.num_nodes)
    m1 = op_r.solve(zero, g1.values)
    F2 = coeffs.F.coefficient(2)
    f2 = np.zeros(g.num_nodes) if F2 is None else F2.values

    def oracle(g2_values: np.ndarray) -> np.ndarray:
        m2 = op_r.solve(zero, np.asarray(g2_values))
        u12 = op_k.solve(f2 * m1 * m2, np.zeros(g.num_boundary, dtype=m2.dtype))
        return flux_trace_values(g, u12)

    return oracle


def make_third_order_oracle(coeffs: MfgCoefficients, g1: BoundaryTrace,
                            g2: BoundaryTrace):
    """Flux trace of the mixed third-order value field for f-probes = 0.

    All second-order density fields vanish (their sources carry gradients of
    the zero value probes), so the only surviving source is F3 m1 m2 m3.
    """
    g = coeffs.grid
    op_r = DiscreteOperator(g, coeffs.v, coeffs.r.values, None)
    op_k = DiscreteOperator(g, coeffs.v, coeffs.k.values, None)
    zero = np.zeros(g.num_nodes)
    m1 = op_r.solve(zero, g1.values)
    m2 = op_r.solve(zero, g2.values)
    F3 = coeffs.F.coefficient(3)
    f3 = np.zeros(g.num_nodes) if F3 is None else F3.values

    def oracle(g3_values: np.ndarray) -> np.ndarray:
        m3 = op_r.solve(zero, np.asarray(g3_values))
        u123 = op_k.solve(f3 * m1 * m2 * m3, np.zeros(g.num_boundary, dtype=m3.dtype))
        return flux_trace_values(g, u123)

    return oracle


def make_partial_dn_oracle(coeffs: MfgCoefficients, slot: str, spec: PartialDataSpec):
    """Linearized oracle restricted to the measurement region U-."""
    full = make_linear_dn_oracle(coeffs, slot)
    g = coeffs.grid

    def oracle(trace_values: np.ndarray) -> np.ndarray:
        trace = BoundaryTrace(g, np.real(trace_values))
        check_support(trace, spec.input_region, "boundary datum (real part)")
        trace_im = BoundaryTrace(g, np.imag(np.asarray(trace_values, dtype=complex)))
        check_support(trace_im, spec.input_region, "boundary datum (imag part)")
        t = full(trace_values)
        return np.where(spec.measure_region.mask, t, 0.0)

    return oracle


# ---------------------------------------------------------------------------
# extraction

def _default_pair_direction(xi: np.ndarray):
    if np.linalg.norm(xi) == 0.0:
        return np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    return orthogonal_triplet(xi)


def _split_pair(xi: np.ndarray, h: float, lam: np.ndarray, eta: np.ndarray,
                h_mesh: float):
    """Discrete-null exponent pair with zeta_m + zeta_z = i xi."""
    s = math.sqrt(1.0 / h ** 2 + float(xi @ xi) / 4.0)
    t = 1.0 / h
    start = s * lam + 1j * (xi / 2.0 + t * eta)
    zeta_z, zeta_m = correct_null_pair(xi, start, h_mesh)
    return zeta_m, zeta_z


def _check_xi(grid: Grid, xi: np.ndarray):
    if np.linalg.norm(xi) * grid.h > ALIAS_LIMIT:
        raise FrequencyUnresolved(
            f"|xi| = {np.linalg.norm(xi):.3g} aliases on h_mesh = {grid.h:.3g}")


def extract_fourier(slot: str, dn_measured, reference: MfgCoefficients,
                    xi_set, h: float, operator: DiscreteOperator | None = None,
                    directions=None) -> FourierData:
    """Boundary-pairing estimate of the hidden-minus-reference Fourier data.

    For each xi: the datum CGO (decaying exponent, reference coefficient)
    supplies the boundary trace sent to the measured oracle; its own flux is
    the reference response, and the growing CGO probes the difference:

        value(xi) = flux_pairing(t_ref - t_measured, z)  -> q_hat(xi) + O(h).

    directions, when given, maps xi to the (lambda, eta) pair of the phase
    split (defaults to the deterministic orthogonal triplet); passing the
    geometry used by a partial-data run makes the two pipelines share their
    leading bias and directly comparable.
    """
    if slot not in ("r", "k"):
        raise ParameterError("slot must be 'r' or 'k'")
    g = reference.grid
    if g.dim != 3:
        raise ParameterError("Fourier extraction requires a 3D grid")
    c = reference.r if slot == "r" else reference.k
    op = operator if operator is not None else DiscreteOperator(g, reference.v, c.values, None)
    freqs, vals, resid = [], [], []
    for xi in xi_set:
        xi = np.asarray(xi, dtype=float)
        _check_xi(g, xi)
        lam, eta = _default_pair_direction(xi) if directions is None else directions(xi)
        zeta_m, zeta_z = _split_pair(xi, h, lam, eta, g.h)
        m_ref, Mm = solve_phase_mode(op, zeta_m)
        z_probe, Mz = solve_phase_mode(op, zeta_z)
        t_ref = flux_trace_values(g, m_ref)
        t_meas = dn_measured(m_ref[g.boundary_nodes])
        raw = flux_pairing(g, reference.v, t_ref - t_meas,
                           z_probe[g.boundary_nodes])
        vals.append(raw * np.exp(Mm + Mz))
        freqs.append(xi)
        res = op.apply(m_ref)
        resid.append(float(np.linalg.norm(res[g.interior_nodes]))
                     / max(float(np.linalg.norm(m_ref)), 1e-300))
    return FourierData(frequencies=np.array(freqs), values=np.array(vals),
                       domain="full-lattice", h=h,
                       diagnostics={"solve_residuals": resid})


def _pairing_extract(op_probe: DiscreteOperator, op_datum: DiscreteOperator,
                     v: float, dn_measured, reference_source_fn, xi, h):
    """Shared second/third-order extraction core (value-slot pairing).

    The datum CGO solves the density equation; the probe solves the value
    equation; reference_source_fn(m_datum) returns the interior source of
    the reference mixed field.  The probed density spans the whole box, so
    both CGOs use minimal-norm remainders (globally small, see cgo).
    """
    g = op_probe.grid
    xi = np.asarray(xi, dtype=float)
    _check_xi(g, xi)
    lam, eta = _default_pair_direction(xi)
    zeta_m, zeta_z = _split_pair(xi, h, lam, eta, g.h)
    m_cgo, Mm = solve_phase_mode(op_datum, zeta_m, min_norm=True)
    probe, Mz = solve_phase_mode(op_probe, zeta_z, min_norm=True)
    u_ref = op_probe.solve(reference_source_fn(m_cgo),
                           np.zeros(g.num_boundary, dtype=complex))
    t_ref = flux_trace_values(g, u_ref)
    t_meas = dn_measured(m_cgo[g.boundary_nodes])
    raw = flux_pairing(g, v, t_ref - t_meas, probe[g.boundary_nodes])
    return -raw * np.exp(Mm + Mz)


# ---------------------------------------------------------------------------
# synthesis

def lattice_frequencies(grid: Grid, cutoff: int):
    """Centered lattice 2 pi {-cutoff..cutoff}^3 minus aliased entries."""
    rng = range(-cutoff, cutoff + 1)
    out = []
    for n1 in rng:
        for n2 in rng:
            for n3 in rng:
                xi = 2.0 * np.pi * np.array([n1, n2, n3], dtype=float)
                if np.linalg.norm(xi) * grid.h <= ALIAS_LIMIT:
                    out.append(xi)
    return out


def _half_lattice(freqs):
    """Representatives with the first nonzero component positive, plus zero."""
    half = []
    for xi in freqs:
        nz = xi[np.abs(xi) > 1e-12]
        if len(nz) == 0 or nz[0] > 0:
            half.append(xi)
    return half


def conjugate_fill(data: FourierData) -> FourierData:
    """Append value(-xi) = conj(value(xi)) for every nonzero frequency."""
    freqs = [xi for xi in data.frequencies]
    vals = list(data.values)
    for xi, v in zip(data.frequencies, data.values):
        if np.linalg.norm(xi) > 1e-12:
            freqs.append(-xi)
            vals.append(np.conj(v))
    return FourierData(frequencies=np.array(freqs), values=np.array(vals),
                       domain=data.domain, h=data.h,
                       cone_direction=data.cone_direction, cone_eps0=data.cone_eps0,
                       diagnostics=data.diagnostics)


def invert_fourier(data: FourierData, grid: Grid) -> ScalarField:
    """Truncated Fourier synthesis q(x) = sum value(xi) e^{-i xi . x}."""
    if data.domain != "full-lattice":
        raise ParameterError(
            "cone-restricted data cannot be inverted; completion from a cone "
            "is out of scope")
    acc = np.zeros(grid.num_nodes, dtype=complex)
    for xi, v in zip(data.frequencies, data.values):
        acc += v * np.exp(-1j * (grid.coords @ xi))
    return ScalarField(grid, acc.real)


def _synthesis_imag_residual(data: FourierData, grid: Grid) -> float:
    acc = np.zeros(grid.num_nodes, dtype=complex)
    for xi, v in zip(data.frequencies, data.values):
        acc += v * np.exp(-1j * (grid.coords @ xi))
    denom = max(l2_norm(ScalarField(grid, acc.real)), 1e-300)
    return l2_norm(ScalarField(grid, acc.imag)) / denom


# ---------------------------------------------------------------------------
# pipelines

def _extract_lattice(extract_one, grid: Grid, opts: ReconstructionOptions):
    """Half-lattice sweep with optional Richardson step, conjugate-filled."""
    half = _half_lattice(lattice_frequencies(grid, opts.cutoff))
    freqs, vals = [], []
    for xi in half:
        v1 = extract_one(xi, opts.h)
        if opts.richardson:
            v2 = extract_one(xi, opts.h / 2.0)
            val = 2.0 * v2 - v1
        else:
            val = v1
        freqs.append(xi)
        vals.append(val)
    data = FourierData(frequencies=np.array(freqs), values=np.array(vals),
                       domain="full-lattice", h=opts.h)
    return conjugate_fill(data)


def reconstruct_coefficient(slot: str, dn_measured, reference: MfgCoefficients,
                            opts: ReconstructionOptions | None = None,
                            truth: ScalarField | None = None) -> ReconstructionResult:
    """Recover r (m-slot) or k (u-slot) as reference + inverted discrepancy."""
    opts = opts or ReconstructionOptions()
    g = reference.grid
    c_ref = reference.r if slot == "r" else reference.k
    op = DiscreteOperator(g, reference.v, c_ref.values, None)

    def one(xi, h):
        data = extract_fourier(slot, dn_measured, reference, [xi], h, operator=op)
        return data.values[0]

    data = _extract_lattice(one, g, opts)
    disc = invert_fourier(data, g)
    recovered = ScalarField(g, c_ref.values + disc.values)
    diagnostics = {
        "imag_residual": _synthesis_imag_residual(data, g),
        "num_frequencies": len(data.frequencies),
        "fourier": data,
    }
    rel = None
    if truth is not None:
        rel = (l2_norm(ScalarField(g, recovered.values - truth.values))
               / max(l2_norm(truth), 1e-300))
    return ReconstructionResult(field=recovered, rel_error=rel,
                                cutoff=opts.cutoff, h=opts.h,
                                diagnostics=diagnostics)


def _positive_density(coeffs: MfgCoefficients, trace: BoundaryTrace, floor: float,
                      what: str) -> np.ndarray:
    g = coeffs.grid
    op = DiscreteOperator(g, coeffs.v, coeffs.r.values, None)
    m = op.solve(np.zeros(g.num_nodes), trace.values)
    if float(np.min(m.real)) < floor:
        raise PositivityFloor(
            f"{what} dips to {float(np.min(m.real)):.3g} below the division "
            f"floor {floor:g}; choose a boundary datum with a positive margin")
    return m.real


def reconstruct_F2(dn_measured, known: MfgCoefficients, g1: BoundaryTrace,
                   opts: ReconstructionOptions | None = None,
                   truth: ScalarField | None = None) -> ReconstructionResult:
    """Recover the order-2 cost coefficient from second-order DN data.

    Extracts the Fourier data of (F2_hidden - F2_ref) m1, inverts, and
    divides by the positive density probe m1.
    """
    opts = opts or ReconstructionOptions()
    g = known.grid
    m1 = _positive_density(known, g1, opts.positivity_floor, "density probe m1")
    op_r = DiscreteOperator(g, known.v, known.r.values, None)
    op_k = DiscreteOperator(g, known.v, known.k.values, None)
    F2_ref = known.F.coefficient(2)
    f2_ref = np.zeros(g.num_nodes) if F2_ref is None else F2_ref.values

    def one(xi, h):
        return _pairing_extract(
            op_k, op_r, known.v, dn_measured,
            lambda m_cgo: f2_ref * m1 * m_cgo, xi, h)

    data = _extract_lattice(one, g, opts)
    density = invert_fourier(data, g)
    disc = density.values / m1
    recovered = ScalarField(g, f2_ref + disc)
    rel = None
    if truth is not None:
        rel = (l2_norm(ScalarField(g, recovered.values - truth.values))
               / max(l2_norm(truth), 1e-300))
    return ReconstructionResult(
        field=recovered, rel_error=rel, cutoff=opts.cutoff, h=opts.h,
        diagnostics={"imag_residual": _synthesis_imag_residual(data, g),
                     "min_m1": float(m1.min()), "fourier": data})


def reconstruct_F3(dn_measured, known: MfgCoefficients, g1: BoundaryTrace,
                   g2: BoundaryTrace, opts: ReconstructionOptions | None = None,
                   truth: ScalarField | None = None) -> ReconstructionResult:
    """Recover the order-3 cost coefficient from third-order DN data."""
    opts = opts or ReconstructionOptions()
    g = known.grid
    m1 = _positive_density(known, g1, opts.positivity_floor, "density probe m1")
    m2 = _positive_density(known, g2, opts.positivity_floor, "density probe m2")
    op_r = DiscreteOperator(g, known.v, known.r.values, None)
    op_k = DiscreteOperator(g, known.v, known.k.values, None)
    F3_ref = known.F.coefficient(3)
    f3_ref = np.zeros(g.num_nodes) if F3_ref is None else F3_ref.values

    def one(xi, h):
        return _pairing_extract(
            op_k, op_r, known.v, dn_measured,
            lambda m_cgo: f3_ref * m1 * m2 * m_cgo, xi, h)

    data = _extract_lattice(one, g, opts)
    density = invert_fourier(data, g)
    disc = density.values / (m1 * m2)
    recovered = ScalarField(g, f3_ref + disc)
    rel = None
    if truth is not None:
        rel = (l2_norm(ScalarField(g, recovered.values - truth.values))
               / max(l2_norm(truth), 1e-300))
    return ReconstructionResult(
        field=recovered, rel_error=rel, cutoff=opts.cutoff, h=opts.h,
        diagnostics={"imag_residual": _synthesis_imag_residual(data, g),
                     "min_m1m2": float((m1 * m2).min()), "fourier": data})


# ---------------------------------------------------------------------------
# partial-boundary cone data

def interior_mask(grid: Grid, collar_cells: int) -> np.ndarray:
    """Nodes deeper than the collar (index distance >= collar_cells)."""
    idx = np.round(grid.coords / grid.h).astype(int)
    depth = np.minimum(idx, grid.n_cells - idx).min(axis=1)
    return depth >= collar_cells


def cone_lattice_frequencies(direction: np.ndarray, cutoff: int, count: int):
    """Lattice frequencies orthogonal to the cone axis, nearest first."""
    out = []
    rng = range(-cutoff, cutoff + 1)
    for n1 in rng:
        for n2 in rng:
            for n3 in rng:
                n = np.array([n1, n2, n3], dtype=float)
                if np.linalg.norm(n) < 1e-12:
                    continue
                if abs(n @ direction) < 1e-12:
                    nz = n[np.abs(n) > 1e-12]
                    if nz[0] > 0:
                        out.append(2.0 * np.pi * n)
    out.sort(key=lambda xi: np.linalg.norm(xi))
    return out[:count]


def cone_directions(direction: np.ndarray, eps0: float, count: int):
    """The cap center plus deterministic tilts within the eps0-cap."""
    dirs = [np.asarray(direction, dtype=float)]
    if count <= 1:
        return dirs
    # orthonormal tangent pair at the cap center
    aux = np.zeros(3)
    aux[int(np.argmin(np.abs(direction)))] = 1.0
    t1 = aux - (aux @ direction) * direction
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(direction, t1)
    for i in range(count - 1):
        w = t1 if i % 2 == 0 else t2
        lam = direction + 0.5 * eps0 * ((-1) ** (i // 2)) * w
        dirs.append(lam / np.linalg.norm(lam))
    return dirs


def cone_fourier_data(slot: str, partial_dn_measured, reference: MfgCoefficients,
                      spec: PartialDataSpec, xi_count: int = 4,
                      opts: ReconstructionOptions | None = None,
                      cap_samples: int = 1) -> FourierData:
    """Cone-restricted Fourier data from partial-boundary measurements.

    For each direction sampled in the eps0-cap around the cone axis and each
    frequency orthogonal to it: the datum is a Runge approximation (basis
    traces vanishing on the far region) of the growing CGO, the probe is the
    boundary-vanishing CGO, and the pairing runs over the measurement region
    only.  The audit decomposes the boundary term over the three regions of
    the partial-data argument; the piece on {lambda' . nu >= 2 eps0} carries
    an identically zero probe factor and is reported for verification.
    """
    opts = opts or ReconstructionOptions()
    g = reference.grid
    if g.dim != 3:
        raise ParameterError("cone data requires a 3D grid")
    if slot not in ("r", "k"):
        raise ParameterError("slot must be 'r' or 'k'")
    c_ref = reference.r if slot == "r" else reference.k
    op = DiscreteOperator(g, reference.v, c_ref.values, None)
    lam_prime = spec.direction
    eps0 = spec.eps0
    omega_tilde = interior_mask(g, opts.collar_cells)
    basis = trig_basis(g, opts.runge_basis_freq)
    proj_prime = g.normals @ lam_prime
    region1 = proj_prime >= 2.0 * eps0
    region2 = (proj_prime > 0.0) & (proj_prime < 2.0 * eps0)
    region3 = proj_prime <= 0.0
    w_face = g.face_pairing_weights()
    measured = spec.measure_region.mask

    freqs, vals = [], []
    audits = {"region_high": [], "region_strip": [], "region_low": [],
              "runge_error": [], "direction": []}
    for lam in cone_directions(lam_prime, eps0, cap_samples):
        proj = g.normals @ lam
        gamma = BoundaryRegion(g, proj < eps0, direction=lam, eps0=eps0, sign=-1)
        shadow = BoundaryRegion(g, proj > eps0, direction=lam, eps0=eps0, sign=+1)
        on_axis = np.allclose(lam, lam_prime)
        if on_axis:
            xi_list = cone_lattice_frequencies(lam, opts.cutoff, xi_count)
        else:
            # off-lattice frequencies orthogonal to the tilted direction;
            # skip projections that collide with already sampled entries
            base = cone_lattice_frequencies(lam_prime, opts.cutoff, xi_count)
            xi_list = []
            for xi0 in base:
                xi_t = xi0 - (xi0 @ lam) * lam
                if np.linalg.norm(xi_t) < 1e-9:
                    continue
                if any(np.linalg.norm(xi_t - np.asarray(f)) < 1e-9 for f in freqs):
                    continue
                xi_list.append(xi_t)
                if len(xi_list) >= max(1, xi_count // 2):
                    break
        for xi in xi_list:
            _check_xi(g, xi)
            eta = np.cross(lam, xi / np.linalg.norm(xi))
            eta /= np.linalg.norm(eta)
            s = math.sqrt(1.0 / opts.h ** 2 + float(xi @ xi) / 4.0)
            start = s * lam + 1j * (xi / 2.0 + (1.0 / opts.h) * eta)
            zeta_target, zeta_vanish = correct_null_pair(xi, start, g.h)

            # datum: admissible approximation of the growing CGO, zero on gamma;
            # the misfit is weighted by the reciprocal phase magnitude, which is
            # how the datum error enters the pairing against the decaying probe
            target, Mt = solve_phase_mode(op, zeta_target)
            expo = (g.coords @ zeta_target).real
            rel_w = np.exp(2.0 * np.clip(expo.max() - expo, 0.0, 15.0))
            datum, runge_err = runge_approximate(
                c_ref, reference.v, ScalarField(g, target),
                constraint=gamma, subdomain=omega_tilde,
                reg=opts.runge_reg, basis=basis, node_weights=rel_w)
            m_hat = op.solve(np.zeros(g.num_nodes), datum.values)
            t_ref = flux_trace_values(g, m_hat)
            t_meas = partial_dn_measured(datum.values)

            # probe: boundary-vanishing CGO for the matching exponent
            v1, Mv = solve_phase_mode(op, zeta_vanish, region_mask=shadow.mask)
            v1_b = v1[g.boundary_nodes]
            scale = np.exp(Mt + Mv)

            pair_terms = -reference.v * w_face * (t_ref - t_meas) * v1_b * scale
            # outside U- the measured flux is unknown; the probe vanishes there
            value = complex(np.sum(pair_terms[measured]))
            high = (complex(np.sum(pair_terms[region1 & measured]))
                    + complex(np.sum((-reference.v * w_face * t_ref * v1_b
                                      * scale)[region1 & ~measured])))
            audits["region_high"].append(high)
            audits["region_strip"].append(complex(np.sum(pair_terms[region2 & measured])))
            audits["region_low"].append(complex(np.sum(pair_terms[region3 & measured])))
            audits["runge_error"].append(runge_err)
            audits["direction"].append(lam.copy())
            freqs.append(xi)
            vals.append(value)
    return FourierData(frequencies=np.array(freqs), values=np.array(vals),
                       domain="cone", h=opts.h, cone_direction=lam_prime,
                       cone_eps0=eps0, diagnostics=audits)
