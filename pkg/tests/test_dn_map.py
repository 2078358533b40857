import numpy as np
import pytest

from mfglab.dn_map import (
    PartialDataSpec, compress, default_partial_spec, evaluate_dn,
    evaluate_partial_dn, flux_pairing, flux_trace, linearized_dn_matrix,
    save_dn_csv, trig_basis,
)
from mfglab.elliptic import DiscreteOperator
from mfglab.errors import ParameterError, SupportViolation
from mfglab.field import (
    ScalarField, boundary_l2_norm, constant_field, constant_trace, make_grid,
    trace_from_function,
)
from mfglab.linearize import first_order
from mfglab.mfg_forward import FSeries, MfgCoefficients


def _coeffs(grid, k=0.0, r=0.0, F=None):
    return MfgCoefficients(
        v=1.0,
        k=k if isinstance(k, ScalarField) else constant_field(grid, k),
        r=r if isinstance(r, ScalarField) else constant_field(grid, r),
        F=F or FSeries())


@pytest.fixture(scope="module")
def grid2():
    return make_grid(2, 12)


def test_basis_counts_and_norms(grid2):
    b = trig_basis(grid2, max_freq=4)
    assert b.size == 4 * 5  # 2*dim faces, 5 one-dimensional modes each in 2D
    sups = np.max(np.abs(b.traces), axis=1)
    assert np.allclose(sups, 1.0)
    assert b.gram_condition() < 1e8
    g3 = make_grid(3, 6)
    b3 = trig_basis(g3, max_freq=4)
    assert b3.size == 6 * 25
    assert b3.size <= 2 * 3 * 25


def test_zero_map(grid2):
    t_u, t_m = evaluate_dn(_coeffs(grid2), constant_trace(grid2, 0.0),
                           constant_trace(grid2, 0.0))
    assert boundary_l2_norm(t_u) == 0.0
    assert boundary_l2_norm(t_m) == 0.0


def test_constant_data_harmonic(grid2):
    # k = r = 0: constants are discrete-harmonic, fluxes vanish
    t_u, t_m = evaluate_dn(_coeffs(grid2), constant_trace(grid2, 0.04),
                           constant_trace(grid2, 0.05))
    assert t_u.sup_norm() < 1e-12
    assert t_m.sup_norm() < 1e-12


def test_matrix_constant_trace_r_zero(grid2):
    basis = trig_basis(grid2, max_freq=2)
    dn = linearized_dn_matrix(_coeffs(grid2, r=0.0), basis, "m")
    coef = np.zeros(basis.size)
    const_cols = [i for i, lab in enumerate(basis.labels) if lab[2] == (0,)]
    coef[const_cols] = 1.0  # sums to the all-ones trace
    assert np.allclose(basis.combine(coef).values, 1.0)
    assert dn.apply(coef).sup_norm() < 1e-10


def test_matrix_matches_direct_solve(grid2):
    basis = trig_basis(grid2, max_freq=2)
    coeffs = _coeffs(grid2, r=1.0)
    dn = linearized_dn_matrix(coeffs, basis, "m")
    j = 7
    op = DiscreteOperator(grid2, 1.0, coeffs.r.values, None)
    w = op.solve(np.zeros(grid2.num_nodes), basis.traces[j])
    direct = flux_trace(ScalarField(grid2, w))
    assert np.max(np.abs(dn.data[:, j] - direct.values)) < 1e-10
    assert boundary_l2_norm(direct) > 0


def test_matrix_sensitivity_to_bump(grid2):
    basis = trig_basis(grid2, max_freq=2)
    r1 = constant_field(grid2, 1.0)
    bump = np.exp(-np.sum((grid2.coords - 0.5) ** 2, axis=1) / 0.02)
    r2 = ScalarField(grid2, r1.values + 0.5 * bump)
    d1 = linearized_dn_matrix(_coeffs(grid2, r=r1), basis, "m")
    d2 = linearized_dn_matrix(_coeffs(grid2, r=r2), basis, "m")
    assert np.linalg.norm(d1.data - d2.data) > 1e3 * 1e-10


def test_compression_symmetry(grid2):
    basis = trig_basis(grid2, max_freq=3)
    k = ScalarField(grid2, 1.0 + 0.5 * grid2.coords[:, 0])
    dn = linearized_dn_matrix(_coeffs(grid2, k=k), basis, "u")
    G = compress(dn, basis)
    asym = np.max(np.abs(G - G.T)) / np.max(np.abs(G))
    assert asym < 1e-8


def test_monotonicity_in_r(grid2):
    basis = trig_basis(grid2, max_freq=2)
    d0 = linearized_dn_matrix(_coeffs(grid2, r=1.0), basis, "m")
    d1 = linearized_dn_matrix(_coeffs(grid2, r=2.0), basis, "m")
    q0 = np.diag(compress(d0, basis))
    q1 = np.diag(compress(d1, basis))
    diffs = q1 - q0
    assert np.all(diffs > 0) or np.all(diffs < 0)


def test_green_identity_flux_pairing(grid2):
    # the adjoint-exactness statement behind the measurement convention
    rng = np.random.default_rng(42)
    g = grid2
    r1 = ScalarField(g, 1.0 + rng.uniform(0, 1, g.num_nodes))
    r2 = ScalarField(g, 1.0 + rng.uniform(0, 1, g.num_nodes))
    data = trace_from_function(g, lambda x, y: np.sin(np.pi * x) + 1.2)
    zdat = trace_from_function(g, lambda x, y: np.cos(2 * np.pi * y))
    op1 = DiscreteOperator(g, 1.0, r1.values, None)
    op2 = DiscreteOperator(g, 1.0, r2.values, None)
    zero = np.zeros(g.num_nodes)
    m1 = op1.solve(zero, data.values)
    m2 = op2.solve(zero, data.values)
    z = op1.solve(zero, zdat.values)
    I = g.interior_nodes
    volume = g.h ** g.dim * np.sum((r2.values[I] - r1.values[I]) * m2[I] * z[I])
    t1 = flux_trace(ScalarField(g, m1)).values
    t2 = flux_trace(ScalarField(g, m2)).values
    boundary = flux_pairing(g, 1.0, t1 - t2, z[g.boundary_nodes])
    assert abs(volume - boundary) / abs(volume) < 1e-8


def test_nonlinear_matches_linearized_to_second_order(grid2):
    # Taylor remainder: || DN(eps f, eps g) - eps * DN'(f, g) || = O(eps^2)
    k = ScalarField(grid2, 1.0 + 0.3 * grid2.coords[:, 1])
    r = ScalarField(grid2, 0.7 + 0.2 * grid2.coords[:, 0])
    F = FSeries(((2, constant_field(grid2, 1.0)),))
    coeffs = MfgCoefficients(v=1.0, k=k, r=r, F=F)
    f = trace_from_function(grid2, lambda x, y: 0.5 * np.sin(np.pi * x))
    gd = trace_from_function(grid2, lambda x, y: 0.5 * (1.2 + np.cos(np.pi * y)) / 2.2)
    u1, m1 = first_order(coeffs, f, gd)
    lin_u = flux_trace(u1).values
    lin_m = flux_trace(m1).values
    errs = []
    for eps in (0.04, 0.02):
        fe = f.__class__(grid2, eps * f.values)
        ge = gd.__class__(grid2, eps * gd.values)
        tu, tm = evaluate_dn(coeffs, fe, ge)
        err = (np.linalg.norm(tu.values - eps * lin_u)
               + np.linalg.norm(tm.values - eps * lin_m))
        errs.append(err)
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_partial_spec_validation(grid2):
    spec = default_partial_spec(grid2, (1.0, 0.0), 0.2)
    assert spec.input_region.mask.sum() > 0
    from mfglab.field import boundary_region
    too_small = boundary_region(grid2, (1.0, 0.0), 0.9, +1)
    with pytest.raises(ParameterError):
        PartialDataSpec(direction=np.array([1.0, 0.0]), eps0=0.2,
                        input_region=too_small, measure_region=spec.measure_region)


def test_partial_dn_zero_and_masking(grid2):
    coeffs = _coeffs(grid2, k=1.0, r=1.0)
    spec = default_partial_spec(grid2, (1.0, 0.0), 0.2)
    z = constant_trace(grid2, 0.0)
    tu, tm = evaluate_partial_dn(coeffs, z, z, spec)
    assert tu.sup_norm() == 0.0 and tm.sup_norm() == 0.0
    # supported data passes and masking equals restriction of the full map
    xb = grid2.coords[grid2.boundary_nodes]
    on_face = np.isclose(xb[:, 0], 1.0)
    fvals = np.where(on_face, 0.02 * np.sin(np.pi * xb[:, 1]), 0.0)
    f = z.__class__(grid2, fvals)
    g = z.__class__(grid2, np.where(on_face, 0.02, 0.0))
    pu, pm = evaluate_partial_dn(coeffs, f, g, spec)
    fu, fm = evaluate_dn(coeffs, f, g)
    mask = spec.measure_region.mask
    assert np.array_equal(pu.values, np.where(mask, fu.values, 0.0))
    assert np.array_equal(pm.values, np.where(mask, fm.values, 0.0))


def test_partial_dn_support_violation(grid2):
    coeffs = _coeffs(grid2)
    spec = default_partial_spec(grid2, (1.0, 0.0), 0.2)
    xb = grid2.coords[grid2.boundary_nodes]
    on_wrong = np.isclose(xb[:, 0], 0.0)  # x=0 face is outside U+
    f = constant_trace(grid2, 0.0).__class__(
        grid2, np.where(on_wrong, 0.01, 0.0))
    with pytest.raises(SupportViolation):
        evaluate_partial_dn(coeffs, f, constant_trace(grid2, 0.0), spec)


def test_dn_csv(tmp_path, grid2):
    basis = trig_basis(grid2, max_freq=1)
    dn = linearized_dn_matrix(_coeffs(grid2, r=1.0), basis, "m")
    p = tmp_path / "dn.csv"
    save_dn_csv(dn, p)
    lines = p.read_text().strip().splitlines()
    assert lines[0] == "row,col,value"
    assert len(lines) == 1 + dn.data.size
