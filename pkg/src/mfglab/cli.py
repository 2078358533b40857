"""Config-driven experiment runner.

One JSON document describes an experiment (forward solve, DN assembly,
linearization audit, CGO decay sweep, reconstruction campaign, or
partial-data cone run); `mfglab run cfg.json` executes it and writes CSV
outputs plus a manifest with hashes, `mfglab verify cfg.json` validates the
config without solving.  Exit codes: 0 success, 1 numerical failure,
2 configuration error.  Outputs are deterministic for a fixed seed.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .cgo import CgoParams, build_cgo, build_vanishing_cgo, orthogonal_triplet
from .dn_map import (
    default_partial_spec, linearized_dn_matrix, save_dn_csv, trig_basis,
)
from .errors import MfgLabError, ParameterError
from .field import (
    BoundaryTrace, ScalarField, boundary_region, constant_field, l2_norm,
    load_field_csv, make_grid, save_field_csv,
)
from .linearize import EpsFamily, fd_derivative, first_order
from .mfg_forward import (
    FSeries, MfgCoefficients, NewtonOptions, mfg_residual, solve_mfg,
)
from .reconstruct import (
    ReconstructionOptions, cone_fourier_data, extract_fourier,
    make_linear_dn_oracle, make_partial_dn_oracle, make_second_order_oracle,
    make_third_order_oracle, reconstruct_F2, reconstruct_F3,
    reconstruct_coefficient,
)

log = logging.getLogger("mfglab")

KINDS = ("forward", "dnmap", "linearize", "cgo-sweep", "reconstruct",
         "partial-reconstruct")


# ---------------------------------------------------------------------------
# config handling

def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _require(cfg, key, errors, kind=None):
    node = cfg
    for part in key.split("."):
        if not isinstance(node, dict) or part not in node:
            where = f" (required for kind {kind})" if kind else ""
            errors.append(f"missing config key: {key}{where}")
            return None
        node = node[part]
    return node


def build_field(grid, spec, base_dir="."):
    if spec is None:
        return constant_field(grid, 0.0)
    kind = spec.get("type")
    if kind == "constant":
        return constant_field(grid, float(spec["value"]))
    if kind == "bump":
        center = np.asarray(spec.get("center", [0.5] * grid.dim), dtype=float)
        width = float(spec.get("width", 0.02))
        amp = float(spec["amplitude"])
        base = float(spec.get("base", 0.0))
        r2 = np.sum((grid.coords - center) ** 2, axis=1)
        return ScalarField(grid, base + amp * np.exp(-r2 / width))
    if kind == "file":
        return load_field_csv(os.path.join(base_dir, spec["path"]), grid)
    raise ParameterError(f"unknown field spec type {kind!r}")


def build_trace(grid, spec):
    if spec is None:
        return BoundaryTrace(grid, np.zeros(grid.num_boundary))
    kind = spec.get("type")
    xb = grid.coords[grid.boundary_nodes]
    if kind == "constant":
        return BoundaryTrace(grid, np.full(grid.num_boundary, float(spec["value"])))
    if kind == "trig":
        amp = float(spec["amplitude"])
        offset = float(spec.get("offset", 0.0))
        freq = spec.get("freq", [1] * grid.dim)
        vals = np.full(grid.num_boundary, 1.0)
        for a, q in enumerate(freq):
            vals = vals * np.cos(float(q) * np.pi * xb[:, a])
        return BoundaryTrace(grid, offset + amp * vals)
    raise ParameterError(f"unknown trace spec type {kind!r}")


def build_coefficients(grid, cfg, base_dir="."):
    spec = cfg.get("coefficients", {})
    v = float(spec.get("v", 1.0))
    k = build_field(grid, spec.get("k", {"type": "constant", "value": 0.0}), base_dir)
    r = build_field(grid, spec.get("r", {"type": "constant", "value": 0.0}), base_dir)
    terms = tuple((int(o), build_field(grid, fs, base_dir))
                  for o, fs in spec.get("F", []))
    return MfgCoefficients(v=v, k=k, r=r, F=FSeries(terms))


def _hidden_coefficients(grid, cfg, reference, base_dir="."):
    spec = cfg.get("hidden", {})
    k = build_field(grid, spec["k"], base_dir) if "k" in spec else reference.k
    r = build_field(grid, spec["r"], base_dir) if "r" in spec else reference.r
    if "F" in spec:
        F = FSeries(tuple((int(o), build_field(grid, fs, base_dir))
                          for o, fs in spec["F"]))
    else:
        F = reference.F
    return MfgCoefficients(v=reference.v, k=k, r=r, F=F)


def newton_options(cfg) -> NewtonOptions:
    n = cfg.get("newton", {})
    return NewtonOptions(
        delta=float(n.get("delta", 0.1)),
        tol=float(n.get("tol", 1e-10)),
        max_iter=int(n.get("max_iter", 20)),
        require_nonneg_g=bool(n.get("require_nonneg_g", False)))


def validate_config(cfg: dict) -> list:
    """Collected violations; empty means the config is runnable."""
    errors = []
    kind = cfg.get("kind")
    if kind not in KINDS:
        errors.append(f"config key 'kind' must be one of {KINDS}, got {kind!r}")
        return errors
    dim = _require(cfg, "grid.dim", errors)
    n_cells = _require(cfg, "grid.n_cells", errors)
    if errors:
        return errors
    if dim not in (2, 3):
        errors.append("grid.dim must be 2 or 3")
    if not isinstance(n_cells, int) or n_cells < 3:
        errors.append("grid.n_cells must be an integer >= 3")
    if kind in ("forward", "dnmap", "linearize"):
        delta = float(cfg.get("newton", {}).get("delta", 0.1))
        for key in ("f", "g"):
            spec = cfg.get("boundary_data", {}).get(key)
            amp = abs(float(spec.get("amplitude", spec.get("value", 0.0)))) \
                + abs(float(spec.get("offset", 0.0))) if spec else 0.0
            if amp > delta:
                errors.append(
                    f"boundary_data.{key} amplitude {amp} exceeds newton.delta {delta}")
    if kind in ("cgo-sweep", "reconstruct", "partial-reconstruct") and dim != 3:
        errors.append(f"grid.dim must be 3 for kind {kind}")
    if kind == "partial-reconstruct":
        cone = cfg.get("cone")
        if cone is None:
            errors.append("missing config key: cone (required for partial-reconstruct)")
        else:
            lam = np.asarray(cone.get("direction", []), dtype=float)
            if lam.shape != (3,) or abs(np.linalg.norm(lam) - 1.0) > 1e-9:
                errors.append("cone.direction must be a 3D unit vector")
            eps0 = float(cone.get("eps0", 0.0))
            if not (0.0 < eps0 < 0.5):
                errors.append("cone.eps0 must lie in (0, 0.5)")
    if "seed" in cfg and not isinstance(cfg["seed"], int):
        errors.append("seed must be a 64-bit integer")
    return errors


# ---------------------------------------------------------------------------
# output helpers

class RunWriter:
    def __init__(self, out_dir, cfg):
        self.out_dir = out_dir
        self.cfg = cfg
        self.outputs = []
        self.stages = {}
        self.checks = {}
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name):
        self.outputs.append(name)
        return os.path.join(self.out_dir, name)

    def write_rows(self, name, header, rows):
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            fh.write(header + "\n")
            for row in rows:
                fh.write(",".join(repr(x) if isinstance(x, float) else str(x)
                                  for x in row) + "\n")

    def stage(self, name):
        writer = self

        class _Stage:
            def __enter__(self):
                self.t0 = time.perf_counter()
                log.info("stage %s started", name)
                return self

            def __exit__(self, *exc):
                writer.stages[name] = time.perf_counter() - self.t0
                log.info("stage %s finished in %.2fs", name, writer.stages[name])
                return False

        return _Stage()

    def finish(self):
        manifest = {
            "config_hash": config_hash(self.cfg),
            "version": __version__,
            "stages": self.stages,
            "checks": self.checks,
            "outputs": [],
        }
        for name in self.outputs:
            p = os.path.join(self.out_dir, name)
            digest = hashlib.sha256(open(p, "rb").read()).hexdigest()
            manifest["outputs"].append({"path": name, "sha256": digest})
        with open(os.path.join(self.out_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        return manifest


def _noise_wrapper(oracle, sigma, rng):
    if sigma <= 0:
        return oracle

    def noisy(trace_values):
        t = oracle(trace_values)
        noise = rng.normal(0.0, sigma, len(t))
        if np.iscomplexobj(t):
            noise = noise + 1j * rng.normal(0.0, sigma, len(t))
        return t + noise

    return noisy


def parallel_map(fn, items, workers):
    """Order-preserving map over items with a thread pool."""
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# experiment kinds

def run_forward(cfg, writer, base_dir):
    grid = make_grid(cfg["grid"]["dim"], cfg["grid"]["n_cells"])
    coeffs = build_coefficients(grid, cfg, base_dir)
    f = build_trace(grid, cfg.get("boundary_data", {}).get("f"))
    g = build_trace(grid, cfg.get("boundary_data", {}).get("g"))
    opts = newton_options(cfg)
    with writer.stage("solve"):
        sol = solve_mfg(coeffs, f, g, opts)
    save_field_csv(sol.u, writer.path("u.csv"))
    save_field_csv(sol.m, writer.path("m.csv"))
    ru, rm = mfg_residual(coeffs, sol.u, sol.m, f, g)
    resid = max(np.max(np.abs(ru.values)), np.max(np.abs(rm.values)))
    writer.write_rows("metrics.csv", "name,value", [
        ("newton_iterations", sol.newton_iterations),
        ("final_residual", float(sol.final_residual)),
        ("independent_residual", float(resid)),
        ("min_m", float(sol.m.values.min())),
    ])
    writer.checks["residual_below_tol"] = bool(resid <= 10 * opts.tol)


def run_dnmap(cfg, writer, base_dir):
    grid = make_grid(cfg["grid"]["dim"], cfg["grid"]["n_cells"])
    coeffs = build_coefficients(grid, cfg, base_dir)
    freq = int(cfg.get("dnmap", {}).get("basis_freq", 4))
    sigma = float(cfg.get("noise", {}).get("sigma", 0.0))
    rng = np.random.default_rng(int(cfg.get("noise", {}).get("seed",
                                                             cfg.get("seed", 0))))
    basis = trig_basis(grid, freq)
    with writer.stage("assemble"):
        workers = cfg.get("workers") or 1
        dns = parallel_map(
            lambda slot: linearized_dn_matrix(coeffs, basis, slot),
            ["u", "m"], workers)
    for dn in dns:
        if sigma > 0:
            noisy = dn.data + rng.normal(0.0, sigma, dn.data.shape)
            dn = dn.__class__(grid=dn.grid, data=noisy, slot=dn.slot)
        save_dn_csv(dn, writer.path(f"dn_{dn.slot}.csv"))
    writer.write_rows("metrics.csv", "name,value", [
        ("basis_size", basis.size),
        ("gram_condition", float(basis.gram_condition())),
        ("noise_sigma", sigma),
    ])
    writer.checks["basis_well_conditioned"] = bool(basis.gram_condition() < 1e8)


def run_linearize(cfg, writer, base_dir):
    grid = make_grid(cfg["grid"]["dim"], cfg["grid"]["n_cells"])
    coeffs = build_coefficients(grid, cfg, base_dir)
    lin = cfg.get("linearize", {})
    eps_list = [float(e) for e in lin.get("eps_list", [1e-2, 5e-3, 2.5e-3])]
    f1 = build_trace(grid, lin.get("f1", {"type": "trig", "amplitude": 1.0}))
    g1 = build_trace(grid, lin.get("g1", {"type": "trig", "amplitude": 0.4,
                                          "offset": 1.0}))
    ref = first_order(coeffs, f1, g1)
    ref_norm = l2_norm(ref[0]) + l2_norm(ref[1])
    rows = []
    with writer.stage("sweep"):
        for eps in eps_list:
            fam = EpsFamily(((f1, g1),), (eps,))
            du, dm = fd_derivative(coeffs, fam, {1}, newton_options(cfg))
            err = (l2_norm(ScalarField(grid, du.values - ref[0].values))
                   + l2_norm(ScalarField(grid, dm.values - ref[1].values))) / ref_norm
            rows.append((eps, err))
    writer.write_rows("convergence.csv", "x,y", rows)
    ratios = [rows[i][1] / rows[i + 1][1] for i in range(len(rows) - 1)]
    writer.write_rows("metrics.csv", "name,value",
                      [(f"ratio_{i}", r) for i, r in enumerate(ratios)])
    writer.checks["first_order_rate"] = all(1.5 <= r <= 2.5 for r in ratios)


def run_cgo_sweep(cfg, writer, base_dir):
    grid = make_grid(cfg["grid"]["dim"], cfg["grid"]["n_cells"])
    sweep = cfg.get("cgo", {})
    c = build_field(grid, sweep.get("c", {"type": "constant", "value": 1.0}), base_dir)
    v = float(cfg.get("coefficients", {}).get("v", 1.0))
    xi = 2 * np.pi * np.asarray(sweep.get("xi", [0, 0, 1]), dtype=float)
    h_list = [float(h) for h in sweep.get("h_list", [0.5, 0.25, 0.125])]
    variant = sweep.get("variant", "standard")
    amplitude = sweep.get("amplitude", "one")
    lam, eta = orthogonal_triplet(xi)
    rows = []
    with writer.stage("sweep"):
        for h in h_list:
            if variant == "vanishing":
                params = CgoParams(lam=lam, eta=eta, xi=xi, h=h, sign=-1)
                region = boundary_region(grid, lam, float(sweep.get("eps0", 0.5)), +1)
                sol = build_vanishing_cgo(c, v, params, region)
            else:
                params = CgoParams(lam=lam, eta=eta, xi=xi, h=h, sign=+1)
                sol = build_cgo(c, v, params, amplitude)
            rows.append((h, sol.remainder_norm, sol.residual_rel))
    writer.write_rows("decay.csv", "h,remainder_norm,residual", rows)
    norms = [r[1] for r in rows]
    writer.checks["remainder_decreasing"] = all(
        a > b or a < 1e-9 for a, b in zip(norms, norms[1:]))


def run_reconstruct(cfg, writer, base_dir):
    grid = make_grid(cfg["grid"]["dim"], cfg["grid"]["n_cells"])
    reference = build_coefficients(grid, cfg, base_dir)
    hidden = _hidden_coefficients(grid, cfg, reference, base_dir)
    rec = cfg.get("reconstruction", {})
    opts = ReconstructionOptions(
        cutoff=int(rec.get("cutoff", 4)),
        h=float(rec.get("h", 0.25)),
        richardson=bool(rec.get("richardson", True)),
        positivity_floor=float(rec.get("positivity_floor", 1e-3)))
    sigma = float(cfg.get("noise", {}).get("sigma", 0.0))
    rng = np.random.default_rng(int(cfg.get("noise", {}).get("seed",
                                                             cfg.get("seed", 0))))
    slots = rec.get("slots", ["r"])
    metrics = []
    for slot in slots:
        with writer.stage(f"reconstruct_{slot}"):
            if slot in ("r", "k"):
                oracle = _noise_wrapper(
                    make_linear_dn_oracle(hidden, "m" if slot == "r" else "u"),
                    sigma, rng)
                truth = hidden.r if slot == "r" else hidden.k
                res = reconstruct_coefficient(slot, oracle, reference, opts, truth=truth)
                ref_field = reference.r if slot == "r" else reference.k
            elif slot == "F2":
                g1 = build_trace(grid, rec.get("probe_g1",
                                               {"type": "constant", "value": 1.0}))
                oracle = _noise_wrapper(make_second_order_oracle(hidden, g1), sigma, rng)
                truth_field = hidden.F.coefficient(2)
                truth = truth_field if truth_field is not None else constant_field(grid, 0.0)
                res = reconstruct_F2(oracle, reference, g1, opts, truth=truth)
                ref2 = reference.F.coefficient(2)
                ref_field = ref2 if ref2 is not None else constant_field(grid, 0.0)
            elif slot == "F3":
                g1 = build_trace(grid, rec.get("probe_g1",
                                               {"type": "constant", "value": 1.0}))
                g2 = build_trace(grid, rec.get("probe_g2",
                                               {"type": "constant", "value": 0.8}))
                oracle = _noise_wrapper(make_third_order_oracle(hidden, g1, g2),
                                        sigma, rng)
                truth_field = hidden.F.coefficient(3)
                truth = truth_field if truth_field is not None else constant_field(grid, 0.0)
                res = reconstruct_F3(oracle, reference, g1, g2, opts, truth=truth)
                ref3 = reference.F.coefficient(3)
                ref_field = ref3 if ref3 is not None else constant_field(grid, 0.0)
            else:
                raise ParameterError(f"unknown reconstruction slot {slot!r}")
        save_field_csv(res.field, writer.path(f"recovered_{slot}.csv"))
        fdata = res.diagnostics.get("fourier")
        if fdata is not None:
            rows = [(xi[0], xi[1], xi[2], float(val.real), float(val.imag))
                    for xi, val in zip(fdata.frequencies, fdata.values)]
            writer.write_rows(f"fourier_{slot}.csv",
                              "xi1,xi2,xi3,value_re,value_im", rows)
        disc = res.field.values - ref_field.values
        truth_disc = truth.values - ref_field.values
        denom = l2_norm(ScalarField(grid, truth_disc))
        disc_rel = (l2_norm(ScalarField(grid, disc - truth_disc)) / denom
                    if denom > 0 else float(l2_norm(ScalarField(grid, disc))))
        metrics.append((f"{slot}_rel_error", float(res.rel_error)))
        metrics.append((f"{slot}_discrepancy_rel_error", float(disc_rel)))
        metrics.append((f"{slot}_imag_residual",
                        float(res.diagnostics["imag_residual"])))
        limit = rec.get("max_rel_error")
        if limit is not None:
            writer.checks[f"{slot}_within_limit"] = bool(res.rel_error <= float(limit))
    metrics.append(("cutoff", opts.cutoff))
    metrics.append(("h", opts.h))
    writer.write_rows("metrics.csv", "name,value", metrics)


def run_partial_reconstruct(cfg, writer, base_dir):
    grid = make_grid(cfg["grid"]["dim"], cfg["grid"]["n_cells"])
    reference = build_coefficients(grid, cfg, base_dir)
    hidden = _hidden_coefficients(grid, cfg, reference, base_dir)
    cone_cfg = cfg["cone"]
    lam = np.asarray(cone_cfg["direction"], dtype=float)
    lam /= np.linalg.norm(lam)
    spec = default_partial_spec(grid, lam, float(cone_cfg["eps0"]))
    rec = cfg.get("reconstruction", {})
    opts = ReconstructionOptions(
        cutoff=int(rec.get("cutoff", 2)),
        h=float(rec.get("h", 0.125)),
        runge_basis_freq=int(rec.get("runge_basis_freq", 4)))
    slot = rec.get("slots", ["r"])[0]
    with writer.stage("cone"):
        partial = make_partial_dn_oracle(hidden, "m" if slot == "r" else "u", spec)
        cone = cone_fourier_data(slot, partial, reference, spec,
                                 xi_count=int(cone_cfg.get("xi_count", 3)),
                                 opts=opts,
                                 cap_samples=int(cone_cfg.get("cap_samples", 1)))
    with writer.stage("full_comparison"):
        full = make_linear_dn_oracle(hidden, "m" if slot == "r" else "u")

        def dirs(xi):
            eta = np.cross(lam, xi / np.linalg.norm(xi))
            return lam, eta / np.linalg.norm(eta)

        on_axis = [i for i, d in enumerate(cone.diagnostics["direction"])
                   if np.allclose(d, lam)]
        shared = cone.frequencies[on_axis]
        fullv = extract_fourier(slot, full, reference, shared, opts.h,
                                directions=dirs).values
    rows = [(xi[0], xi[1], xi[2], float(v.real), float(v.imag))
            for xi, v in zip(cone.frequencies, cone.values)]
    writer.write_rows(f"cone_{slot}.csv", "xi1,xi2,xi3,value_re,value_im", rows)
    gaps = np.abs(cone.values[on_axis] - fullv) / np.maximum(np.abs(fullv), 1e-300)
    audit_high = max(abs(x) for x in cone.diagnostics["region_high"])
    writer.write_rows("metrics.csv", "name,value", [
        ("max_shared_gap", float(np.max(gaps))),
        ("audit_region_high", float(audit_high)),
        ("max_runge_error", float(max(cone.diagnostics["runge_error"]))),
        ("num_frequencies", len(cone.frequencies)),
    ])
    writer.checks["boundary_term_audit"] = bool(audit_high <= 1e-8)
    limit = cone_cfg.get("max_shared_gap")
    if limit is not None:
        writer.checks["cone_matches_full"] = bool(np.max(gaps) <= float(limit))


RUNNERS = {
    "forward": run_forward,
    "dnmap": run_dnmap,
    "linearize": run_linearize,
    "cgo-sweep": run_cgo_sweep,
    "reconstruct": run_reconstruct,
    "partial-reconstruct": run_partial_reconstruct,
}


# ---------------------------------------------------------------------------
# entry points

def _load_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParameterError(f"cannot read config {path}: {exc}") from exc


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    errors = validate_config(cfg)
    if errors:
        for e in errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    out_dir = args.out or cfg.get("out_dir", "out")
    if args.workers is not None:
        cfg["workers"] = args.workers
    writer = RunWriter(out_dir, cfg)
    base_dir = os.path.dirname(os.path.abspath(args.config))
    try:
        RUNNERS[cfg["kind"]](cfg, writer, base_dir)
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MfgLabError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    manifest = writer.finish()
    failed = [k for k, ok in manifest["checks"].items() if not ok]
    for name in manifest["checks"]:
        print(f"check {name}: {'pass' if name not in failed else 'FAIL'}")
    if failed:
        return 1
    print(f"outputs written to {out_dir}")
    return 0


def cmd_verify(args) -> int:
    cfg = _load_config(args.config)
    errors = validate_config(cfg)
    if errors:
        for e in errors:
            print(f"violation: {e}", file=sys.stderr)
        return 2
    plan = {
        "kind": cfg["kind"],
        "grid": cfg["grid"],
        "out_dir": cfg.get("out_dir", "out"),
        "config_hash": config_hash(cfg),
    }
    print(json.dumps(plan, indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfglab",
        description="stationary MFG boundary-inverse-problem laboratory")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker count for embarrassingly parallel stages")
    parser.add_argument("--out", default=None, help="output directory override")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_run.set_defaults(fn=cmd_run)
    p_ver = sub.add_parser("verify", help="validate a config without solving")
    p_ver.add_argument("config")
    p_ver.set_defaults(fn=cmd_verify)
    args = parser.parse_args(argv)

    level = os.environ.get("MFGLAB_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.fn(args)
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MfgLabError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
