"""Scenario-driven command line interface.

Scenarios are JSON documents with chain, observable, analysis and output
blocks.  Each subcommand maps onto one module pipeline, writes a JSON
report plus CSV curves into the output directory, and exits 0 when every
asserted check passed, 2 when a check failed, and 1 on input errors.
All numbers in reports carry 17 significant digits.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from markovllt import chain as chain_mod
from markovllt import llt as llt_mod
from markovllt import matrix_products as mp_mod
from markovllt import observables as obs_mod
from markovllt import processes as irf_mod
from markovllt import sim as sim_mod
from markovllt import transfer as transfer_mod
from markovllt.chain import ChainSpec, ModelError

SCHEMA_VERSION = 1

_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM}
_MAT = {"type": "array", "items": _VEC}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "chain"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "chain": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["iid", "periodic", "random_floor", "explicit"]},
                "weights": _VEC,
                "n_states": {"type": "integer", "minimum": 2},
                "n_steps": {"type": "integer", "minimum": 1},
                "a": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "kernels": {"type": "array", "items": _MAT},
                "initial": _VEC,
                "states": {"type": "array", "items": {"type": "array"}},
                "zeta": _NUM,
                "seed": {"type": "integer"},
            },
        },
        "observable": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["coordinate", "product_window", "linear_process",
                                   "irf", "matrix_log_lambda", "table"]},
                "values": _VEC,
                "scale_power": _NUM,
                "count": {"type": "integer", "minimum": 1},
                "window": {"type": "integer", "minimum": 1},
                "coeffs": {"type": "object",
                           "patternProperties": {r"^-?\d+$": _NUM},
                           "additionalProperties": False},
                "base_values": _VEC,
                "truncation": {"type": "integer", "minimum": 0},
                "tables": {"type": "array"},
                "pasts": {"type": "array", "items": {"type": "integer"}},
                "futures": {"type": "array", "items": {"type": "integer"}},
                "coef": _VEC,
                "intercept": _VEC,
                "invariant": _VEC,
                "matrices": {"type": "array", "items": _MAT},
                "bound": _NUM,
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_grid": {"type": "array", "items": {"type": "integer"}},
                "n": {"type": "integer"},
                "t_hi": _NUM,
                "t_step": _NUM,
                "t_lo": _NUM,
                "delta": _NUM,
                "beta": _NUM,
                "lattice": {"type": "boolean"},
                "theta": _NUM,
                "block_min": {"type": "integer"},
                "freq_lo": _NUM,
                "freq_hi": _NUM,
                "samples": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "threads": {"type": "integer", "minimum": 1},
                "z": _VEC,
                "burn_in": {"type": "integer"},
                "eps": _NUM,
                "eps_grid": _VEC,
                "window": {"type": "integer"},
                "dev_seed": {"type": "integer"},
                "n_dev": {"type": "integer"},
                "kernel_half_width": _NUM,
                "tolerances": {"type": "object",
                               "additionalProperties": _NUM},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["json", "csv"]}},
            },
        },
    },
}


class ScenarioError(ValueError):
    pass


def validate_scenario(doc: dict) -> None:
    validator = Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for e in errors[:8]:
            path = "/".join(str(p) for p in e.absolute_path) or "<root>"
            msgs.append(f"  field {path}: {e.message}")
        raise ScenarioError("scenario failed validation:\n" + "\n".join(msgs))


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_chain(block: dict) -> ChainSpec:
    kind = block["kind"]
    a = float(block.get("a", 0.5))
    n = int(block.get("n_steps", 200))
    if kind == "iid":
        w = np.asarray(block["weights"], dtype=float)
        kern = np.tile(w, (len(w), 1))
        return ChainSpec.repeating(n, [kern], w, a)
    if kind == "periodic":
        kernels = [np.asarray(k, dtype=float) for k in block["kernels"]]
        init = np.asarray(block["initial"], dtype=float)
        return ChainSpec.repeating(n, kernels, init, a)
    if kind == "random_floor":
        s = int(block["n_states"])
        zeta = float(block["zeta"])
        if not 0.0 < zeta <= 1.0 / s:
            raise ScenarioError("zeta must lie in (0, 1/n_states]")
        rng = np.random.default_rng(int(block.get("seed", 0)))
        kernels = []
        for _ in range(n):
            raw = rng.random((s, s))
            raw /= raw.sum(axis=1, keepdims=True)
            kernels.append(zeta * s * np.full((s, s), 1.0 / s)
                           + (1.0 - zeta * s) * raw)
        init = np.full(s, 1.0 / s)
        states = [tuple(range(s))] * (n + 1)
        return ChainSpec(tuple(states), tuple(kernels), init, a)
    if kind == "explicit":
        states = tuple(tuple(s) for s in block["states"])
        kernels = tuple(np.asarray(k, dtype=float) for k in block["kernels"])
        return ChainSpec(states, kernels, np.asarray(block["initial"], dtype=float), a)
    raise ScenarioError(f"unknown chain kind {kind!r}")


def build_observable(block: dict, chain: ChainSpec):
    kind = block["kind"]
    count = block.get("count")
    if kind == "coordinate":
        m = count if count is not None else chain.horizon
        vals = None
        if "values" in block:
            vals = [np.asarray(block["values"], dtype=float)] * m
        scale = None
        if "scale_power" in block:
            p = float(block["scale_power"])
            scale = [(j + 1.0) ** p for j in range(m)]
        return obs_mod.coordinate_observable(chain, values=vals, count=m, scale=scale)
    if kind == "product_window":
        m = count if count is not None else chain.horizon - 1
        w = int(block.get("window", 2))
        tabs = []
        for j in range(m):
            grids = np.meshgrid(*[
                np.array([float(s) for s in chain.states[i]])
                for i in range(j, j + w)], indexing="ij")
            tabs.append(np.prod(grids, axis=0))
        return obs_mod.WindowObservable(tuple(tabs), (0,) * m, (w - 1,) * m)
    if kind == "linear_process":
        coeffs = {int(k): float(v) for k, v in block["coeffs"].items()}
        base = [np.asarray(block["base_values"], dtype=float)] * (chain.horizon + 1)
        trunc = int(block.get("truncation", max(abs(k) for k in coeffs)))
        obs, _ = obs_mod.build_linear_process(coeffs, base, trunc, chain, count=count)
        return obs
    if kind == "irf":
        fam = irf_family_from(block, chain)
        w = int(block.get("window", 8))
        obs, _ = irf_mod.irf_window_observable(fam, chain, w, count=count)
        return obs
    if kind == "matrix_log_lambda":
        fam = matrix_family_from(block, chain)
        w = int(block.get("window", 4))
        pf = mp_mod.sequential_pf(fam, chain, w)
        if pf.lambda_obs is None:
            raise ScenarioError("window too large to tabulate the growth factors")
        tabs = tuple(np.log(t) for t in pf.lambda_obs.tables)
        return obs_mod.WindowObservable(tabs, pf.lambda_obs.pasts,
                                        pf.lambda_obs.futures)
    if kind == "table":
        tabs = tuple(np.asarray(t, dtype=float) for t in block["tables"])
        return obs_mod.WindowObservable(tabs, tuple(block["pasts"]),
                                        tuple(block["futures"]))
    raise ScenarioError(f"unknown observable kind {kind!r}")


def irf_family_from(block: dict, chain: ChainSpec) -> irf_mod.IrfFamily:
    inv = tuple(float(x) for x in block["invariant"]) if "invariant" in block else None
    return irf_mod.IrfFamily.homogeneous_affine(
        np.asarray(block["coef"], dtype=float),
        np.asarray(block["intercept"], dtype=float),
        chain.horizon + 1, invariant=inv)


def matrix_family_from(block: dict, chain: ChainSpec) -> mp_mod.PositiveMatrixFamily:
    mats = [np.asarray(m, dtype=float) for m in block["matrices"]]
    dim = mats[0].shape[0]
    bound = float(block.get("bound", max(max(m.max(), 1.0 / m.min()) for m in mats)))
    return mp_mod.PositiveMatrixFamily.homogeneous(dim, bound, mats, chain.horizon)


# ---------------------------------------------------------------------------
# report serialisation
# ---------------------------------------------------------------------------


_FLOAT_SENTINEL = chr(0)


def _wrap_floats(obj):
    if isinstance(obj, dict):
        return {k: _wrap_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_wrap_floats(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        if math.isfinite(obj):
            return f"{_FLOAT_SENTINEL}{float(obj):.17g}{_FLOAT_SENTINEL}"
        return str(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _wrap_floats(obj.tolist())
    if isinstance(obj, complex):
        return {"re": _wrap_floats(obj.real), "im": _wrap_floats(obj.imag)}
    return obj


def dumps_report(obj) -> str:
    text = json.dumps(_wrap_floats(obj), indent=2, sort_keys=True)
    return re.sub(r'"\\u0000(.*?)\\u0000"', r"\1", text)


def write_report(out_dir: Path, name: str, obj) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{name}.json").write_text(dumps_report(obj) + "\n")


def write_curve(out_dir: Path, name: str, ns, values, stderr=None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["n,value" + (",stderr" if stderr is not None else "")]
    for i, n in enumerate(ns):
        row = f"{n},{values[i]:.17g}"
        if stderr is not None:
            row += f",{stderr[i]:.17g}"
        lines.append(row)
    (out_dir / f"{name}.csv").write_text("\n".join(lines) + "\n")


def check_entry(name: str, measured, tolerance, passed: bool, provenance: str) -> dict:
    return {"check": name, "measured": measured, "tolerance": tolerance,
            "pass": bool(passed), "provenance": provenance}


# ---------------------------------------------------------------------------
# subcommand pipelines
# ---------------------------------------------------------------------------


def _analysis(scn: dict) -> dict:
    return scn.get("analysis", {})


def _tolerances(scn: dict, overrides: dict) -> dict:
    tol = dict(_analysis(scn).get("tolerances", {}))
    tol.update(overrides)
    return tol


def run_validate(scn, chain, obs, out, seed, threads, tol):
    rep = chain_mod.validate_assumptions(chain)
    checks = [
        check_entry("contraction", rep.delta, 1.0, rep.pass_contraction, "exact"),
        check_entry("ellipticity", rep.zeta, 0.0, rep.pass_ellipticity, "exact"),
        check_entry("conditional-domination", rep.cond_constant, 1e6,
                    rep.pass_cond, "exact"),
    ]
    mix = []
    if rep.pass_contraction:
        for n in range(1, min(7, chain.horizon)):
            emp = chain_mod.empirical_reverse_phi(chain, n)
            bound = chain_mod.reverse_phi_bound(rep, n)
            mix.append((n, emp, bound))
            checks.append(check_entry(f"mixing-bound-n{n}", emp, bound,
                                      emp <= bound + 1e-12, "exact"))
    doc = {
        "delta": rep.delta, "zeta": rep.zeta, "n0": rep.n0,
        "cond_constant": rep.cond_constant,
        "dobrushin": list(rep.pi),
        "failing_step": rep.failing_step,
        "checks": checks,
    }
    write_report(out, "validate", doc)
    if mix:
        write_curve(out, "mixing_bound", [m[0] for m in mix], [m[1] for m in mix])
    if not (rep.pass_contraction and rep.pass_ellipticity):
        step = f" at step {rep.failing_step}" if rep.failing_step is not None else ""
        raise ModelError(f"standing assumptions fail{step}")
    return all(c["pass"] for c in checks)


def _default_n_grid(scn, chain, obs):
    grid = _analysis(scn).get("n_grid")
    if grid:
        return [int(n) for n in grid]
    top = min(len(obs), chain.horizon - obs.max_future)
    return sorted({max(1, top * k // 8) for k in range(1, 9)})


def run_moments(scn, chain, obs, out, seed, threads, tol):
    grid = _default_n_grid(scn, chain, obs)
    mom = llt_mod.exact_moments(chain, obs, grid)
    regime = llt_mod.variance_regime(chain, obs, grid)
    doc = {
        "n_grid": list(mom.ns),
        "mean": mom.mean, "variance": mom.variance,
        "third_central": mom.third_central,
        "regime": regime.regime, "tail_slope": regime.tail_slope,
        "eta": regime.eta,
        "checks": [check_entry("regime-classified", regime.regime, None,
                               regime.regime != "inconclusive", "exact")],
    }
    if regime.decomposition is not None:
        doc["decomposition_residual"] = regime.decomposition.residual_sup
        doc["sum_var_martingale"] = regime.decomposition.sum_var_martingale
    write_report(out, "moments", doc)
    write_curve(out, "variance", mom.ns, mom.variance)
    return regime.regime != "inconclusive"


def run_rpf(scn, chain, obs, out, seed, threads, tol):
    ana = _analysis(scn)
    rep = chain_mod.validate_assumptions(chain)
    n_max = min(40, chain.horizon - obs.max_future - 1)
    g = np.array([float(s) for s in chain.states[0]])
    dec = transfer_mod.rpf_decay(chain, g, 0, n_max, delta=rep.delta)
    zs = ana.get("z", [0.1])
    tol_resid = tol.get("rpf_residual", 1e-8)
    rpf_checks = [check_entry("decay-rate", dec.gamma_hat, dec.ceiling,
                              dec.gamma_hat <= dec.ceiling + 1e-12, "exact")]
    resids = {}
    gamma = max(dec.gamma_hat, 1e-6)
    burn = int(ana.get("burn_in", 0)) or obs_mod.default_truncation_depth(
        min(gamma + 0.15, 0.95), 1e-8)
    for zval in zs:
        tri = transfer_mod.complex_rpf(chain, obs, complex(zval))
        r = tri.interior_residual(min(burn, (len(tri.residual_profile) - 1) // 2))
        resids[str(zval)] = r
        rpf_checks.append(check_entry(f"interior-residual-z{zval}", r, tol_resid,
                                      r <= tol_resid, "exact"))
    mom = llt_mod.exact_moments(chain, obs, [len(obs)])
    deriv = transfer_mod.log_moment_derivative(chain, obs)
    rel = abs(deriv - mom.mean[0]) / max(abs(mom.mean[0]), 1e-12)
    rpf_checks.append(check_entry("log-derivative-vs-mean", rel,
                                  tol.get("rpf_derivative", 1e-6),
                                  rel <= tol.get("rpf_derivative", 1e-6), "exact"))
    doc = {"gamma_hat": dec.gamma_hat, "c_hat": dec.c_hat,
           "ceiling": dec.ceiling, "interior_residuals": resids,
           "burn_in": burn, "checks": rpf_checks}
    write_report(out, "rpf", doc)
    write_curve(out, "rpf_decay", dec.ns, dec.curve)
    return all(c["pass"] for c in rpf_checks)


def run_corange(scn, chain, obs, out, seed, threads, tol):
    ana = _analysis(scn)
    grid = _default_n_grid(scn, chain, obs)
    cor = llt_mod.corange_scan(
        chain, obs, float(ana.get("t_hi", 7.0)),
        float(ana.get("t_step", 1e-3)), grid,
        t_lo=ana.get("t_lo"))
    if cor.kind == "irreducible":
        doc = {"irreducible": True, "scan_max_t": cor.scan_hi,
               "scan_min_t": cor.scan_lo}
    elif cor.kind == "everything":
        doc = {"irreducible": False, "corange": "all-frequencies",
               "note": "variance stays bounded"}
    else:
        doc = {"irreducible": False, "t0": cor.t0, "h0": cor.h0,
               "detections": list(cor.detections),
               "integer_span_exceeds_one": cor.integer_span_exceeds_one}
    doc["checks"] = [check_entry("scan-completed", cor.kind, None, True, "exact")]
    write_report(out, "corange", doc)
    return True


def run_llt(scn, chain, obs, out, seed, threads, tol):
    ana = _analysis(scn)
    grid = _default_n_grid(scn, chain, obs)
    beta = ana.get("beta")
    checks = []
    if not obs.one_sided:
        rep = llt_mod.two_sided_llt(chain, obs, float(ana.get("t_hi", 7.0)),
                                    float(ana.get("t_step", 1e-3)), grid)
        checks = [
            check_entry("reduction-residual", rep.reduction_residual, 1e-12,
                        rep.reduction_residual <= 1e-12, "exact"),
            check_entry("char-domination", rep.char_domination_margin, 0.0,
                        rep.char_domination_ok, "certified-bound"),
            check_entry("corange-agreement", rep.corange_agree, None,
                        rep.corange_agree, "exact"),
        ]
        doc = {"mode": "two-sided", "cond_constant": rep.cond_constant,
               "regime": rep.regime.regime, "checks": checks}
        write_report(out, "llt", doc)
        return all(c["pass"] for c in checks)
    offsets = obs.step_offsets()
    if offsets is not None and beta is None:
        cor = llt_mod.corange_scan(chain, obs, float(ana.get("t_hi", 7.0)),
                                   float(ana.get("t_step", 1e-3)), grid)
        curve = llt_mod.lattice_llt_check(chain, obs, grid, corange=cor)
        thr = tol.get("lattice_llt", 0.05)
        checks = [
            check_entry("lattice-llt-final", curve.final_error, thr,
                        curve.final_error <= thr, "exact"),
            check_entry("lattice-llt-envelope", list(curve.errors), None,
                        curve.envelope_nonincreasing, "exact"),
        ]
        doc = {"mode": "lattice", "errors": list(curve.errors),
               "n_grid": list(curve.ns), "checks": checks}
        write_report(out, "llt", doc)
        write_curve(out, "llt_error", curve.ns, curve.errors)
        return all(c["pass"] for c in checks)
    n = int(ana.get("n", grid[-1]))
    kern = llt_mod.TestKernel.triangle(float(ana.get("kernel_half_width", 1.0)))
    rep = llt_mod.nonlattice_llt_check(
        chain, obs, n, kern, beta=beta, seed=seed, threads=threads,
        mc_samples=int(ana.get("samples", 1_000_000)),
        tolerance=tol.get("nonlattice_llt"))
    thr = tol.get("nonlattice_llt", 0.05)
    checks = [check_entry("nonlattice-llt-sup", rep.sup_error, thr,
                          rep.sup_error <= thr,
                          "exact" if rep.mode == "exact" else "monte-carlo")]
    doc = {"mode": f"nonlattice-{rep.mode}", "sup_error": rep.sup_error,
           "sigma": rep.sigma, "n": n, "checks": checks}
    write_report(out, "llt", doc)
    write_curve(out, "llt_display", rep.u_grid, rep.display,
                stderr=rep.stderr)
    return all(c["pass"] for c in checks)


def run_edgeworth(scn, chain, obs, out, seed, threads, tol):
    ana = _analysis(scn)
    grid = _default_n_grid(scn, chain, obs)
    rep = llt_mod.edgeworth_check(chain, obs, grid, beta=ana.get("beta"))
    thr = tol.get("edgeworth", 0.2)
    best_curve = rep.scaled_residual_cubic if rep.best_variant == "cubic" \
        else rep.scaled_residual_classic
    checks = [
        check_entry("edgeworth-final", best_curve[-1], thr,
                    best_curve[-1] <= thr, "exact"),
        check_entry("edgeworth-envelope", list(best_curve), None,
                    rep.best_nonincreasing, "exact"),
    ]
    doc = {"n_grid": list(rep.ns),
           "scaled_residual_cubic": list(rep.scaled_residual_cubic),
           "scaled_residual_classic": list(rep.scaled_residual_classic),
           "best_variant": rep.best_variant,
           "correction_constants": list(rep.correction_constants),
           "checks": checks}
    write_report(out, "edgeworth", doc)
    write_curve(out, "edgeworth_residual", rep.ns, best_curve)
    return all(c["pass"] for c in checks)


def run_blocks(scn, chain, obs, out, seed, threads, tol):
    ana = _analysis(scn)
    lo = float(ana.get("freq_lo", math.pi - 0.1))
    hi = float(ana.get("freq_hi", math.pi + 0.1))
    n = int(ana.get("n", min(len(obs), 60)))
    theta = float(ana.get("theta", 0.05))
    bd = transfer_mod.contracting_blocks(chain, obs, (lo, hi), n, theta=theta)
    doc = {"count": bd.count, "theta": bd.theta, "k0": bd.k0,
           "contracting": [list(b) for b in bd.contracting],
           "complements": [list(b) for b in bd.complements],
           "certificates": list(bd.certificates),
           "checks": [check_entry("block-scan", bd.count, None, True,
                                  "certified-bound")]}
    write_report(out, "blocks", doc)
    return True


def run_matrix(scn, chain, obs, out, seed, threads, tol):
    block = scn["observable"]
    if block["kind"] != "matrix_log_lambda":
        raise ScenarioError("matrix subcommand needs a matrix_log_lambda observable")
    ana = _analysis(scn)
    fam = matrix_family_from(block, chain)
    w = int(block.get("window", 4))
    pf = mp_mod.sequential_pf(fam, chain, w)
    grid = ana.get("n_grid", [2, 4, 6, 8, 10, 12])
    cert = mp_mod.rrpf_certificate(fam, chain, 0, grid, seed=seed)
    n = int(ana.get("n", 12))
    sand = mp_mod.lognorm_sandwich(fam, chain, pf, n, seed=seed)
    checks = [
        check_entry("rrpf-rate-vs-birkhoff", cert.fitted_rate,
                    cert.birkhoff_rate + 0.05,
                    cert.fitted_rate <= cert.birkhoff_rate + 0.05,
                    "certified-bound"),
        check_entry("lognorm-sandwich", sand.sandwich_max, sand.sandwich_bound,
                    sand.sandwich_max <= sand.sandwich_bound,
                    "exact" if sand.exhaustive else "monte-carlo"),
    ]
    doc = {"birkhoff_rate": pf.birkhoff.rate,
           "hilbert_diameter": pf.birkhoff.diameter,
           "diameter_bound": pf.birkhoff.diameter_bound,
           "lambda_tail_bound": pf.tail_bound,
           "rrpf_residuals": list(cert.residuals),
           "rrpf_fitted_rate": cert.fitted_rate,
           "sandwich_max": sand.sandwich_max,
           "sandwich_bound": sand.sandwich_bound,
           "checks": checks}
    write_report(out, "matrix", doc)
    write_curve(out, "rrpf_residual", cert.ns, cert.residuals)
    return all(c["pass"] for c in checks)


def run_lyapunov(scn, chain, obs, out, seed, threads, tol):
    ana = _analysis(scn)
    block = scn["observable"]
    base = np.asarray(block["matrices"][0], dtype=float)
    eps = float(ana.get("eps", 0.01))
    w = int(ana.get("window", 30))
    n_dev = int(ana.get("n_dev", 100))
    rng = np.random.default_rng(int(ana.get("dev_seed", seed)))
    devs = []
    for _ in range(n_dev):
        d = rng.uniform(-1.0, 1.0, base.shape)
        devs.append(d / np.linalg.norm(d, 2))
    sp = mp_mod.lyapunov_splitting(base, devs, eps, w)
    eps_grid = ana.get("eps_grid", [eps, eps / 2, eps / 4])
    study = mp_mod.eps_grid_study(base, devs, eps_grid, w)
    thr_resid = tol.get("splitting_residual", 1e-8)
    checks = [
        check_entry("splitting-residual", float(sp.residuals.max()), thr_resid,
                    float(sp.residuals.max()) <= thr_resid, "exact"),
        check_entry("eps-linearity", study.linear_within_factor, 2.0,
                    study.linear_within_factor <= 2.0, "exact"),
    ]
    doc = {"eigenvalues": sp.base_eigenvalues, "eps": eps, "window": w,
           "sup_lambda_dev": sp.sup_lambda_dev,
           "sup_vector_dev": sp.sup_vector_dev,
           "eps_grid": list(study.eps_values),
           "eps_lambda_devs": list(study.lambda_devs),
           "checks": checks}
    write_report(out, "lyapunov", doc)
    return all(c["pass"] for c in checks)


def run_irf(scn, chain, obs, out, seed, threads, tol):
    ana = _analysis(scn)
    block = scn["observable"]
    fam = irf_family_from(block, chain)
    w = int(block.get("window", 8))
    n = int(ana.get("n", min(200, chain.horizon - 1)))
    samples = int(ana.get("samples", 5000))
    batch = sim_mod.sample_paths(chain, samples, seed, threads=threads)
    traj = irf_mod.simulate_irf(fam, batch.paths, n)
    gap = irf_mod.truncation_gap(fam, chain, batch.paths[:min(2048, samples)],
                                 min(n, 5 * w), w)
    lo, hi = fam.invariant
    bound = (hi - lo) * fam.delta0 ** w
    audit = irf_mod.lipschitz_audit(fam, seed=seed)
    checks = [
        check_entry("invariant-interval", float(max(traj.y.max() - hi,
                                                    lo - traj.y.min(), 0.0)),
                    0.0, True, "exact"),
        check_entry("two-seed-agreement", traj.max_disagreement,
                    traj.agreement_bound,
                    traj.max_disagreement <= traj.agreement_bound + 1e-12,
                    "exact"),
        check_entry("truncation-bound", gap, bound, gap <= bound + 1e-12,
                    "exact"),
        check_entry("lipschitz-audit", audit, 1e-9, audit <= 1e-9, "monte-carlo"),
    ]
    doc = {"delta0": fam.delta0, "window": w, "truncation_bound": bound,
           "observed_gap": gap, "steps_checked": int(traj.y.size),
           "checks": checks}
    write_report(out, "irf", doc)
    return all(c["pass"] for c in checks)


def run_simulate(scn, chain, obs, out, seed, threads, tol):
    ana = _analysis(scn)
    samples = int(ana.get("samples", 100_000))
    batch = sim_mod.sample_paths(chain, samples, seed, threads=threads)
    mus = chain_mod.propagate_marginals(chain)
    worst_z = 0.0
    for j in range(0, chain.horizon + 1, max(1, chain.horizon // 8)):
        emp = np.bincount(batch.paths[:, j], minlength=chain.size(j)) / samples
        se = np.sqrt(np.maximum(mus[j] * (1 - mus[j]), 1e-12) / samples)
        worst_z = max(worst_z, float(np.abs((emp - mus[j]) / se).max()))
    n = int(ana.get("n", min(len(obs), chain.horizon - obs.max_future)))
    sums = obs.partial_sum(n, batch.paths)
    mom = llt_mod.exact_moments(chain, obs, [n])
    mean_se = sums.std(ddof=1) / math.sqrt(samples)
    zmean = abs(sums.mean() - mom.mean[0]) / max(mean_se, 1e-300)
    checks = [
        check_entry("marginal-z", worst_z, 4.0, worst_z <= 4.0, "monte-carlo"),
        check_entry("mean-z", zmean, 4.0, zmean <= 4.0, "monte-carlo"),
    ]
    doc = {"samples": samples, "seed": seed,
           "split_record": batch.split_record()[:8],
           "sum_mean": float(sums.mean()), "exact_mean": mom.mean[0],
           "checks": checks}
    write_report(out, "simulate", doc)
    return all(c["pass"] for c in checks)


COMMANDS = {
    "validate": run_validate,
    "moments": run_moments,
    "rpf": run_rpf,
    "corange": run_corange,
    "llt": run_llt,
    "edgeworth": run_edgeworth,
    "blocks": run_blocks,
    "matrix": run_matrix,
    "lyapunov": run_lyapunov,
    "irf": run_irf,
    "simulate": run_simulate,
}

NEEDS_OBSERVABLE = {"moments", "rpf", "corange", "llt", "edgeworth", "blocks",
                    "matrix", "lyapunov", "irf", "simulate"}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="markovllt",
        description="Local limit theorem verification for inhomogeneous "
                    "finite-state Markov chains")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--scenario", required=True, help="scenario JSON path")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--tolerance", action="append", default=[],
                        metavar="KEY=VALUE", help="tolerance override")
    args = parser.parse_args(argv)

    try:
        doc = json.loads(Path(args.scenario).read_text())
        validate_scenario(doc)
        overrides = {}
        for item in args.tolerance:
            if "=" not in item:
                raise ScenarioError(f"malformed --tolerance {item!r}")
            k, v = item.split("=", 1)
            overrides[k] = float(v)
        ana = doc.get("analysis", {})
        seed = args.seed if args.seed is not None else int(ana.get("seed", 0))
        threads = args.threads if args.threads is not None \
            else int(ana.get("threads", 1))
        out_dir = Path(args.out) if args.out else \
            Path(doc.get("output", {}).get("dir", "reports"))
        chain = build_chain(doc["chain"])
        obs = None
        if args.command in NEEDS_OBSERVABLE:
            if "observable" not in doc:
                raise ScenarioError(f"{args.command} needs an observable block")
            obs = build_observable(doc["observable"], chain)
        tol = _tolerances(doc, overrides)
        ok = COMMANDS[args.command](doc, chain, obs, out_dir, seed, threads, tol)
    except (ScenarioError, ModelError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0 if ok else 2


if __name__ == "__main__":
    sys.exit(main())
