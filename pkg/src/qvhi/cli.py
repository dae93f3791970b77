"""Command-line experiment runner.

Every subcommand reads a JSON config (validated against a versioned
schema), writes CSV files into ``--out`` and returns an exit code: 0 on
success, 2 when a solver honestly failed to converge and 1 on invalid data.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import io
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .clarke import SuperpositionFunctional, named_potential
from .convex import (Box, NormBall, RadialConstraintFamily, SeparableConvex, WholeSpace)
from .errors import ConvergenceError, ProblemDataError, QVHIError
from .hilbert import GramSpace, LinearMap, linear_operator
from .solver import (HISTORY_COLUMNS, OuterConfig, QVHIProblem, a_priori_bounds, brute_force_qvhi,
                     check_smallness, qvhi_residual, sample_solution_set, solve_qvhi)
from .vi import (VIInstance, VISolverConfig, halfspace_cap_family, moving_box_family,
                 perturbation_experiment, rhs_perturbation_family, shrinking_ball_family, solve_vi)

log = logging.getLogger("qvhi")

SCHEMA_VERSION = 1

# ---------------------------------------------------------------------------
# schemas

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1}

_CONSTRAINT = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "type": {"enum": ["none", "fixed-ball", "fixed-box", "family"]},
        "radius": _pos,
        "lower": _num,
        "upper": _num,
        "m0": _pos,
        "slope": {"type": "number", "minimum": 0},
    },
    "required": ["type"],
}

_PROBLEM = {
    "oneOf": [
        {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"const": "scalar"},
                "a": _pos,
                "f": _num,
                "M": _num,
                "potential": {"enum": ["remark43", "abs", "smooth-quad", "zero"]},
                "j_scale": {"type": "number", "minimum": 0},
                "phi_l1": {"type": "number", "minimum": 0},
                "constraint": _CONSTRAINT,
                "C_upper": _num,
            },
            "required": ["kind"],
        },
        {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"const": "synthetic"},
                "dim": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "regime": {"enum": ["unique", "multistable"]},
            },
            "required": ["kind", "dim"],
        },
    ]
}

_OUTER = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "damping": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "tol_outer": _pos,
        "max_outer": {"type": "integer", "minimum": 1},
        "selection": {"enum": ["min-norm", "midpoint", "direction-attaining"]},
        "multistart": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "vi_tol": _pos,
        "vi_max_iter": {"type": "integer", "minimum": 1},
    },
}


def _command_schema(props: dict, required=()) -> dict:
    base = {"schema_version": {"const": SCHEMA_VERSION}, "description": {"type": "string"}}
    base.update(props)
    return {"type": "object", "additionalProperties": False, "properties": base,
            "required": ["schema_version", *required]}


SCHEMAS = {
    "solve": _command_schema({
        "problem": _PROBLEM, "outer": _OUTER, "v0": _vec,
        "history_csv": {"type": "string"}, "summary_csv": {"type": "string"},
        "compare_vi": {"type": "boolean"},
    }, ["problem"]),
    "bounds": _command_schema({
        "problem": _PROBLEM, "outer": _OUTER, "audit": {"type": "boolean"},
        "summary_csv": {"type": "string"},
    }, ["problem"]),
    "sample": _command_schema({
        "problem": _PROBLEM, "outer": _OUTER, "n_starts": {"type": "integer", "minimum": 1},
        "runs_csv": {"type": "string"}, "summary_csv": {"type": "string"},
    }, ["problem"]),
    "oracle-compare": _command_schema({
        "problem": _PROBLEM, "outer": _OUTER, "n_starts": {"type": "integer", "minimum": 1},
        "u_grid_spacing": _pos, "z_grid_spacing": _pos,
        "box": {"type": "object", "additionalProperties": False,
                "properties": {"lower": _vec, "upper": _vec}, "required": ["lower", "upper"]},
        "csv": {"type": "string"},
    }, ["problem"]),
    "mosco": _command_schema({
        "A": {"type": "array", "items": _vec, "minItems": 1},
        "g": _vec,
        "phi_l1": {"type": "number", "minimum": 0},
        "E": {"type": "object", "additionalProperties": False,
              "properties": {"type": {"enum": ["whole", "ball", "box"]}, "radius": _pos,
                             "lower": _vec, "upper": _vec},
              "required": ["type"]},
        "family": {"type": "object", "additionalProperties": False,
                   "properties": {"type": {"enum": ["identical", "shrinking-ball", "rhs", "moving-box",
                                                    "halfspace"]},
                                  "e": _vec, "shift": _vec, "a": _vec, "b": _num},
                   "required": ["type"]},
        "n_list": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "vi_tol": _pos,
        "csv": {"type": "string"},
    }, ["A", "g", "E", "family", "n_list"]),
    "fem": _command_schema({
        "study": {"enum": ["solve", "poisson-convergence", "smallness-sweep"]},
        "model": {"enum": ["interior", "boundary"]},
        "dim": {"enum": [1, 2]},
        "n_cells": {"type": "integer", "minimum": 2},
        "n_cells_list": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 2},
        "boundary": {"type": "string"},
        "law": {"type": "object", "additionalProperties": False,
                "properties": {"kind": {"enum": ["linear-iso", "nonlinear-demo"]}, "c": _pos,
                               "alpha_a": {"type": "number", "minimum": 0}, "m_a": _pos},
                "required": ["kind"]},
        "potential": {"type": "object", "additionalProperties": False,
                      "properties": {"name": {"enum": ["remark43", "abs", "smooth-quad", "zero"]},
                                     "scale": {"type": "number", "minimum": 0},
                                     "growth": {"type": "array", "items": {"type": "number", "minimum": 0},
                                                "minItems": 2, "maxItems": 2}},
                      "required": ["name"]},
        "convex": {"enum": ["abs", "quad", "zero"]},
        "g1": _num,
        "k2": {"type": ["number", "null"]},
        "constraint": {"type": ["object", "null"], "additionalProperties": False,
                       "properties": {"kind": {"enum": ["ambient-norm", "gradient-l1"]}, "m0": _pos,
                                      "rho2": {"type": "number", "minimum": 0}, "rho1": _pos}},
        "scales": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "outer": _OUTER,
        "csv": {"type": "string"},
        "nodal_csv": {"type": "string"},
        "hypotheses_csv": {"type": "string"},
    }, ["study"]),
}

CSV_HELP = """CSV outputs (first line is a '# generated <timestamp>' comment):
  solve           history: iteration,outer_residual,norm_v,norm_w_X,feasibility
                  summary: key,value  (converged, iterations, u_i, R1, R2, R, fp, feas, ...)
  bounds          key,value  (c1, c2, R1, R2, R, margin, audit results)
  sample          runs: start,converged,iterations,outer_residual,norm_u,cluster
                  summary: key,value  (n_solutions, diameter, bound_audit_ok)
  oracle-compare  source,index,coords...,distance,converged  (solver rows one per start;
                  distance is to the nearest oracle cluster, or from a cluster to the
                  nearest solver solution)
  mosco           n,error,iterations,residual
  fem             solve: key,value; nodal: x[,y],value; hypotheses: clause,passed,detail
                  poisson-convergence: n_cells,h,l2_error,h1_error,l2_ratio,h1_ratio
                  smallness-sweep: scale,margin,passed
"""


# ---------------------------------------------------------------------------
# helpers


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


class CsvOut:
    """CSV file with a timestamp comment line followed by a deterministic body."""

    def __init__(self, out_dir: Path, name: str):
        self.path = out_dir / name
        self.buf = io.StringIO()
        self.writer = csv.writer(self.buf, lineterminator="\n")

    def row(self, *values):
        self.writer.writerow([_fmt(v) for v in values])

    def close(self):
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        with open(self.path, "w", newline="") as fh:
            fh.write(f"# generated {stamp}\n")
            fh.write(self.buf.getvalue())
        return self.path


def load_config(ref: str) -> dict:
    """Read a JSON config from a path or a bundled config name."""
    p = Path(ref)
    if p.is_file():
        text = p.read_text()
    else:
        name = ref if ref.endswith(".json") else ref + ".json"
        res = resources.files("qvhi").joinpath("configs", name)
        if not res.is_file():
            raise ProblemDataError(f"config {ref!r} is neither a file nor a bundled config")
        text = res.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemDataError(f"invalid JSON in {ref}: {exc}") from None


def bundled_configs() -> list:
    return sorted(p.name[:-5] for p in resources.files("qvhi").joinpath("configs").iterdir()
                  if p.name.endswith(".json"))


def validate_config(command: str, cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ProblemDataError(f"config invalid at {where}: {exc.message}") from None


def build_problem(spec: dict, seed_override=None) -> QVHIProblem:
    """Problem from the ``problem`` block of a config."""
    if spec["kind"] == "synthetic":
        from .problems.synthetic import synthetic_instance
        seed = spec.get("seed", 0) if seed_override is None else seed_override
        return synthetic_instance(spec["dim"], seed, spec.get("regime", "unique"))
    V = GramSpace.identity(1)
    X = GramSpace.diagonal([1.0])
    A = linear_operator(V, np.array([[float(spec.get("a", 1.0))]]))
    M = LinearMap(np.array([[float(spec.get("M", 1.0))]]), V, X)
    h = named_potential(spec.get("potential", "zero"))
    scale = float(spec.get("j_scale", 1.0))
    if scale != 1.0:
        h = h.scaled(scale)
    j = SuperpositionFunctional(h, [1.0], X)
    phi = SeparableConvex(V, l1=float(spec.get("phi_l1", 0.0)))
    con = spec.get("constraint", {"type": "none"})
    kind = con["type"]
    if kind == "none":
        K = WholeSpace(V)
    elif kind == "fixed-ball":
        K = NormBall(V, float(con.get("radius", 1.0)))
    elif kind == "fixed-box":
        K = Box(V, con.get("lower", -np.inf), con.get("upper", np.inf))
    else:
        m0, slope = float(con.get("m0", 1.0)), float(con.get("slope", 0.0))
        K = RadialConstraintFamily(V, lambda v: m0 + slope * abs(float(v[0])), m0)
    C = Box(V, -np.inf, spec["C_upper"]) if "C_upper" in spec else None
    return QVHIProblem(A, phi, j, M, np.array([float(spec.get("f", 0.0))]), K, C=C, name="scalar")


def outer_config(spec: dict, seed_override=None) -> OuterConfig:
    spec = dict(spec or {})
    vi = VISolverConfig(tol=spec.pop("vi_tol", 1e-10), max_iter=spec.pop("vi_max_iter", 10_000))
    if seed_override is not None:
        spec["seed"] = seed_override
    return OuterConfig(vi_cfg=vi, **spec)


def _summary(out: CsvOut, items):
    out.row("key", "value")
    for k, v in items:
        out.row(k, v)


# ---------------------------------------------------------------------------
# commands


def cmd_solve(cfg: dict, out_dir: Path, seed=None, threads=1) -> int:
    P = build_problem(cfg["problem"], seed)
    oc = outer_config(cfg.get("outer"), seed)
    v0 = np.asarray(cfg["v0"], dtype=float) if "v0" in cfg else None
    sol = solve_qvhi(P, oc, v0=v0)
    hist = CsvOut(out_dir, cfg.get("history_csv", "solve_history.csv"))
    hist.row(*HISTORY_COLUMNS)
    for r in sol.history:
        hist.row(*r)
    hist.close()
    res = qvhi_residual(P, sol.u, sol.w)
    items = [("problem", P.name), ("converged", sol.converged), ("iterations", sol.iterations),
             ("attempts", sol.attempts)]
    items += [(f"u_{i}", x) for i, x in enumerate(sol.u)]
    items += [("norm_u", P.space.norm(sol.u)), ("norm_w_X", P.X.norm(sol.w)),
              ("outer_residual", sol.outer_residual), ("fp", res.fp), ("feas", res.feas),
              ("subgrad_ok", res.subgrad_ok), ("truncation_active", sol.truncation_active),
              ("R1", sol.bounds.R1), ("R2", sol.bounds.R2), ("R", sol.bounds.R)]
    if cfg.get("compare_vi"):
        if not P.j.is_zero or P.radial:
            raise ProblemDataError("compare_vi needs j = 0 and a fixed constraint set")
        vi_sol = solve_vi(VIInstance(P.A, P.phi, P.set_at(np.zeros(P.space.dim)), P.f), oc.vi_cfg)
        items += [(f"vi_u_{i}", x) for i, x in enumerate(vi_sol.u)]
        items.append(("vi_difference", P.space.norm(vi_sol.u - sol.u)))
    s = CsvOut(out_dir, cfg.get("summary_csv", "solve_summary.csv"))
    _summary(s, items)
    s.close()
    print(sol.summary())
    return 0 if sol.converged else 2


def cmd_bounds(cfg: dict, out_dir: Path, seed=None, threads=1) -> int:
    P = build_problem(cfg["problem"], seed)
    ok, margin = check_smallness(P)
    b = a_priori_bounds(P)
    items = [("c1", b.c1), ("c2", b.c2), ("R1", b.R1), ("R2", b.R2), ("R", b.R),
             ("smallness_margin", margin)]
    code = 0
    if cfg.get("audit", True):
        sol = solve_qvhi(P, outer_config(cfg.get("outer"), seed))
        nu, nMu = P.space.norm(sol.u), P.X.norm(P.M(sol.u))
        items += [("converged", sol.converged), ("norm_u", nu), ("norm_Mu_X", nMu),
                  ("audit_R1", nu <= b.R1 + 1e-6), ("audit_R2", nMu <= b.R2 + 1e-6)]
        code = 0 if sol.converged else 2
    out = CsvOut(out_dir, cfg.get("summary_csv", "bounds.csv"))
    _summary(out, items)
    out.close()
    print(" ".join(f"{k}={_fmt(v)}" for k, v in items))
    return code


def _cluster_ids(space, sols, tol):
    reps, ids = [], []
    for s in sols:
        for k, r in enumerate(reps):
            if space.norm(s - r) <= tol:
                ids.append(k)
                break
        else:
            reps.append(s)
            ids.append(len(reps) - 1)
    return ids


def cmd_sample(cfg: dict, out_dir: Path, seed=None, threads=1) -> int:
    P = build_problem(cfg["problem"], seed)
    oc = outer_config(cfg.get("outer"), seed)
    n = cfg.get("n_starts", 10)
    res = sample_solution_set(P, oc, n, seed=oc.seed, threads=threads)
    runs = CsvOut(out_dir, cfg.get("runs_csv", "sample_runs.csv"))
    runs.row("start", "converged", "iterations", "outer_residual", "norm_u", "cluster")
    reps = [s.u for s in res.solutions]
    for i, r in enumerate(res.runs):
        if isinstance(r, Exception):
            runs.row(i, False, 0, "nan", "nan", -1)
            continue
        cl = -1
        if r.converged:
            cl = int(np.argmin([P.space.norm(r.u - q) for q in reps]))
        runs.row(i, r.converged, r.iterations, r.outer_residual, P.space.norm(r.u), cl)
    runs.close()
    s = CsvOut(out_dir, cfg.get("summary_csv", "sample_summary.csv"))
    _summary(s, [("n_starts", n), ("n_solutions", len(res.solutions)), ("diameter", res.diameter),
                 ("bound_audit_ok", res.bound_audit_ok), ("n_failures", len(res.failures))])
    s.close()
    print(f"solutions={len(res.solutions)} diameter={res.diameter:.6g} failures={len(res.failures)}")
    return 0 if res.solutions else 2


def cmd_oracle_compare(cfg: dict, out_dir: Path, seed=None, threads=1) -> int:
    P = build_problem(cfg["problem"], seed)
    if P.space.dim > 2:
        raise ProblemDataError("oracle-compare needs dim <= 2")
    oc = outer_config(cfg.get("outer"), seed)
    n = cfg.get("n_starts", 3)
    res = sample_solution_set(P, oc, n, seed=oc.seed, threads=threads)
    b = a_priori_bounds(P)
    if "box" in cfg:
        box = (cfg["box"]["lower"], cfg["box"]["upper"])
    else:
        G = P.space.gram.toarray() if hasattr(P.space.gram, "toarray") else P.space.gram
        reach = 1.1 * b.R1 * np.sqrt(np.diag(np.linalg.inv(G))) + 1e-3
        box = (-reach, reach)
    h = cfg.get("u_grid_spacing", 1e-3 if P.space.dim == 1 else 5e-3)
    hz = cfg.get("z_grid_spacing", h if P.space.dim == 1 else 0.1)
    bf = brute_force_qvhi(P, h, hz, box)
    out = CsvOut(out_dir, cfg.get("csv", "oracle_compare.csv"))
    d = P.space.dim
    out.row("source", "index", *[f"u_{i}" for i in range(d)], "distance", "converged")
    worst = 0.0
    for i, r in enumerate(res.runs):
        if isinstance(r, Exception):
            out.row("solver", i, *(["nan"] * d), "nan", False)
            continue
        dist = min((c.distance(P.space, r.u) for c in bf.clusters), default=float("inf"))
        if r.converged:
            worst = max(worst, dist)
        out.row("solver", i, *r.u, dist, r.converged)
    sols = [s.u for s in res.solutions]
    for k, c in enumerate(bf.clusters):
        dist = min((c.distance(P.space, s) for s in sols), default=float("inf"))
        out.row("oracle", k, *c.representative, dist, True)
    out.close()
    print(f"clusters={len(bf.clusters)} solver_solutions={len(sols)} max_distance={worst:.3g} "
          f"spacing={h:g} {bf.diagnostic}")
    return 0 if res.solutions else 2


def cmd_mosco(cfg: dict, out_dir: Path, seed=None, threads=1) -> int:
    Amat = np.asarray(cfg["A"], dtype=float)
    dim = Amat.shape[0]
    if Amat.shape != (dim, dim):
        raise ProblemDataError("A must be square")
    V = GramSpace.identity(dim)
    A = linear_operator(V, Amat)
    g = np.asarray(cfg["g"], dtype=float)
    phi = SeparableConvex(V, l1=cfg.get("phi_l1", 0.0))
    Es = cfg["E"]
    if Es["type"] == "whole":
        E = WholeSpace(V)
    elif Es["type"] == "ball":
        E = NormBall(V, Es.get("radius", 1.0))
    else:
        E = Box(V, Es.get("lower", -np.inf), Es.get("upper", np.inf))
    fam = cfg["family"]
    kind = fam["type"]
    if kind == "identical":
        family = lambda n: (E, g)  # noqa: E731
    elif kind == "shrinking-ball":
        if Es["type"] != "ball":
            raise ProblemDataError("shrinking-ball family needs a ball E")
        family = shrinking_ball_family(V, g, Es.get("radius", 1.0))
    elif kind == "rhs":
        family = rhs_perturbation_family(E, g, fam.get("e", np.ones(dim)))
    elif kind == "moving-box":
        if Es["type"] != "box":
            raise ProblemDataError("moving-box family needs a box E")
        family = moving_box_family(V, g, Es.get("lower", -np.inf), Es.get("upper", np.inf),
                                   fam.get("shift", np.ones(dim)))
    else:
        family = halfspace_cap_family(V, g, fam.get("a", np.ones(dim)), fam.get("b", 0.0))
    recs = perturbation_experiment(VIInstance(A, phi, E, g), family, cfg["n_list"],
                                   VISolverConfig(tol=cfg.get("vi_tol", 1e-10)))
    out = CsvOut(out_dir, cfg.get("csv", "mosco.csv"))
    out.row("n", "error", "iterations", "residual")
    for r in recs:
        out.row(r.n, r.error, r.iterations, r.residual)
    out.close()
    print(" ".join(f"{r.n}:{r.error:.3e}" for r in recs))
    return 0


def _fem_parts(cfg):
    from .problems import fem
    law_cfg = cfg.get("law", {"kind": "linear-iso"})
    if law_cfg["kind"] == "linear-iso":
        law = fem.linear_iso(law_cfg.get("c", 1.0))
    else:
        law = fem.nonlinear_demo(law_cfg.get("alpha_a", 1.0), law_cfg.get("m_a", 2.0))
    pot = cfg.get("potential", {"name": "zero"})
    h = named_potential(pot["name"])
    if pot.get("scale", 1.0) != 1.0:
        h = h.scaled(pot["scale"])
    if "growth" in pot:
        h = h.with_growth(*pot["growth"])
    return law, h


def cmd_fem(cfg: dict, out_dir: Path, seed=None, threads=1) -> int:
    from .problems import fem, models
    study = cfg["study"]
    dim = cfg.get("dim", 1)
    model = cfg.get("model", "interior")
    boundary = cfg.get("boundary", "interior-model" if model == "interior" else "boundary-model")
    law, h = _fem_parts(cfg)

    if study == "poisson-convergence":
        out = CsvOut(out_dir, cfg.get("csv", "fem_convergence.csv"))
        out.row("n_cells", "h", "l2_error", "h1_error", "l2_ratio", "h1_ratio")
        prev = None
        for n in cfg.get("n_cells_list", [8, 16, 32]):
            sp_ = fem.FEMSpace(fem.build_mesh(dim, n, "full-dirichlet"))
            ex, gr, g1 = manufactured(dim)
            u = sp_.V.solve(fem.lumped_load(sp_, g1))
            e = fem.error_norms(sp_, u, ex, gr)
            ratios = ("nan", "nan") if prev is None else (prev[0] / e[0], prev[1] / e[1])
            out.row(n, 1.0 / n, e[0], e[1], *ratios)
            prev = e
        out.close()
        return 0

    sp_ = fem.FEMSpace(fem.build_mesh(dim, cfg.get("n_cells", 16), boundary))

    def build(hh):
        if model == "interior":
            return models.build_interior_problem(sp_, law, hh, cfg.get("convex", "abs"), cfg.get("g1", 1.0),
                                                 cfg.get("constraint"))
        return models.build_boundary_problem(sp_, law, hh, cfg.get("convex", "abs"), cfg.get("g1", 1.0),
                                             cfg.get("k2"), cfg.get("constraint"))

    if study == "smallness-sweep":
        base = build(h)
        thr = models.smallness_threshold(base)
        out = CsvOut(out_dir, cfg.get("csv", "fem_smallness.csv"))
        out.row("scale", "margin", "passed")
        for c in cfg.get("scales", [0.5 * thr, 0.99 * thr, 1.01 * thr, 2.0 * thr]):
            hh = named_potential(cfg.get("potential", {"name": "remark43"})["name"]).scaled(c).with_growth(0.0, c)
            ok, margin = check_smallness(build(hh).qvhi)
            out.row(c, margin, ok)
        out.close()
        print(f"threshold={thr:.6g} norm_M={base.qvhi.M_norm:.6g}")
        return 0

    ap = build(h)
    rep = models.check_hypotheses(ap, seed=0 if seed is None else seed)
    hyp = CsvOut(out_dir, cfg.get("hypotheses_csv", "fem_hypotheses.csv"))
    hyp.row("clause", "passed", "detail")
    for c in rep.clauses:
        hyp.row(c.name, c.passed, c.detail)
    hyp.close()
    sol = solve_qvhi(ap.qvhi, outer_config(cfg.get("outer"), seed))
    res = qvhi_residual(ap.qvhi, sol.u, sol.w)
    items = [("model", model), ("dim", dim), ("n_free", sp_.free_nodes.size),
             ("converged", sol.converged), ("iterations", sol.iterations),
             ("norm_u", ap.qvhi.space.norm(sol.u)), ("max_u", float(np.max(sol.u))),
             ("fp", res.fp), ("feas", res.feas), ("subgrad_ok", res.subgrad_ok),
             ("R1", sol.bounds.R1), ("failed_clauses", ";".join(rep.failed()))]
    if ap.k2 is not None:
        s3, _ = sp_.boundary_mass("S3")
        items.append(("max_abs_S3_minus_k2", float(np.max(np.abs(sol.u[sp_.free_position(s3)] - ap.k2)))))
    out = CsvOut(out_dir, cfg.get("csv", "fem_summary.csv"))
    _summary(out, items)
    out.close()
    nodal = CsvOut(out_dir, cfg.get("nodal_csv", "fem_nodal.csv"))
    nodal.row(*(["x"] if dim == 1 else ["x", "y"]), "value")
    for p, val in zip(sp_.mesh.nodes, sp_.extend(sol.u)):
        nodal.row(*p, val)
    nodal.close()
    print(sol.summary())
    return 0 if sol.converged else 2


def manufactured(dim: int):
    """Exact solution, gradient and source of the Dirichlet Poisson test problem."""
    pi = np.pi
    if dim == 1:
        return (lambda x: np.sin(pi * x[:, 0]),
                lambda x: (pi * np.cos(pi * x[:, 0]))[:, None],
                lambda x: pi ** 2 * np.sin(pi * x[:, 0]))
    return (lambda x: np.sin(pi * x[:, 0]) * np.sin(pi * x[:, 1]),
            lambda x: pi * np.column_stack([np.cos(pi * x[:, 0]) * np.sin(pi * x[:, 1]),
                                            np.sin(pi * x[:, 0]) * np.cos(pi * x[:, 1])]),
            lambda x: 2 * pi ** 2 * np.sin(pi * x[:, 0]) * np.sin(pi * x[:, 1]))


COMMANDS = {
    "solve": cmd_solve,
    "mosco": cmd_mosco,
    "oracle-compare": cmd_oracle_compare,
    "fem": cmd_fem,
    "bounds": cmd_bounds,
    "sample": cmd_sample,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="JSON config path or bundled name: " + ", ".join(bundled_configs()))
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument("--seed", type=int, default=None, help="override every seed in the config")
    common.add_argument("--threads", type=int, default=1, help="worker threads for multistart runs")
    parser = argparse.ArgumentParser(
        prog="qvhi", description="Quasi-variational-hemivariational inequality experiments.",
        epilog=CSV_HELP + "\nExit codes: 0 success, 2 no convergence, 1 invalid data.\n"
                          "Logging: QVHI_LOG in {error, info, debug}.",
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=COMMANDS[name].__name__.replace("cmd_", ""),
                       epilog=CSV_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("QVHI_LOG", "error").lower()
    logging.basicConfig(level={"error": logging.ERROR, "info": logging.INFO,
                               "debug": logging.DEBUG}.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        validate_config(args.command, cfg)
        if args.threads < 1:
            raise ProblemDataError("--threads must be at least 1")
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](copy.deepcopy(cfg), out_dir, args.seed, args.threads)
    except ProblemDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConvergenceError as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return 2
    except QVHIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
