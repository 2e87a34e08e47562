"""Field ingestion, piecewise-affine interpolation, and the pipeline.

Field files are line-oriented text: a one-line JSON header (version,
target, box, resolution, lambda) followed by one whitespace-separated row
of ambient coordinates per grid vertex, in C order over the vertex
lattice. Floats are printed with shortest-repr decimals, so write/read
round-trips are bit exact.
"""

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .covers import get_target
from .errors import CheckFailure, IngestError, InvalidArgumentError
from .liftcore import (LiftConfig, lift_pa_field, loop_monodromy,
                       sbv_check)
from .polygeom import PiecewiseAffineMap, kuhn_triangulate
from .scaffold import (audit_scaffold, build_analytic_scaffold,
                       build_generic_scaffold, load_scaffold)

FORMAT_VERSION = 1


@dataclass
class SampledField:
    """Raw grid samples of a field in ambient coordinates."""

    target_id: str
    box: tuple
    resolution: np.ndarray
    values: np.ndarray
    lam: float
    clamped: int = 0
    source: str = ""

    @property
    def n_samples(self):
        return self.values.shape[0]


def write_field(path, target_id, box, resolution, values, lam):
    """Write a field file (see module docstring for the format)."""
    lo = np.asarray(box[0], dtype=float).ravel()
    hi = np.asarray(box[1], dtype=float).ravel()
    resolution = np.asarray(resolution, dtype=int).ravel()
    values = np.asarray(values, dtype=float)
    header = {
        "version": FORMAT_VERSION,
        "target": target_id,
        "box": [lo.tolist(), hi.tolist()],
        "resolution": resolution.tolist(),
        "lambda": float(lam),
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for row in values:
            f.write(" ".join(repr(float(v)) for v in row) + "\n")


def ingest(path):
    """Parse and validate a field file; clamp samples into Q^m_Lambda.

    Samples outside the Lambda cube are clamped componentwise and counted;
    malformed headers, wrong sample counts, non-finite samples and unknown
    target ids raise IngestError with a line number.
    """
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise IngestError(f"cannot read field file: {e}")
    if not lines:
        raise IngestError("empty field file", line=0)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise IngestError(f"malformed JSON header: {e}", line=1)
    for key in ("version", "target", "box", "resolution", "lambda"):
        if key not in header:
            raise IngestError(f"header missing {key!r}", line=1)
    if header["version"] != FORMAT_VERSION:
        raise IngestError(f"unsupported format version {header['version']}",
                          line=1)
    try:
        target = get_target(header["target"])
    except InvalidArgumentError:
        raise IngestError(f"unknown target id {header['target']!r}", line=1)
    lo = np.asarray(header["box"][0], dtype=float)
    hi = np.asarray(header["box"][1], dtype=float)
    res = np.asarray(header["resolution"], dtype=int)
    lam = float(header["lambda"])
    expected = int(np.prod(res + 1))
    rows = []
    for ln, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split()
        if len(parts) != target.m:
            raise IngestError(
                f"expected {target.m} components, got {len(parts)}", line=ln)
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise IngestError("unparsable sample", line=ln)
        if not all(np.isfinite(v) for v in vals):
            raise IngestError("non-finite sample", line=ln)
        rows.append(vals)
    if len(rows) != expected:
        raise IngestError(
            f"sample count {len(rows)} != prod(resolution+1) = {expected}")
    values = np.array(rows)
    clamped = int(np.sum(np.any(np.abs(values) > lam, axis=1)))
    values = np.clip(values, -lam, lam)
    return SampledField(target.id, (lo, hi), res, values, lam,
                        clamped=clamped, source=str(path))


def interpolate_pa(f):
    """Kuhn triangulation with vertex values equal to the samples.

    Returns (map, stats): the discrete total variation and an
    interpolation-residual statistic (max deviation from the multilinear
    interpolant at cell centres; zero for affine data).
    """
    tri = kuhn_triangulate(f.box, f.resolution)
    u = PiecewiseAffineMap(tri, f.values)
    d = tri.d
    res = f.resolution
    centers = tri.lo + (np.stack(np.meshgrid(
        *[np.arange(r) for r in res], indexing="ij"), axis=-1)
        .reshape(-1, d) + 0.5) * tri.h
    pav = u.eval(centers)
    nv = res + 1
    strides = np.ones(d, dtype=np.int64)
    for i in range(d - 2, -1, -1):
        strides[i] = strides[i + 1] * nv[i + 1]
    idx = np.stack(np.meshgrid(*[np.arange(r) for r in res], indexing="ij"),
                   axis=-1).reshape(-1, d)
    base = idx @ strides
    corner_mean = np.zeros_like(pav)
    from itertools import product as _prod
    for off in _prod((0, 1), repeat=d):
        corner_mean += f.values[base + np.array(off) @ strides]
    corner_mean /= 2 ** d
    residual = float(np.max(np.linalg.norm(pav - corner_mean, axis=1))) \
        if pav.size else 0.0
    stats = {"grad_l1": u.grad_l1(), "interp_residual": residual,
             "n_simplices": int(tri.n_simplices)}
    return u, stats


# ----------------------------------------------------------------------
# pipeline


@dataclass
class PipelineReport:
    """Full record of one pipeline run; every numeric check carries the
    tolerance it was measured against."""

    config: dict
    scaffold: dict
    input: dict
    shift: dict
    measures: dict
    jump_summary: list
    monodromy: list
    checks: list
    warnings: list
    timing: dict = field(default_factory=dict)
    exit_status: int = 0

    def to_dict(self, with_timing=True):
        doc = {
            "config": self.config,
            "scaffold": self.scaffold,
            "input": self.input,
            "shift": self.shift,
            "measures": self.measures,
            "jump_summary": self.jump_summary,
            "monodromy": self.monodromy,
            "checks": self.checks,
            "warnings": self.warnings,
            "exit_status": self.exit_status,
        }
        if with_timing:
            doc["timing"] = self.timing
        return doc

    def to_json(self, with_timing=True):
        return json.dumps(self.to_dict(with_timing), sort_keys=True, indent=1)


def _round_floats(obj, nd=12):
    if isinstance(obj, float):
        return round(obj, nd)
    if isinstance(obj, dict):
        return {k: _round_floats(v, nd) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, nd) for v in obj]
    if isinstance(obj, (np.floating,)):
        return round(float(obj), nd)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _round_floats(obj.tolist(), nd)
    return obj


def group_jump_curves(facets, tol=1e-7):
    """Group facets into connected curves by shared endpoints."""
    n = len(facets)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    ends = [(np.round(f.verts[0], 7).tobytes(),
             np.round(f.verts[-1], 7).tobytes()) for f in facets]
    seen = {}
    for i, (a, b) in enumerate(ends):
        for key in (a, b):
            if key in seen:
                ri, rj = find(i), find(seen[key])
                if ri != rj:
                    parent[ri] = rj
            else:
                seen[key] = i
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    out = []
    for ids in groups.values():
        fs = [facets[i] for i in ids]
        out.append({
            "n_facets": len(fs),
            "length": float(sum(f.measure for f in fs)),
            "labels": sorted({f.label.name for f in fs}),
            "max_geo_jump": float(max(f.max_geo_jump for f in fs)),
            "core_facets": int(sum(1 for f in fs if f.core)),
            "approximate": bool(any(f.approximate for f in fs)),
        })
    out.sort(key=lambda g: -g["length"])
    return out


def _build_scaffold_from_config(target, sconf):
    if sconf.get("file"):
        return load_scaffold(sconf["file"])
    provider = sconf.get("provider", "analytic")
    if provider == "generic":
        return build_generic_scaffold(target, sconf.get("q", 8),
                                      sconf.get("M"), sconf.get("sigma"))
    return build_analytic_scaffold(target, sconf.get("M"),
                                   sconf.get("sigma"))


def run_pipeline(config):
    """Orchestrate ingest -> interpolate -> scaffold -> shift -> lift ->
    measures -> checks; returns (PipelineReport, LiftedField).

    In strict mode any failed check raises CheckFailure after the report
    is assembled (the report is attached to the exception).
    """
    t_start = time.time()
    timing = {}
    warnings = []

    f = ingest(config["input"])
    target = get_target(f.target_id)
    if config.get("target") and config["target"] != f.target_id:
        raise IngestError(
            f"config target {config['target']!r} != file target {f.target_id!r}")
    if f.clamped:
        warnings.append(f"{f.clamped} sample(s) clamped into Q^m_Lambda")
    timing["ingest"] = time.time() - t_start

    t0 = time.time()
    u, interp_stats = interpolate_pa(f)
    timing["interpolate"] = time.time() - t0

    t0 = time.time()
    sc = _build_scaffold_from_config(target, config.get("scaffold", {}))
    aconf = config.get("audit", {})
    if not sc.certified:
        audit_scaffold(sc, samples=aconf.get("samples", 2000),
                       seed=aconf.get("seed", 1),
                       segments=aconf.get("segments", 200))
    for k, v in (config.get("scaffold", {}).get("override_certified") or {}).items():
        sc.certified[k] = v
    timing["scaffold"] = time.time() - t0

    shift_conf = config.get("shift", {})
    cfg = LiftConfig(trials=shift_conf.get("trials", 32),
                     seed=shift_conf.get("seed", 0),
                     step_cap=config.get("lift", {}).get("step_cap", 0.5),
                     strict=False,
                     normalize=config.get("lift", {}).get("normalize", True))
    t0 = time.time()
    lf = lift_pa_field(u, sc, cfg=cfg)
    timing["lift"] = time.time() - t0

    t0 = time.time()
    sb = sbv_check(lf)
    grad_u = interp_stats["grad_l1"]
    strict = bool(config.get("strict", True))
    tol_identity = config.get("tolerances", {}).get("lift_identity", 1e-6)
    inner = lf.diagnostics.get("checks", {})
    c_jump = sc.certified.get("c_jump", float("inf"))
    c_total = sc.certified.get("c_total")
    checks = [
        {"name": "lifting_identity",
         "value": inner.get("lift_identity"), "tol": tol_identity,
         "passed": bool(inner.get("lift_identity", np.inf) <= tol_identity)},
        {"name": "jump_bound",
         "value": inner.get("max_geo_jump"), "tol": c_jump,
         "passed": bool(inner.get("max_geo_jump", np.inf) <= c_jump + 1e-9)},
        {"name": "sbv_identity",
         "value": lf.bv.cantor, "tol": 0.0, "passed": bool(sb["passed"])},
    ]
    bad_labels = _recheck_labels(lf)
    checks.append({"name": "label_constancy", "value": bad_labels, "tol": 0,
                   "passed": bad_labels == 0})
    if c_total is not None and grad_u > 0:
        checks.append({"name": "measure_bound",
                       "value": lf.bv.total, "tol": c_total * grad_u,
                       "passed": bool(lf.bv.total <= c_total * grad_u + 1e-9)})

    curves = group_jump_curves(lf.facets)
    # boundary monodromy: a rectangle just inside the domain edge
    mono = []
    if u.tri.d == 2:
        lo, hi = u.tri.lo, u.tri.hi
        pad = 0.02 * float(np.min(hi - lo))
        rect = np.array([[lo[0] + pad, lo[1] + pad], [hi[0] - pad, lo[1] + pad],
                         [hi[0] - pad, hi[1] - pad], [lo[0] + pad, hi[1] - pad]])
        try:
            g = loop_monodromy(lf, rect)
            mono.append({"loop": "boundary", "element": g.name})
        except Exception as e:  # loops may hit facet endpoints
            mono.append({"loop": "boundary", "element": None,
                         "error": type(e).__name__})

    timing["checks"] = time.time() - t0
    exit_status = 0 if all(c["passed"] for c in checks) else 2
    report = PipelineReport(
        config=_round_floats(config),
        scaffold={"target": sc.target_id, "provider": sc.provider,
                  "M": sc.M, "sigma": sc.sigma, "lambda": sc.lam, "q": sc.q,
                  "certified": _round_floats(dict(sc.certified))},
        input={"path": str(config["input"]), "target": f.target_id,
               "resolution": f.resolution.tolist(),
               "n_samples": f.n_samples, "clamped": f.clamped,
               "interp_residual": _round_floats(interp_stats["interp_residual"]),
               "n_simplices": interp_stats["n_simplices"]},
        shift=_round_floats({
            "y": lf.y.tolist(),
            "accepted_index": lf.diagnostics["shift"].get("accepted_index"),
            "median_score": lf.diagnostics["shift"].get("median"),
            "n_scores": len(lf.diagnostics["shift"].get("scores", [])),
            "approximate": lf.diagnostics.get("approximate", False)}),
        measures=_round_floats({
            "grad_u_l1": grad_u,
            "ac": lf.bv.ac, "jump": lf.bv.jump,
            "geodesic_jump": lf.bv.geodesic_jump,
            "cantor": lf.bv.cantor, "total": lf.bv.total,
            "tv_ratio": lf.bv.total / grad_u if grad_u > 0 else 0.0,
            "dropped_nodes": lf.diagnostics.get("dropped_nodes", 0)}),
        jump_summary=_round_floats(curves),
        monodromy=mono,
        checks=_round_floats(checks),
        warnings=warnings,
        timing={k: round(v, 3) for k, v in timing.items()},
        exit_status=exit_status,
    )
    report.timing["total"] = round(time.time() - t_start, 3)

    outdir = config.get("output_dir")
    if outdir:
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "report.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
        export_jump_geometry(lf, os.path.join(outdir, "jump_geometry.json"))

    if strict and exit_status != 0:
        err = CheckFailure("strict checks failed: "
                           + ", ".join(c["name"] for c in checks
                                       if not c["passed"]))
        err.report = report
        raise err
    return report, lf


def _recheck_labels(lf, max_facets=8):
    """Recompute traces on a facet subsample; count label mismatches."""
    from .liftcore import jump_traces

    ordinary = [f for f in lf.facets if not f.core and not f.approximate]
    if not ordinary:
        ordinary = [f for f in lf.facets if not f.core]
    step = max(1, len(ordinary) // max_facets)
    bad = 0
    for f in ordinary[::step][:max_facets]:
        try:
            res = jump_traces(lf, lf.target, f)
            if res["label"] != f.label and \
                    res["label"] != lf.target.deck_inverse(f.label):
                bad += 1
        except Exception:
            if not f.approximate:
                bad += 1
    return bad


def export_jump_geometry(lf, path):
    """Jump polylines with deck labels, for external plotting."""
    doc = {"target": lf.target_id,
           "curves": [{
               "simplex": int(f.simplex),
               "label": f.label.name,
               "core": bool(f.core),
               "approximate": bool(f.approximate),
               "points": _round_floats(f.verts.tolist()),
           } for f in lf.facets]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)


def refinement_study(inputs, config=None, stabilization_tol=0.05):
    """Lift one field sampled at several resolutions and compare |Dv|.

    The shift and the anchor are selected on the coarsest level and
    reused at the finer ones, so the total variations are comparable;
    `stable` reports whether the last two levels agree within the given
    relative tolerance.
    """
    config = dict(config or {})
    sconf = config.get("scaffold", {})
    f0 = ingest(inputs[0])
    target = get_target(f0.target_id)
    sc = _build_scaffold_from_config(target, sconf)
    aconf = config.get("audit", {})
    if not sc.certified:
        audit_scaffold(sc, samples=aconf.get("samples", 1000),
                       seed=aconf.get("seed", 1),
                       segments=aconf.get("segments", 100))
    shift_conf = config.get("shift", {})
    levels = []
    y = None
    anchor = None
    for k, path in enumerate(inputs):
        f = ingest(path)
        u, stats = interpolate_pa(f)
        cfg = LiftConfig(trials=shift_conf.get("trials", 16),
                         seed=shift_conf.get("seed", 0), strict=False,
                         fixed_shift=y, fixed_anchor=anchor)
        lf = lift_pa_field(u, sc, cfg=cfg)
        if k == 0:
            y = lf.y
            anchor = lf.u_star
        levels.append({
            "input": str(path),
            "resolution": f.resolution.tolist(),
            "grad_u_l1": stats["grad_l1"],
            "ac": lf.bv.ac, "jump": lf.bv.jump, "total": lf.bv.total,
        })
    stable = True
    if len(levels) >= 2:
        a, b = levels[-2]["total"], levels[-1]["total"]
        stable = abs(b - a) <= stabilization_tol * max(abs(b), 1e-12)
    return {"levels": levels, "shift": y.tolist(), "stable": bool(stable),
            "stabilization_tol": stabilization_tol}


def certify_averaged_constants(sc, fields, n_shifts=200, seed=0,
                               safety=1.25):
    """Calibrate the averaged-bound constants on a suite of fields.

    Records, with a safety factor, the ratios mean|grad(rho_y o u)|_L1 /
    |grad u|_L1 (projection bound), mean H^{d-1}(T_y) / coupling integral
    (slice-measure bound), and |Dv| / |grad u|_L1 (total-variation bound)
    into scaffold.certified.
    """
    from .transversal import averaged_bounds

    r_grad, r_meas, r_total = 0.0, 0.0, 0.0
    for u in fields:
        ab = averaged_bounds(u, _anchor_of(u, sc), sc,
                             n_shifts=n_shifts, seed=seed)
        if ab["grad_u_l1"] > 1e-12 and np.isfinite(ab["mean_grad"]):
            r_grad = max(r_grad, ab["mean_grad"] / ab["grad_u_l1"])
        if ab["coupling"] > 1e-12 and np.isfinite(ab["mean_t_measure"]):
            r_meas = max(r_meas, ab["mean_t_measure"] / ab["coupling"])
        lf = lift_pa_field(u, sc, cfg=LiftConfig(trials=8, seed=seed,
                                                 strict=False))
        if ab["grad_u_l1"] > 1e-12:
            r_total = max(r_total, lf.bv.total / ab["grad_u_l1"])
    sc.certified.update({
        "c_grad": safety * r_grad,
        "c_measure": safety * r_meas,
        "c_total": safety * r_total,
    })
    return {"c_grad": sc.certified["c_grad"],
            "c_measure": sc.certified["c_measure"],
            "c_total": sc.certified["c_total"]}


def _anchor_of(u, sc):
    from .liftcore import _default_anchor
    return _default_anchor(u, sc.target)
