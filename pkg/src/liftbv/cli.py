"""Command-line entry points.

    liftbv scaffold build   --target circle --provider generic --q 8 --out s.json
    liftbv scaffold audit   --file s.json [--samples N --seed S --segments K]
    liftbv shift select     --input field.txt [--provider analytic --trials N]
    liftbv lift run         --config run.json
    liftbv verify coarea    [--count N --resolution R --seed S]
    liftbv verify lemma23   --input field.txt [--shifts N]
    liftbv report show      --file report.json

Exit codes: 0 ok, 2 check failure, 3 ingest error, 4 construction or
selection failure. LIFTBV_THREADS caps the worker count for shift trials.
"""

import argparse
import json
import sys

import numpy as np

from .errors import LiftbvError


def _cmd_scaffold_build(args):
    from .scaffold import (build_analytic_scaffold, build_generic_scaffold,
                           save_scaffold)

    if args.provider == "generic":
        sc = build_generic_scaffold(args.target, args.q, args.M, args.sigma)
    else:
        sc = build_analytic_scaffold(args.target, args.M, args.sigma)
    if args.audit:
        from .scaffold import audit_scaffold
        audit_scaffold(sc, samples=args.samples, seed=args.seed,
                       segments=args.segments)
    save_scaffold(sc, args.out)
    print(f"scaffold written to {args.out} "
          f"(provider={sc.provider}, q={sc.q}, lambda={sc.lam})")
    return 0


def _cmd_scaffold_audit(args):
    from .scaffold import audit_scaffold, load_scaffold, save_scaffold

    sc = load_scaffold(args.file)
    rep = audit_scaffold(sc, samples=args.samples, seed=args.seed,
                         segments=args.segments)
    doc = rep.as_dict()
    doc["certified"] = {k: float(v) if not isinstance(v, bool) else v
                        for k, v in sc.certified.items()}
    print(json.dumps(doc, sort_keys=True, indent=1))
    if args.write_back:
        save_scaffold(sc, args.file)
    return 0 if not rep.failures else 2


def _cmd_shift_select(args):
    from .fieldcli import ingest, interpolate_pa
    from .liftcore import _default_anchor
    from .scaffold import (audit_scaffold, build_analytic_scaffold,
                           build_generic_scaffold)
    from .transversal import select_shift

    f = ingest(args.input)
    u, _ = interpolate_pa(f)
    if args.provider == "generic":
        sc = build_generic_scaffold(f.target_id, args.q)
    else:
        sc = build_analytic_scaffold(f.target_id)
    audit_scaffold(sc, samples=500, seed=1, segments=50)
    u_star = _default_anchor(u, sc.target)
    y, ss, diag = select_shift(u, u_star, sc, trials=args.trials,
                               seed=args.seed)
    table = [{"y": [round(v, 10) for v in row["y"]],
              "score": round(row["score"], 10) if np.isfinite(row["score"])
              else None,
              "t_measure": round(row["t_measure"], 10),
              "certificate": row["certificate"]} for row in diag["scores"]]
    print(json.dumps({"accepted_index": diag["accepted_index"],
                      "median": round(diag["median"], 10),
                      "y": [round(v, 10) for v in y.tolist()],
                      "scores": table}, sort_keys=True, indent=1))
    return 0


def _cmd_lift_run(args):
    from .fieldcli import run_pipeline

    with open(args.config, encoding="utf-8") as fh:
        config = json.load(fh)
    report, _ = run_pipeline(config)
    print(report.to_json())
    return report.exit_status


def _cmd_verify_coarea(args):
    from .transversal import coarea_bound_check

    rng = np.random.default_rng(args.seed)
    box2 = (np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    box3 = (np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0]))
    results = []
    ident = coarea_bound_check(np.eye(2), np.zeros(2), np.zeros(2), box2,
                               resolution=args.resolution)
    results.append({"case": "identity_d2", **ident})
    for i in range(args.count):
        d = 2 if i % 2 == 0 else 3
        A = rng.normal(size=(2, d))
        b = rng.normal(size=2) * 0.5
        vs = rng.normal(size=2) * 0.5
        r = coarea_bound_check(A, b, vs, box2 if d == 2 else box3,
                               resolution=args.resolution if d == 2 else
                               max(24, args.resolution // 2))
        results.append({"case": f"random_{i}_d{d}", **r})
    ok = all(r["holds"] for r in results)
    print(json.dumps({"holds_all": ok,
                      "results": [{k: (round(v, 8) if isinstance(v, float)
                                       else v) for k, v in r.items()}
                                  for r in results]}, indent=1))
    return 0 if ok else 2


def _cmd_verify_lemma23(args):
    from .fieldcli import ingest, interpolate_pa
    from .liftcore import _default_anchor
    from .scaffold import audit_scaffold, build_analytic_scaffold
    from .transversal import averaged_bounds

    f = ingest(args.input)
    u, _ = interpolate_pa(f)
    sc = build_analytic_scaffold(f.target_id)
    audit_scaffold(sc, samples=500, seed=1, segments=50)
    ab = averaged_bounds(u, _default_anchor(u, sc.target), sc,
                         n_shifts=args.shifts, seed=args.seed)
    ab = {k: (round(v, 8) if isinstance(v, float) else v)
          for k, v in ab.items()}
    print(json.dumps(ab, sort_keys=True, indent=1))
    return 0


def _cmd_report_show(args):
    with open(args.file, encoding="utf-8") as fh:
        doc = json.load(fh)
    checks = doc.get("checks", [])
    print(f"target={doc['scaffold']['target']} "
          f"provider={doc['scaffold']['provider']}")
    m = doc.get("measures", {})
    print(f"|grad u|_L1={m.get('grad_u_l1')}  |Dv|={m.get('total')}  "
          f"ac={m.get('ac')}  jump={m.get('jump')}  cantor={m.get('cantor')}")
    for c in checks:
        print(f"  [{'PASS' if c['passed'] else 'FAIL'}] {c['name']}: "
              f"value={c.get('value')} tol={c.get('tol')}")
    for g in doc.get("jump_summary", []):
        print(f"  curve: length={g['length']} labels={g['labels']} "
              f"facets={g['n_facets']}")
    return 0 if doc.get("exit_status", 0) == 0 else 2


def build_parser():
    p = argparse.ArgumentParser(prog="liftbv", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="cmd", required=True)

    ps = sub.add_parser("scaffold").add_subparsers(dest="sub", required=True)
    b = ps.add_parser("build")
    b.add_argument("--target", required=True)
    b.add_argument("--provider", choices=("generic", "analytic"),
                   default="generic")
    b.add_argument("--q", type=int, default=8)
    b.add_argument("--M", type=float, default=None)
    b.add_argument("--sigma", type=float, default=None)
    b.add_argument("--out", required=True)
    b.add_argument("--audit", action="store_true")
    b.add_argument("--samples", type=int, default=2000)
    b.add_argument("--seed", type=int, default=1)
    b.add_argument("--segments", type=int, default=200)
    b.set_defaults(func=_cmd_scaffold_build)
    a = ps.add_parser("audit")
    a.add_argument("--file", required=True)
    a.add_argument("--samples", type=int, default=10000)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--segments", type=int, default=1000)
    a.add_argument("--write-back", action="store_true")
    a.set_defaults(func=_cmd_scaffold_audit)

    sh = sub.add_parser("shift").add_subparsers(dest="sub", required=True)
    s = sh.add_parser("select")
    s.add_argument("--input", required=True)
    s.add_argument("--provider", choices=("generic", "analytic"),
                   default="analytic")
    s.add_argument("--q", type=int, default=8)
    s.add_argument("--trials", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_shift_select)

    lf = sub.add_parser("lift").add_subparsers(dest="sub", required=True)
    r = lf.add_parser("run")
    r.add_argument("--config", required=True)
    r.set_defaults(func=_cmd_lift_run)

    v = sub.add_parser("verify").add_subparsers(dest="sub", required=True)
    vc = v.add_parser("coarea")
    vc.add_argument("--count", type=int, default=20)
    vc.add_argument("--resolution", type=int, default=64)
    vc.add_argument("--seed", type=int, default=0)
    vc.set_defaults(func=_cmd_verify_coarea)
    vl = v.add_parser("lemma23")
    vl.add_argument("--input", required=True)
    vl.add_argument("--shifts", type=int, default=100)
    vl.add_argument("--seed", type=int, default=0)
    vl.set_defaults(func=_cmd_verify_lemma23)

    rp = sub.add_parser("report").add_subparsers(dest="sub", required=True)
    rs = rp.add_parser("show")
    rs.add_argument("--file", required=True)
    rs.set_defaults(func=_cmd_report_show)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.func(args)
    except LiftbvError as e:
        rep = getattr(e, "report", None)
        if rep is not None:
            print(rep.to_json())
        print(f"error: {e}", file=sys.stderr)
        code = e.exit_code
    return code


if __name__ == "__main__":
    sys.exit(main())
