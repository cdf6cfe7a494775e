"""Command-line front end.

Subcommands: check, kernel, solve, fd, wiener, cone, classify.  Structured
inputs are JSON (operator and domain files, versioned), point and field
data are CSV.  Every invocation writes a manifest holding the resolved
parameter set, input hashes, and output paths; re-running via
--replay-manifest reproduces all outputs bit-exactly (seeds default to a
fixed constant, never to entropy).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import InconsistencyError, KolmoError
from .geometry import domain_from_dict
from .gridsolver import fd_solve
from .kernel import KernelEngine
from .operator import certify, validate_structure
from .regularity import ball_limit_test, classify, cone_test, wiener_diagnostic
from .walk import WalkConfig, pwb_estimate

FORMAT_VERSION = 1
DEFAULT_SEED = 20240817


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_versioned(path: str, kind: str) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    ver = data.get("format_version")
    if ver != FORMAT_VERSION:
        raise KolmoError(
            "%s file %s has format_version %r; this tool reads version %d"
            % (kind, path, ver, FORMAT_VERSION)
        )
    return data


def _load_operator(path: str):
    data = _load_versioned(path, "operator")
    spec = validate_structure(data["theta"], data["block_dims"], data["B"])
    return spec, KernelEngine(spec)


def _load_domain(path: str, engine) -> object:
    data = _load_versioned(path, "domain")
    return domain_from_dict(data["root"], engine)


def _parse_point(text: str, engine, domain_path=None):
    """Either comma-separated floats x1,..,xN,t or a cylinder alias."""
    aliases = ("bottom-center", "top-center")
    if text in aliases:
        if domain_path is None:
            raise KolmoError("point alias %r needs a cylinder domain file" % text)
        data = _load_versioned(domain_path, "domain")
        node = data["root"]
        if node.get("op") != "cylinder":
            raise KolmoError("point alias %r needs a cylinder domain" % text)
        x0 = np.asarray(node["x0"], dtype=float)
        t = float(node["t0"]) if text == "bottom-center" else float(node["T"])
        if text == "top-center":
            x0 = engine.matrix_E(t) @ engine.matrix_E(-node["t0"]) @ x0
        return x0, t
    vals = [float(v) for v in text.split(",")]
    if len(vals) != engine.spec.N + 1:
        raise KolmoError(
            "point needs %d coordinates, got %d" % (engine.spec.N + 1, len(vals))
        )
    return np.array(vals[:-1]), vals[-1]


def _parse_boundary_data(spec_text: str):
    """constant:V | indicator:EXPR | tabulated:FILE.

    indicator expressions compare one coordinate against a threshold, e.g.
    "x1>=0.5" or "t<=0"; the datum is 1 where the comparison holds.
    """
    kind, _, arg = spec_text.partition(":")
    if kind == "constant":
        c = float(arg)
        return lambda X, t: np.full(X.shape[0], c)
    if kind == "indicator":
        for op in (">=", "<=", ">", "<"):
            if op in arg:
                coord, thr = arg.split(op)
                thr = float(thr)
                coord = coord.strip()
                if coord == "t":
                    pick = lambda X, t: np.asarray(t)
                else:
                    i = int(coord.lstrip("x")) - 1
                    pick = lambda X, t: X[:, i]
                cmp = {
                    ">=": lambda v: v >= thr,
                    "<=": lambda v: v <= thr,
                    ">": lambda v: v > thr,
                    "<": lambda v: v < thr,
                }[op]
                return lambda X, t: cmp(pick(X, t)).astype(float)
        raise KolmoError("indicator needs a comparison, e.g. indicator:x1>=0.5")
    if kind == "tabulated":
        rows = np.loadtxt(arg, delimiter=",", skiprows=1, ndmin=2)
        pts, vals = rows[:, :-1], rows[:, -1]

        def nearest(X, t):
            Z = np.column_stack([X, np.asarray(t)])
            d2 = ((Z[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
            return vals[np.argmin(d2, axis=1)]

        return nearest
    raise KolmoError("unknown boundary data kind %r" % kind)


def _walk_config(args) -> WalkConfig:
    return WalkConfig(
        dt=args.dt,
        max_steps=args.max_steps,
        n_samples=args.n_samples,
        seed=args.seed,
        horizon=args.horizon,
        threads=args.threads,
    )


def _write_json(path: str, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(args, command: str, outputs: dict, started: float):
    hashes = {}
    for key in ("op", "domain", "points"):
        path = getattr(args, key, None)
        if path:
            hashes[key] = _sha256(path)
    manifest = {
        "format_version": FORMAT_VERSION,
        "tool": "kolmo",
        "tool_version": __version__,
        "command": command,
        "argv": args._argv,
        "input_hashes": hashes,
        "seed": getattr(args, "seed", None),
        "wall_clock_s": round(time.time() - started, 3),
        "outputs": {k: os.path.basename(v) for k, v in outputs.items()},
    }
    path = os.path.join(args.out_dir, "%s_manifest.json" % command)
    _write_json(path, manifest)
    return path


def _out(args, name: str) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


# -- subcommand implementations ------------------------------------------------


def _cmd_check(args) -> int:
    started = time.time()
    spec, _ = _load_operator(args.op)
    cert = certify(spec, radius=args.radius)
    payload = {"format_version": FORMAT_VERSION, "certificate": cert.to_dict()}
    out = _out(args, "certificate.json")
    _write_json(out, payload)
    print("hypoellipticity certificate for %s" % args.op)
    print("  N=%d kappa=%d theta=%d" % (spec.N, spec.kappa, spec.theta))
    rows = [
        ("Hormander brackets (i)", cert.conditions["hormander_brackets"]),
        ("no invariant subspace (ii)", cert.conditions["no_invariant_subspace"]),
        ("Gramian positive (iii)", cert.conditions["gramian_positive"]),
        ("Kalman rank (iv)", cert.conditions["kalman_rank"]),
    ]
    for name, ok in rows:
        print("  %-28s %s" % (name, "pass" if ok else "FAIL"))
    print("  kalman rank %d / %d; invariant subspace dim %d"
          % (cert.kalman_rank, spec.N, cert.invariant_subspace_dim))
    print("  verdict: %s" % ("hypoelliptic" if cert.verdict else "NOT hypoelliptic"))
    _write_manifest(args, "check", {"certificate": out}, started)
    return 0


def _cmd_kernel(args) -> int:
    started = time.time()
    _, engine = _load_operator(args.op)
    N = engine.spec.N
    with open(args.points) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    want = 2 * N + 2
    if len(header) != want:
        raise KolmoError("points CSV needs %d columns x1..xN,t,xi1..xiN,tau" % want)
    out = _out(args, "kernel_values.csv")
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header + ["log_gamma"])
        for row in rows:
            x, t = row[:N], row[N]
            xi, tau = row[N + 1 : 2 * N + 1], row[2 * N + 1]
            lg = engine.log_gamma((x, t), (xi, tau))
            writer.writerow(row + [repr(lg)])
    print("wrote %d kernel evaluations to %s" % (len(rows), out))
    _write_manifest(args, "kernel", {"values": out}, started)
    return 0


def _cmd_solve(args) -> int:
    started = time.time()
    _, engine = _load_operator(args.op)
    domain = _load_domain(args.domain, engine)
    phi = _parse_boundary_data(args.data)
    config = _walk_config(args)
    N = engine.spec.N
    with open(args.points) as fh:
        reader = csv.reader(fh)
        next(reader)
        pts = [[float(v) for v in row] for row in reader if row]
    out = _out(args, "solution.csv")
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x%d" % (i + 1) for i in range(N)] + ["t", "value", "stderr", "n_truncated"])
        for row in pts:
            est = pwb_estimate(engine, domain, phi, (row[:N], row[N]), config)
            writer.writerow(row + [repr(est.value), repr(est.stderr), est.n_truncated])
    print("wrote %d solution values to %s" % (len(pts), out))
    _write_manifest(args, "solve", {"solution": out}, started)
    return 0


def _cmd_fd(args) -> int:
    started = time.time()
    spec, _ = _load_operator(args.op)
    phi = _parse_boundary_data(args.data)
    lo, hi = [], []
    for rng_txt in args.box.split(";"):
        a, b = rng_txt.split(",")
        lo.append(float(a))
        hi.append(float(b))
    grid = fd_solve(spec, (lo, hi), (args.t0, args.t1), phi,
                    n_nodes=args.nodes, n_levels=args.levels)
    out = _out(args, "grid_values.csv")
    mesh = grid.mesh().reshape(-1, spec.N)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x%d" % (i + 1) for i in range(spec.N)] + ["t", "value"])
        stride = max(1, len(grid.times) // args.time_stride)
        for k in range(0, len(grid.times), stride):
            level = grid.values[k].ravel()
            for node, val in zip(mesh, level):
                writer.writerow(list(node) + [grid.times[k], repr(float(val))])
    print("wrote grid with %d levels to %s" % (len(grid.times), out))
    _write_manifest(args, "fd", {"grid": out}, started)
    return 0


def _partial_sums_csv(path: str, report):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "estimate", "cumulative", "stderr"])
        for n, e, c, s in report.wiener_partial_sums:
            writer.writerow([n, repr(e), repr(c), repr(s)])


def _cmd_wiener(args) -> int:
    started = time.time()
    _, engine = _load_operator(args.op)
    domain = _load_domain(args.domain, engine)
    z0 = _parse_point(args.point, engine, args.domain)
    report = wiener_diagnostic(
        engine, domain, z0, lam=args.lam,
        n_range=range(args.n_min, args.n_max + 1),
        config=_walk_config(args), orientation=args.orientation,
    )
    out_json = _out(args, "wiener_report.json")
    _write_json(out_json, {"format_version": FORMAT_VERSION,
                           "report": report.to_dict()})
    out_csv = _out(args, "wiener_partial_sums.csv")
    _partial_sums_csv(out_csv, report)
    print("Wiener diagnostic at %s: %s (partial sum %.3f)"
          % (args.point, report.verdict, report.wiener_sum))
    print("note: %s" % report.notes[-1])
    _write_manifest(args, "wiener", {"report": out_json, "partial_sums": out_csv},
                    started)
    return 0


def _cmd_cone(args) -> int:
    started = time.time()
    _, engine = _load_operator(args.op)
    domain = _load_domain(args.domain, engine)
    z0 = _parse_point(args.point, engine, args.domain)
    cone = cone_test(engine, domain, z0, config=_walk_config(args))
    payload = {"format_version": FORMAT_VERSION, "found": cone is not None}
    if cone is not None:
        payload["cone"] = {
            "height": cone.T,
            "base_center": list(map(float, cone.base.center)),
            "base_radius": cone.base.radius,
            "lambda_admissible": cone.lambda_admissible,
        }
        print("exterior cone found: T=%g, base radius %g, admissible lambda %g"
              % (cone.T, cone.base.radius, cone.lambda_admissible))
    else:
        print("no exterior cone found on the search grid")
    out = _out(args, "cone_report.json")
    _write_json(out, payload)
    _write_manifest(args, "cone", {"report": out}, started)
    return 0


def _cmd_classify(args) -> int:
    started = time.time()
    _, engine = _load_operator(args.op)
    domain = _load_domain(args.domain, engine)
    z0 = _parse_point(args.point, engine, args.domain)
    report = classify(engine, domain, z0, _walk_config(args), lam=args.lam,
                      n_range=range(args.n_min, args.n_max + 1),
                      orientation=args.orientation)
    out_json = _out(args, "classify_report.json")
    _write_json(out_json, {"format_version": FORMAT_VERSION,
                           "report": report.to_dict()})
    out_csv = _out(args, "classify_partial_sums.csv")
    _partial_sums_csv(out_csv, report)
    out_txt = _out(args, "classify_summary.txt")
    lines = [
        "point: %s" % (args.point,),
        "verdict: %s" % report.verdict,
        "evidence:",
        "  exterior cone: %s" % ("found" if report.cone_found else "none"),
        "  attainment probe: %s"
        % (", ".join("%.3g@%.3g" % (v, d) for d, v, _ in report.attainment) or "n/a"),
        "  ball-limit estimates: %s"
        % ", ".join("%.3g@r=%.3g" % (e.value, r) for r, e in report.ball_limit_series),
        "  Wiener partial sum: %.3f (threshold %.1f)"
        % (report.wiener_sum, report.parameters["divergence_threshold"]),
    ] + ["note: %s" % n for n in report.notes]
    with open(out_txt, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    _write_manifest(args, "classify",
                    {"report": out_json, "partial_sums": out_csv, "summary": out_txt},
                    started)
    return 0


# -- argument parsing ----------------------------------------------------------


def _add_walk_flags(p: argparse.ArgumentParser):
    p.add_argument("--dt", type=float, default=1e-3, help="backward step size")
    p.add_argument("--n-samples", dest="n_samples", type=int, default=10_000)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=10_000)
    p.add_argument("--horizon", type=float, default=-float("inf"),
                   help="truncate walks below this time")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kolmo",
        description="Potential theory for degenerate Kolmogorov operators: "
        "hypoellipticity certificates, fundamental-solution evaluation, "
        "Monte Carlo Dirichlet solutions, and boundary-regularity diagnostics.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--replay-manifest", metavar="MANIFEST",
                        help="re-run the invocation recorded in a manifest")
    parser.add_argument("--out-dir", default=".", help="directory for outputs")
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("KOLMO_THREADS", "1")),
                        help="parallel walk batches (KOLMO_THREADS)")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("check", help="certify hypoellipticity of an operator file")
    p.add_argument("op", help="operator JSON file")
    p.add_argument("--radius", type=float, default=1.0,
                   help="scale of the sampled time intervals and points")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("kernel", help="evaluate log Gamma on points from CSV")
    p.add_argument("op")
    p.add_argument("--points", required=True,
                   help="CSV with columns x1..xN,t,xi1..xiN,tau")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=_cmd_kernel)

    p = sub.add_parser("solve", help="Monte Carlo Dirichlet values at points")
    p.add_argument("--op", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--data", required=True,
                   help="constant:V | indicator:x1>=c | tabulated:FILE")
    p.add_argument("--points", required=True, help="CSV with columns x1..xN,t")
    _add_walk_flags(p)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("fd", help="explicit finite-difference solve on a box")
    p.add_argument("--op", required=True)
    p.add_argument("--box", required=True, help="per-axis ranges lo,hi;lo,hi;...")
    p.add_argument("--t0", type=float, required=True)
    p.add_argument("--t1", type=float, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--nodes", type=int, default=101)
    p.add_argument("--levels", type=int, default=None)
    p.add_argument("--time-stride", dest="time_stride", type=int, default=20,
                   help="write roughly this many time levels")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=_cmd_fd)

    for name, fn, extra in (
        ("wiener", _cmd_wiener, True),
        ("cone", _cmd_cone, False),
        ("classify", _cmd_classify, True),
    ):
        p = sub.add_parser(name, help="boundary-regularity diagnostic: %s" % name)
        p.add_argument("--op", required=True)
        p.add_argument("--domain", required=True)
        p.add_argument("--point", required=True,
                       help="x1,..,xN,t or bottom-center/top-center for cylinders")
        if extra:
            p.add_argument("--lambda", dest="lam", type=float, default=0.5)
            p.add_argument("--n-min", dest="n_min", type=int, default=2)
            p.add_argument("--n-max", dest="n_max", type=int, default=40)
            p.add_argument("--orientation", default="pole_at_field",
                           choices=["pole_at_field", "pole_at_center"])
        _add_walk_flags(p)
        p.set_defaults(func=fn)

    return parser


def run(argv) -> int:
    """Execute one CLI invocation; returns the exit code.

    0 on success, 1 on domain errors (bad inputs or files), 2 on internal
    inconsistency.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.replay_manifest:
        with open(args.replay_manifest) as fh:
            manifest = json.load(fh)
        replay_argv = list(manifest["argv"])
        if "--out-dir" in replay_argv:
            i = replay_argv.index("--out-dir")
            replay_argv[i + 1] = args.out_dir
        else:
            replay_argv = ["--out-dir", args.out_dir] + replay_argv
        return run(replay_argv)
    if args.command is None:
        parser.print_help()
        return 1
    args._argv = list(argv)
    try:
        return args.func(args)
    except InconsistencyError as exc:
        print("internal inconsistency: %s" % exc, file=sys.stderr)
        return 2
    except (KolmoError, OSError, ValueError, KeyError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
