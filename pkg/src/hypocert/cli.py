"""Command-line entry point: certify, sweep, simulate, check, verify, reproduce-figure.

Exit status is 0 when every verdict passes, 1 when some verdict fails and
2 on input or numerical errors.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import certificate, fpe, gamma_calculus, svg
from .errors import ConfigParse, HypocertError
from .grid import DensityField, Grid, equilibrium
from .model import check_stationarity, load_model, model_from_dict
from .tensor import dump_tensor_records

BUILTINS = {
    "constant_diffusion": {
        "family": "underdamped1d", "n": 1, "m": 1,
        "params": {"U": {"terms": [[0.5, 2]]}, "r": {"kind": "constant", "value": 1.0}, "z": [1.0, 0.1]},
        "domain": {"lo": [-1, -1], "hi": [1, 1]},
    },
    "variable_diffusion": {
        "family": "underdamped1d", "n": 1, "m": 1,
        "params": {"U": {"terms": [[1 / 3.75, 2.5], [-1 / 3.75, 1]]}, "r": {"kind": "inverse_hessian"},
                   "z": [1.0, 0.1]},
        "domain": {"lo": [0.5, 0.5], "hi": [1, 1], "periodic": [True, True]},
    },
}


class UsageError(HypocertError):
    pass


def resolve_model(ref):
    """A model file path, or builtin:<name> for the bundled benchmark models."""
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if name not in BUILTINS:
            raise ConfigParse(f"unknown builtin model (choose from {', '.join(sorted(BUILTINS))})", ref)
        return model_from_dict(BUILTINS[name])
    return load_model(ref)


def _floats(text, what):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--{what}: expected comma-separated numbers, got {text!r}")


def _range(text, what):
    """lo:hi:count lattice, or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"--{what}: expected lo:hi:count")
        lo, hi, cnt = float(parts[0]), float(parts[1]), int(parts[2])
        if cnt < 1:
            raise UsageError(f"--{what}: range is empty")
        return list(np.linspace(lo, hi, cnt)) if cnt > 1 else [lo]
    vals = _floats(text, what)
    if not vals:
        raise UsageError(f"--{what}: range is empty")
    return vals


def _grid(model, args, default_n):
    d = model.dim
    box = model.domain
    lo = _floats(args.lo, "lo") if getattr(args, "lo", None) else (list(box.lo) if box else None)
    hi = _floats(args.hi, "hi") if getattr(args, "hi", None) else (list(box.hi) if box else None)
    if lo is None or hi is None:
        raise UsageError("the model has no domain; pass --lo and --hi")
    if len(lo) != d or len(hi) != d:
        raise UsageError(f"--lo/--hi need {d} entries")
    n = args.grid if getattr(args, "grid", None) else default_n
    if n < 3:
        raise UsageError("--grid must be at least 3")
    periodic = box.periodic if box is not None else None
    return Grid.make(lo, hi, n, periodic)


def _default_box(model, args, half):
    """Decay-truncated box [-half, half]^d unless the model is periodic or a box was given."""
    periodic = model.domain is not None and any(model.domain.periodic)
    if args.lo is None and args.hi is None and not periodic:
        args.lo = ",".join([str(-half)] * model.dim)
        args.hi = ",".join([str(half)] * model.dim)


def _emit(args, report, human):
    if args.json:
        print(json.dumps(report, indent=1, sort_keys=True, default=float))
    else:
        print(human)


# ---------------------------------------------------------------------------
# subcommands

def cmd_certify(args):
    model = resolve_model(args.config)
    z = _floats(args.z, "z") if args.z else None
    grid = _grid(model, args, 41)
    rmap = certificate.rate_map(model, grid, args.beta, z, args.path, args.threads)
    margin = rmap.soundness_margin()
    if args.out:
        certificate.write_rate_csv(rmap, args.out)
    if args.svg:
        _rate_svg(rmap, args.svg, f"lambda(x), beta={args.beta:g}")
    if args.dump_tensor:
        m = certificate.with_z(model, z)
        pts = grid.points().reshape(-1, grid.dim)
        build, _ = certificate.assembler_for(m, args.beta, args.path)
        dump_tensor_records([build(x) for x in pts], args.dump_tensor)
    ok = rmap.lambda_inf > 0 and margin >= -1e-9
    report = {"lambda_inf": rmap.lambda_inf, "lambda_max": float(rmap.lambda_field.max()),
              "argmin": rmap.argmin.tolist(), "beta": args.beta, "z": z, "assembly": rmap.path,
              "soundness_margin": margin, "pass": ok}
    _emit(args, report, f"lambda_inf = {rmap.lambda_inf:.10g} at {rmap.argmin.tolist()} "
                        f"(max {report['lambda_max']:.10g}, assembly {rmap.path}); "
                        f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _rate_svg(rmap, path, title):
    g = rmap.grid
    if g.dim != 2:
        raise UsageError("SVG heatmaps need a two-dimensional grid")
    svg.write_heatmap(path, rmap.lambda_field, g.axis(0), g.axis(1), title)


def cmd_sweep(args):
    model = resolve_model(args.config)
    betas = _range(args.beta, "beta")
    z1s = _range(args.z1, "z1")
    z2s = _range(args.z2, "z2")
    grid = _grid(model, args, 41)
    points = None
    if args.at:
        points = np.array([_floats(args.at, "at")])
    res = certificate.sweep_parameters(model, grid, betas, [(a, b) for a in z1s for b in z2s],
                                       points, args.path, args.threads)
    if args.out:
        certificate.write_rate_csv(res.rate_map, args.out)
    if args.svg:
        _rate_svg(res.rate_map, args.svg, f"best lambda(x), beta={res.beta:g}, z={list(res.z)}")
    ok = res.lambda_inf > 0
    report = {"beta": res.beta, "z": list(res.z), "lambda_inf": res.lambda_inf, "table": res.table, "pass": ok}
    _emit(args, report, f"best beta={res.beta:g} z={list(res.z)} lambda_inf={res.lambda_inf:.10g}; "
                        f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_simulate(args):
    model = resolve_model(args.config)
    if args.lam is not None:
        lam = args.lam
    elif args.certificate:
        _, vals = certificate.read_rate_csv(args.certificate)
        lam = float(vals.min())
    else:
        raise UsageError("pass --certificate or --lambda")
    _default_box(model, args, 5.0)
    grid = _grid(model, args, 81)
    center = _floats(args.init_center, "init-center") if args.init_center else None
    p0 = fpe.mixture_density(model, grid, args.init_weight, center, args.init_width)
    dt = "auto" if args.dt == "auto" else float(args.dt)
    trace = fpe.run_decay_experiment(model, p0, args.t_final, dt, lam=lam, tol=args.tol)
    if args.out:
        fpe.write_trace_csv(trace, args.out)
    report = {"lambda": lam, "verdicts": trace.verdicts, "fitted_rates": trace.fitted,
              "dissipation": trace.dissipation, "pass": trace.passed}
    _emit(args, report, f"lambda={lam:.6g} verdicts={trace.verdicts} fitted={trace.fitted}; "
                        f"{'PASS' if trace.passed else 'FAIL'}")
    return 0 if trace.passed else 1


def cmd_check(args):
    if args.family == "underdamped1d":
        rep = certificate.check_1d_sufficient(args.r, args.lam_lo, args.lam_hi, args.z2, args.delta)
    else:
        rep = certificate.check_oscillator_sufficient(args.lam_lo, args.lam_hi, args.z2, args.N,
                                                      args.eps, args.delta1)
    d = rep.to_dict()
    lines = [f"{k}: margin {v:+.6g}" for k, v in rep.margins.items()]
    _emit(args, d, "\n".join(lines + [d["verdict"]]))
    return 0 if rep.passed else 1


def cmd_verify(args):
    model = resolve_model(args.config)
    if args.identity == "stationarity":
        grid = _grid(model, args, 21)
        rep = check_stationarity(model, grid.points(), tol=args.tol or 1e-6)
        out = {"identity": "stationarity", "residual": rep.residual, "tolerance": rep.tol, "pass": rep.passed}
    elif args.identity == "bochner":
        _default_box(model, args, 4.0)
        grid = _grid(model, args, 64)
        pi = equilibrium(model, grid).values
        pts = grid.points()
        p = DensityField(grid, pi * (1 + 0.1 * np.prod(np.sin(pts), -1))).normalized()
        rep = gamma_calculus.verify_bochner(model, p, args.beta, tol=args.tol or 1e-3)
        out = {"identity": "bochner", "residual": rep.residual, "tolerance": rep.tol, "pass": rep.passed,
               "lhs": rep.lhs, "rhs": rep.rhs}
    else:
        _default_box(model, args, 5.0)
        grid = _grid(model, args, 81)
        p0 = fpe.mixture_density(model, grid)
        tol = args.tol or 0.02
        tr = fpe.run_decay_experiment(model, p0, 1.0, lam=1.0, samples=3, sample_window=(0.2, 0.8),
                                      dissipation_tol=tol)
        res = max(d["relative_error"] for d in tr.dissipation)
        out = {"identity": "dissipation", "residual": res, "tolerance": tol, "pass": res <= tol,
               "samples": tr.dissipation}
    _emit(args, out, f"{out['identity']}: residual {out['residual']:.3e} (tolerance {out['tolerance']:g}) "
                     f"{'PASS' if out['pass'] else 'FAIL'}")
    return 0 if out["pass"] else 1


FIGURES = {
    "const": ("constant_diffusion", (0.0, 0.1)),
    "variable": ("variable_diffusion", (0.0, 0.6)),
}


def reproduce_figure(which, outdir, grid_n=41, threads=None):
    """Both panels of a rate-map figure as CSV + SVG; returns the rate maps."""
    name, betas = FIGURES[which]
    model = model_from_dict(BUILTINS[name])
    b = model.domain
    grid = Grid.make(b.lo, b.hi, grid_n)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    maps = []
    for beta in betas:
        rmap = certificate.rate_map(model, grid, beta, threads=threads)
        stem = outdir / f"{which}_beta{beta:g}"
        certificate.write_rate_csv(rmap, f"{stem}.csv")
        _rate_svg(rmap, f"{stem}.svg", f"{name.replace('_', ' ')}: lambda(x), beta={beta:g}")
        maps.append(rmap)
    return maps


def cmd_reproduce(args):
    maps = reproduce_figure(args.which, args.outdir, args.grid or 41, args.threads)
    finite = all(np.all(np.isfinite(m.lambda_field)) for m in maps)
    report = {"which": args.which, "panels": [{"beta": m.beta, "lambda_min": float(m.lambda_field.min()),
                                               "lambda_max": float(m.lambda_field.max()),
                                               "lambda_center": float(m.lambda_field[tuple(s // 2 for s in m.lambda_field.shape)])}
                                              for m in maps], "pass": finite}
    human = "\n".join(f"beta={p['beta']:g}: min {p['lambda_min']:.6g} max {p['lambda_max']:.6g} "
                      f"center {p['lambda_center']:.6g}" for p in report["panels"])
    _emit(args, report, human)
    return 0 if finite else 1


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="hypocert", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--json", action="store_true", help="machine-readable report on stdout")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, grid=True):
        sp.add_argument("--config", required=True, help="model JSON file or builtin:<name>")
        sp.add_argument("--json", action="store_true", default=argparse.SUPPRESS)
        if grid:
            sp.add_argument("--grid", type=int, help="nodes per axis")
            sp.add_argument("--lo", help="box lower corner, comma separated")
            sp.add_argument("--hi", help="box upper corner, comma separated")
        sp.add_argument("--threads", type=int, help="worker threads (default: HYPO_RATE_THREADS or 1)")

    s = sub.add_parser("certify", help="rate map lambda(x) for fixed beta and z")
    common(s)
    s.add_argument("--beta", type=float, default=0.0)
    s.add_argument("--z", help="auxiliary parameters, e.g. 1,0.1")
    s.add_argument("--path", choices=("auto", "closed", "generic"), default="auto")
    s.add_argument("--out", help="CSV output (x1,...,xd,lambda)")
    s.add_argument("--svg", help="SVG heatmap output (2-D models)")
    s.add_argument("--dump-tensor", help="JSON dump of every per-point assembly")
    s.set_defaults(func=cmd_certify)

    s = sub.add_parser("sweep", help="lattice search over beta and z")
    common(s)
    s.add_argument("--beta", default="0:1:11", help="lo:hi:count or comma list")
    s.add_argument("--z1", default="1")
    s.add_argument("--z2", default="0:1:11")
    s.add_argument("--at", help="optimize the rate at this single point instead of the grid minimum")
    s.add_argument("--path", choices=("auto", "closed", "generic"), default="auto")
    s.add_argument("--out")
    s.add_argument("--svg")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("simulate", help="Fokker-Planck decay experiment against a certified rate")
    common(s)
    s.add_argument("--t-final", type=float, default=20.0)
    s.add_argument("--dt", default="auto")
    s.add_argument("--certificate", help="rate CSV from certify; its minimum is used")
    s.add_argument("--lambda", dest="lam", type=float, help="rate to test instead of a certificate file")
    s.add_argument("--tol", type=float, default=0.05)
    s.add_argument("--init-weight", type=float, default=0.3)
    s.add_argument("--init-center")
    s.add_argument("--init-width", type=float, default=0.6)
    s.add_argument("--out", help="trace CSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("check", help="closed-form sufficient conditions")
    s.add_argument("--json", action="store_true", default=argparse.SUPPRESS)
    s.add_argument("--family", choices=("underdamped1d", "oscillator3"), required=True)
    s.add_argument("--r", type=float, default=1.0)
    s.add_argument("--lam-lo", type=float, required=True)
    s.add_argument("--lam-hi", type=float, required=True)
    s.add_argument("--z2", type=float, required=True)
    s.add_argument("--delta", type=float, default=0.0)
    s.add_argument("--delta1", type=float, default=0.0)
    s.add_argument("--N", type=float, default=1.0)
    s.add_argument("--eps", type=float, default=1e-7)
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("verify", help="numerical identity checks")
    common(s)
    s.add_argument("--identity", choices=("bochner", "stationarity", "dissipation"), required=True)
    s.add_argument("--beta", type=float, default=0.0)
    s.add_argument("--tol", type=float)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("reproduce-figure", help="regenerate rate-map heatmaps")
    s.add_argument("--json", action="store_true", default=argparse.SUPPRESS)
    s.add_argument("--which", choices=sorted(FIGURES), required=True)
    s.add_argument("--outdir", default="figures")
    s.add_argument("--grid", type=int)
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigParse as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except HypocertError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
