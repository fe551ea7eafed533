"""Command-line interface.

Subcommands write into fresh run directories (``out``, ``out-2``, ...) and
leave a ``manifest.json`` describing the run.  Exit codes: 0 ok, 2 usage or
configuration error, 3 invalid system, 4 no convergence, 5 divergence.
"""

import argparse
import csv
import datetime as _dt
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, dftb, diagnostics, mixing

EXIT_OK, EXIT_USAGE, EXIT_SYSTEM, EXIT_NOCONV, EXIT_DIVERGED = 0, 2, 3, 4, 5
SCHEMAS = {"trace.csv": 1, "sweep.csv": 1, "qstar.json": 1, "averaged.json": 1, "report.json": 1}


class UsageError(Exception):
    pass


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def fresh_dir(path) -> Path:
    """``path`` if unused, else the first free ``path-2``, ``path-3``, ..."""
    base = Path(path)
    cand, k = base, 1
    while cand.exists():
        k += 1
        cand = base.with_name(f"{base.name}-{k}")
    cand.mkdir(parents=True)
    return cand


def dump_json(obj, path: Path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _floats(x):
    return [float(v) for v in np.asarray(x).ravel()]


def _parse_floats(text: str, what: str):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}")
    return vals


def _parse_ints(text: str, what: str):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated integers, got {text!r}")


class Run:
    """Run directory plus manifest bookkeeping."""

    def __init__(self, command: str, args, out):
        self.command = command
        self.args = args
        self.dir = fresh_dir(out)
        self.started = _now()
        self.outputs = []
        self.inputs = []

    def path(self, name: str) -> Path:
        if name not in self.outputs:
            self.outputs.append(name)
        return self.dir / name

    def finish(self, status: int):
        config = {k: v for k, v in vars(self.args).items() if k not in ("func", "config")}
        manifest = {
            "command": self.command,
            "config": config,
            "seed": config.get("seed"),
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            "schemas": {k: v for k, v in SCHEMAS.items() if k in self.outputs},
            "version": __version__,
            "started": self.started,
            "finished": _now(),
            "exit_status": status,
        }
        dump_json(manifest, self.dir / "manifest.json")
        return status


# --- shared option groups ----------------------------------------------------------


def _add_schedule(p, defaults="linear"):
    g = p.add_argument_group("damping schedule a_n = min(a / (offset + slope n^exponent), cap)")
    g.add_argument("--schedule", choices=("linear", "anderson"), default=None,
                   help="preset schedule (default: matches the scheme)")
    g.add_argument("--damping-a", type=float, default=None)
    g.add_argument("--damping-offset", type=float, default=None)
    g.add_argument("--damping-slope", type=float, default=None)
    g.add_argument("--damping-exponent", type=float, default=None)
    g.add_argument("--damping-cap", default=None, help="number or 'none'")


def _schedule(args, scheme: str) -> mixing.DampingSchedule:
    preset = args.schedule or ("anderson" if scheme == "anderson" else "linear")
    base = mixing.DampingSchedule.anderson_default() if preset == "anderson" else mixing.DampingSchedule.capped_linear()
    kw = dict(a=base.a, offset=base.offset, slope=base.slope, exponent=base.exponent, cap=base.cap)
    for name in ("a", "offset", "slope", "exponent"):
        v = getattr(args, f"damping_{name}")
        if v is not None:
            kw[name] = v
    if args.damping_cap is not None:
        cap = str(args.damping_cap)
        kw["cap"] = None if cap.lower() == "none" else float(cap)
    return mixing.DampingSchedule(**kw)


def _coefficients(text, m):
    if text is None or text == "uniform":
        return None
    b = _parse_floats(text, "--b")
    if len(b) != m:
        raise UsageError(f"--b has {len(b)} entries but --m is {m}")
    return b


def _load_system(path):
    return dftb.load_system(path)


def _start(system, how):
    if how == "q0":
        return np.array(system.q0, dtype=float)
    if how == "zeros":
        return np.zeros(system.atom_count)
    raise UsageError(f"unknown --start {how!r}")


def _read_q(path) -> np.ndarray:
    with open(path) as fh:
        doc = json.load(fh)
    return np.asarray(doc["q"] if isinstance(doc, dict) else doc, dtype=float)


# --- commands ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.spec:
        with open(args.spec) as fh:
            spec_kw = json.load(fh)
    else:
        spec_kw = {}
    for name in ("lattice", "atoms", "orbitals", "hopping", "onsite", "overlap", "softening",
                 "hubbard", "q0", "mu", "beta", "spacing", "disorder", "seed", "name"):
        v = getattr(args, name)
        if v is not None:
            spec_kw[name] = v
    try:
        spec = dftb.SyntheticSpec(**spec_kw)
    except TypeError as exc:
        raise UsageError(str(exc))
    system = dftb.generate_synthetic(spec)  # OverlapNotSPD -> exit 3
    out = fresh_dir(args.out)
    dftb.save_system(system, out)
    print(out)
    return EXIT_OK


def cmd_scf_exact(args) -> int:
    system = _load_system(args.system)
    if args.max_iter < 0:
        raise UsageError("--max-iter must be >= 0")
    if not 0 < args.damping <= 1:
        raise UsageError("--damping must lie in (0, 1]")
    model = dftb.SCCModel(system)
    problem = dftb.DFTBProblem(model, ell=model.dimension)
    run = Run("scf-exact", args, args.out)
    run.inputs.append(str(args.system))
    cfg = mixing.MixingConfig(
        damping=mixing.DampingSchedule.constant(args.damping),
        max_iter=args.max_iter, block_size=1, tol=args.tol,
    )
    trace = mixing.run(mixing.ExactProblem(problem), cfg, _start(system, args.start))
    trace.write_csv(run.path("trace.csv"))
    q = trace.final
    res = float(np.max(np.abs(problem.exact_eval(q) - q)))
    ok = res <= args.tol
    dump_json(
        {"q": _floats(q), "residual_inf": res, "tol": args.tol, "iterations": len(trace),
         "converged": ok, "electrons": float(np.sum(q))},
        run.path("qstar.json"),
    )
    print(f"{'converged' if ok else 'not converged'}: residual {res:.3e} after {len(trace)} iterations -> {run.dir}")
    return run.finish(EXIT_OK if ok else EXIT_NOCONV)


def _mixing_config(args) -> mixing.MixingConfig:
    m = 1 if args.scheme == "simple" else args.m
    try:
        return mixing.MixingConfig(
            scheme=args.scheme, depth=m, coefficients=_coefficients(args.b, m) if args.scheme == "linear" else None,
            damping=_schedule(args, args.scheme), anderson_regularization=args.anderson_reg,
            n_vec=args.nvec, ell=args.ell, max_iter=args.max_iter, seed=args.seed,
            warmup_steps=args.warmup, block_size=args.block_size, tol=args.tol,
        )
    except ValueError as exc:
        raise UsageError(str(exc))


def cmd_scf_stochastic(args) -> int:
    cfg = _mixing_config(args)
    system = _load_system(args.system)
    problem = dftb.DFTBProblem(dftb.SCCModel(system), ell=cfg.ell, probe_kind=args.probe)
    q_star = _read_q(args.qstar) if args.qstar else None
    if q_star is not None and q_star.shape != (system.atom_count,):
        raise UsageError("--qstar has the wrong length")
    run = Run("scf-stochastic", args, args.out)
    run.inputs.append(str(args.system))
    if args.qstar:
        run.inputs.append(str(args.qstar))
    status = EXIT_OK
    try:
        trace = mixing.run(problem, cfg, _start(system, args.start))
    except mixing.NonFiniteIterate as exc:
        trace = exc.trace
        status = EXIT_DIVERGED
    trace.write_csv(run.path("trace.csv"), q_star=q_star, coeff_columns=cfg.depth)
    doc = {"final": _floats(trace.final), "steps": len(trace), "config": cfg.to_dict(),
           "diverged": status == EXIT_DIVERGED}
    if status == EXIT_OK and len(trace):
        avg = mixing.averaged_iterate(trace)
        blocks = mixing.block_means(trace.iterate_array, cfg.block_size)
        doc["averaged"] = _floats(avg)
        doc["block_means"] = [_floats(r) for r in blocks]
        if q_star is not None:
            doc["averaged_err_inf"] = float(np.max(np.abs(avg - q_star)))
            doc["block_err_inf"] = _floats(np.max(np.abs(blocks - q_star), axis=1)) if len(blocks) else []
    dump_json(doc, run.path("averaged.json"))
    print(f"{len(trace)} steps{' (diverged)' if status else ''} -> {run.dir}")
    return run.finish(status)


def cmd_sweep_ell(args) -> int:
    ells = _parse_ints(args.ells, "--ells")
    if not ells or any(e < 1 for e in ells):
        raise UsageError("--ells must list positive integers")
    system = _load_system(args.system)
    model = dftb.SCCModel(system)
    run = Run("sweep-ell", args, args.out)
    run.inputs.append(str(args.system))
    if args.qstar:
        q_star = _read_q(args.qstar)
        run.inputs.append(str(args.qstar))
    else:
        q_star, res, _ = diagnostics.exact_fixed_point(dftb.DFTBProblem(model, model.dimension),
                                                       _start(system, "q0"), tol=1e-12)
        if res > 1e-10:
            return run.finish(EXIT_NOCONV)
    tail = args.tail
    if not 0 < tail <= args.max_iter:
        raise UsageError("--tail must lie in (0, --max-iter]")
    if args.replicates < 2:
        raise UsageError("--replicates must be >= 2")
    rows = []
    for ell in ells:
        if ell > model.dimension:
            raise UsageError(f"ell={ell} exceeds the matrix dimension {model.dimension}")
        problem = dftb.DFTBProblem(model, ell=ell, probe_kind=args.probe)
        ests = []
        for r in range(args.replicates):
            cfg = mixing.MixingConfig(damping=_schedule(args, "simple"), ell=ell, max_iter=args.max_iter,
                                      seed=diagnostics.derived_seed(args.seed, r), block_size=args.block_size)
            try:
                trace = mixing.run(problem, cfg, q_star)
            except mixing.NonFiniteIterate:
                return run.finish(EXIT_DIVERGED)
            ests.append(trace.iterate_array[-tail:].mean(axis=0))
        ests = np.array(ests)
        est = ests.mean(axis=0)
        # standard error of the replicate mean, worst component
        noise = float(np.max(ests.std(axis=0, ddof=1)) / np.sqrt(len(ests)))
        rows.append((ell, float(np.max(np.abs(est - q_star))), noise))
    with open(run.path("sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ell", "err_inf_estimate", "noise_inf"])
        for ell, err, noise in rows:
            w.writerow([ell, repr(err), repr(noise)])
    dump_json({"q_star": _floats(q_star), "rows": [dict(ell=e, err_inf_estimate=r, noise_inf=s) for e, r, s in rows]},
              run.path("report.json"))
    for ell, err, noise in rows:
        print(f"ell={ell:4d}  err_inf={err:.3e}  noise={noise:.1e}")
    return run.finish(EXIT_OK)


def _preset_problem(args):
    try:
        base = diagnostics.PRESETS[args.preset]
    except KeyError:
        raise UsageError(f"unknown preset {args.preset!r}")
    c = float(np.asarray(base["C"]).ravel()[0])
    dim = args.dim
    if dim < 1:
        raise UsageError("--dim must be >= 1")
    noise = base["noise_width"] if args.noise is None else args.noise
    return diagnostics.LinearNoisyProblem(c * np.eye(dim), np.zeros(dim), noise)


def _preset_config(args, max_iter, exponent):
    m = args.m
    scheme = "simple" if m == 1 else "linear"
    try:
        return mixing.MixingConfig(
            scheme=scheme, depth=m, coefficients=_coefficients(args.b, m) if m > 1 else None,
            damping=mixing.DampingSchedule.power(args.damping_a, exponent), max_iter=max_iter, seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc))


def cmd_stability_mc(args) -> int:
    if args.paths < 1:
        raise UsageError("--paths must be >= 1")
    if args.steps < 1 or not args.rho > 0:
        raise UsageError("--steps must be >= 1 and --rho positive")
    problem = _preset_problem(args)
    cfg = _preset_config(args, args.steps, args.damping_exponent)
    q_star = problem.q_star
    start = q_star + args.q1 / np.sqrt(problem.dimension)
    run = Run("stability-mc", args, args.out)
    rep = diagnostics.stability_monte_carlo(problem, cfg, args.rho, q_star, args.paths, args.seed, warm_start=start)
    doc = rep.to_dict()
    if args.trend_paths:
        trend = diagnostics.supermartingale_trend(problem, cfg, args.rho, q_star, args.trend_paths, args.seed + 1,
                                                  warm_start=start, Xi=rep.xi)
        doc["trend"] = trend.to_dict()
    dump_json(doc, run.path("report.json"))
    print(f"exit probability {rep.exit_probability:.4f} (se {rep.mc_stderr:.4f}), bound {rep.bound:.4f} -> {run.dir}")
    return run.finish(EXIT_OK)


def cmd_complexity(args) -> int:
    eps = _parse_floats(args.epsilons, "--epsilons")
    seeds = _parse_ints(args.seeds, "--seeds")
    if not eps or not seeds or any(e <= 0 for e in eps):
        raise UsageError("--epsilons must be positive and --seeds non-empty")
    problem = _preset_problem(args)
    if args.deterministic:
        problem.noise_width = 0.0
        cfg = mixing.MixingConfig(damping=mixing.DampingSchedule.constant(args.damping_a), max_iter=args.max_iter)
        candidate = "iterate"
    else:
        if not 0.5 < args.exponent <= 1:
            raise UsageError("--exponent must lie in (1/2, 1]")
        cfg = _preset_config(args, args.max_iter, args.exponent)
        candidate = "averaged"
    start = problem.q_star + args.q1 / np.sqrt(problem.dimension)
    run = Run("complexity", args, args.out)
    table = diagnostics.complexity_scan(problem, cfg, eps, problem.q_star, seeds, warm_start=start,
                                        candidate=candidate, check_every=args.check_every)
    dump_json(table.to_dict(), run.path("report.json"))
    print(f"slope {table.loglog_slope} (predicted {table.predicted_slope}), R^2 {table.log_fit_r2} -> {run.dir}")
    return run.finish(EXIT_OK)


# --- parser --------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochscf", description="Stochastic SCF charge mixing toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of option defaults (command-line flags win)")

    g = sub.add_parser("gen", help="generate a synthetic tight-binding system")
    common(g)
    g.add_argument("-o", "--out", required=True)
    g.add_argument("--spec", help="JSON file with SyntheticSpec fields")
    g.add_argument("--lattice", choices=("honeycomb", "chain"))
    for name, typ in (("atoms", int), ("orbitals", int), ("hopping", float), ("onsite", float),
                      ("overlap", float), ("softening", float), ("hubbard", float), ("q0", float),
                      ("mu", float), ("beta", float), ("spacing", float), ("disorder", float),
                      ("seed", int), ("name", str)):
        g.add_argument(f"--{name}", type=typ)
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("scf-exact", help="deterministic damped SCF for the reference charges")
    common(e)
    e.add_argument("system")
    e.add_argument("-o", "--out", default="runs/scf-exact")
    e.add_argument("--damping", type=float, default=0.2)
    e.add_argument("--tol", type=float, default=1e-10)
    e.add_argument("--max-iter", type=int, default=10_000)
    e.add_argument("--start", choices=("q0", "zeros"), default="q0")
    e.set_defaults(func=cmd_scf_exact)

    s = sub.add_parser("scf-stochastic", help="stochastic SCF with Krylov-sampled charges")
    common(s)
    s.add_argument("system")
    s.add_argument("-o", "--out", default="runs/scf-stochastic")
    s.add_argument("--scheme", choices=mixing.SCHEMES, default="simple")
    s.add_argument("--m", type=int, default=1)
    s.add_argument("--b", default="uniform", help="'uniform' or comma-separated b_1..b_m")
    s.add_argument("--ell", type=int, default=20)
    s.add_argument("--nvec", type=int, default=1)
    s.add_argument("--probe", choices=("rademacher", "gaussian"), default="rademacher")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-iter", type=int, default=30_000)
    s.add_argument("--warmup", type=int, default=2000)
    s.add_argument("--block-size", type=int, default=1000)
    s.add_argument("--tol", type=float, default=None)
    s.add_argument("--anderson-reg", type=float, default=1e-8)
    s.add_argument("--start", choices=("q0", "zeros"), default="q0")
    s.add_argument("--qstar", help="qstar.json from scf-exact; enables the err_inf column")
    _add_schedule(s)
    s.set_defaults(func=cmd_scf_stochastic)

    w = sub.add_parser("sweep-ell", help="fixed-point error of the ell-step Krylov map")
    common(w)
    w.add_argument("system")
    w.add_argument("-o", "--out", default="runs/sweep-ell")
    w.add_argument("--ells", default="2,4,8,16")
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--max-iter", type=int, default=10_000)
    w.add_argument("--tail", type=int, default=5000, help="number of final iterates averaged")
    w.add_argument("--replicates", type=int, default=4, help="independent runs per ell")
    w.add_argument("--block-size", type=int, default=1000)
    w.add_argument("--probe", choices=("rademacher", "gaussian"), default="rademacher")
    w.add_argument("--qstar", help="qstar.json; computed if omitted")
    _add_schedule(w)
    w.set_defaults(func=cmd_sweep_ell)

    def preset_opts(sp):
        sp.add_argument("--preset", default="scalar-half")
        sp.add_argument("--dim", type=int, default=1)
        sp.add_argument("--noise", type=float, default=None, help="noise half-width")
        sp.add_argument("--m", type=int, default=1)
        sp.add_argument("--b", default="uniform")
        sp.add_argument("--damping-a", type=float, default=0.5)
        sp.add_argument("--q1", type=float, default=0.5, help="initial distance from q*")
        sp.add_argument("--seed", type=int, default=0)

    m = sub.add_parser("stability-mc", help="exit-probability experiment on a preset problem")
    common(m)
    preset_opts(m)
    m.add_argument("-o", "--out", default="runs/stability-mc")
    m.add_argument("--rho", type=float, default=1.0)
    m.add_argument("--paths", type=int, default=1000)
    m.add_argument("--steps", type=int, default=300)
    m.add_argument("--damping-exponent", type=float, default=1.0)
    m.add_argument("--trend-paths", type=int, default=0, help="also run the Lyapunov trend check")
    m.set_defaults(func=cmd_stability_mc)

    c = sub.add_parser("complexity", help="iterations-to-epsilon scan on a preset problem")
    common(c)
    preset_opts(c)
    c.add_argument("-o", "--out", default="runs/complexity")
    c.add_argument("--exponent", type=float, default=0.75)
    c.add_argument("--epsilons", default="0.1,0.0562,0.0316,0.0178,0.01,0.00562,0.00316")
    c.add_argument("--seeds", default="1,2,3,4,5")
    c.add_argument("--max-iter", type=int, default=200_000)
    c.add_argument("--check-every", type=int, default=1)
    c.add_argument("--deterministic", action="store_true")
    c.set_defaults(func=cmd_complexity)
    return p


def _apply_config(parser, argv):
    """Re-parse with defaults from ``--config`` so explicit flags still win."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config) as fh:
            conf = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}")
    if not isinstance(conf, dict):
        raise UsageError("config file must hold a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    conf = {k.replace("-", "_"): v for k, v in conf.items()}
    unknown = sorted(set(conf) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    sub.set_defaults(**conf)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except dftb.InvalidSystem as exc:
        print(f"invalid system: {exc}", file=sys.stderr)
        return EXIT_SYSTEM
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # argparse errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
