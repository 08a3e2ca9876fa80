"""Command-line front end: reproducible simulation, continuation, cable,
and diagnostics runs with CSV/JSON outputs and a run manifest.

Exit codes: 0 success, 2 usage error, 3 numerical failure, 4 not found.
The default output directory is ``--out``, falling back to the
``CARDIODYN_OUTDIR`` environment variable, falling back to the current
directory.  Plotting is out of scope; every figure-level result is
reproducible from the CSV/JSON outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .bernus import BERNUS_CHAOTIC_IC, BERNUS_IC, bernus_model
from .cable import (
    CableConfig,
    CableError,
    CableRegion,
    bernus_cable_scenarios,
    mode_jacobian,
    noble_cable_scenarios,
    probe_report,
    simulate_cable,
)
from .continuation import ContinuationError, continue_equilibria
from .cycles import (
    CycleError,
    continue_doubled_cycles,
    continue_limit_cycles,
    cycle_guess_from_trajectory,
    find_limit_cycle,
)
from .diagnostics import (
    DiagnosticsError,
    ap_metrics,
    count_eads,
    largest_lyapunov,
    measure_period,
    write_metrics_csv,
)
from .equilibria import EquilibriumError, find_equilibrium
from .integrator import (
    IntegrationError,
    SolverConfig,
    StimulusProtocol,
    integrate,
)
from .model_core import ModelError
from .model_file import dumps, load_model
from .noble import NOBLE_CHAOTIC_IC, NOBLE_IC, noble_model

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_NOT_FOUND = 0, 2, 3, 4

_NUMERICAL_ERRORS = (IntegrationError, CycleError, ContinuationError,
                     EquilibriumError, DiagnosticsError)


class UsageError(ValueError):
    pass


class NotFoundError(ValueError):
    pass


@dataclass
class RunManifest:
    """Everything needed to reproduce a run: fully resolved inputs plus
    pointers to the outputs it produced."""

    command: list
    tool_version: str
    model: str
    model_hash: str
    config: dict
    outputs: list = field(default_factory=list)
    wall_time_s: float = 0.0

    def write(self, path):
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2, default=_json_default)
        self.outputs.append(str(path))


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x)}")


def _load_named_model(name):
    if name == "noble":
        return noble_model()
    if name == "bernus":
        return bernus_model()
    if os.path.exists(name):
        return load_model(name)
    raise NotFoundError(f"unknown model {name!r}: expected 'noble', "
                        f"'bernus', or a model-file path")


def _default_ic(model_name, which):
    table = {
        ("noble", "default"): NOBLE_IC,
        ("noble", "chaotic"): NOBLE_CHAOTIC_IC,
        ("bernus", "default"): BERNUS_IC,
        ("bernus", "chaotic"): BERNUS_CHAOTIC_IC,
    }
    try:
        return table[(model_name, which)]
    except KeyError:
        raise UsageError(
            f"no named initial condition {which!r} for model {model_name!r};"
            " pass a comma-separated state instead") from None


def _parse_ic(model, model_name, text):
    if text in ("default", "chaotic"):
        return np.asarray(_default_ic(model_name, text), dtype=float)
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse initial condition {text!r}") from None
    if len(vals) != model.dim:
        raise UsageError(f"initial condition needs {model.dim} components, "
                         f"got {len(vals)}")
    return np.asarray(vals)


def _parse_overrides(model, pairs):
    out = {}
    valid = set(model.param_names)
    for s in pairs or ():
        if "=" not in s:
            raise UsageError(f"override {s!r} is not NAME=VALUE")
        k, v = s.split("=", 1)
        if k not in valid:
            raise UsageError(f"unknown parameter {k!r}; valid: "
                             f"{sorted(valid)}")
        try:
            out[k] = float(v)
        except ValueError:
            raise UsageError(f"override {s!r}: bad number {v!r}") from None
    return out


def _solver_from(args):
    kw = {}
    if getattr(args, "rtol", None) is not None:
        kw["rtol"] = args.rtol
    if getattr(args, "atol", None) is not None:
        kw["atol_V"] = args.atol
        kw["atol_gates"] = args.atol
    if not kw:
        return None
    return SolverConfig(**kw)


def _outdir(args):
    out = args.out or os.environ.get("CARDIODYN_OUTDIR") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _manifest(args, model, config):
    return RunManifest(
        command=list(sys.argv[1:]) if args is None else args._argv,
        tool_version=__version__,
        model=model.name,
        model_hash=hashlib.sha256(dumps(model).encode()).hexdigest(),
        config=config,
    )


def _stimulus_from(args):
    amp = getattr(args, "stim_amplitude", 0.0) or 0.0
    if amp == 0.0:
        return None
    return StimulusProtocol(amplitude=amp, start=args.stim_start,
                            duration=args.stim_duration,
                            period=args.stim_period, count=args.stim_count)


# -- subcommands ---------------------------------------------------------------


def cmd_simulate(args):
    model = _load_named_model(args.model)
    params = _parse_overrides(model, args.set)
    ic = _parse_ic(model, args.model, args.ic)
    stim = _stimulus_from(args)
    out = _outdir(args)
    t_span = (0.0, args.t_end)
    cfg = {"params": params, "ic": ic.tolist(), "t_span": list(t_span),
           "stimulus": None if stim is None else asdict(stim)}
    man = _manifest(args, model, cfg)
    t0 = time.perf_counter()
    traj = integrate(model, ic, params=params, t_span=t_span,
                     config=_solver_from(args), stimulus=stim)
    csv_path = os.path.join(out, "trajectory.csv")
    traj.to_csv(csv_path, stride=args.stride)
    man.outputs.append(csv_path)

    metrics = {"V_max": float(traj.states[0].max()),
               "V_min": float(traj.states[0].min())}
    period = measure_period(traj)
    metrics["T"] = period
    try:
        met = ap_metrics(traj)
        metrics["APD90"] = met.apd
        metrics["EAD_count"] = met.ead_count
    except DiagnosticsError:
        metrics["APD90"] = None
        metrics["EAD_count"] = int(sum(count_eads(traj)))
    amp = metrics["V_max"] - metrics["V_min"]
    if period is not None:
        metrics["verdict"] = "periodic"
    elif amp < 10.0:
        metrics["verdict"] = "converges to equilibrium"
    else:
        metrics["verdict"] = "aperiodic"
    met_path = os.path.join(out, "metrics.json")
    with open(met_path, "w") as f:
        json.dump(metrics, f, indent=2, default=_json_default)
    man.outputs.append(met_path)
    man.wall_time_s = time.perf_counter() - t0
    man.write(os.path.join(out, "manifest.json"))
    print(f"simulate {model.name}: T={period} V in "
          f"[{metrics['V_min']:.2f}, {metrics['V_max']:.2f}] "
          f"EADs={metrics['EAD_count']} -> {metrics['verdict']}")
    return EXIT_OK


def _trace_cycle_branches(model, model_name, param, lo, hi, params,
                          eq_branch):
    """Cycle diagram over [lo, hi]: the branch reached by relaxation from
    the default state at ``lo``, plus, for each Hopf on the equilibrium
    branch, the branch reached by relaxing a perturbed equilibrium just
    inside the oscillatory side."""
    branches = []
    ic = np.asarray(_default_ic(model_name, "default"), dtype=float) \
        if model_name in ("noble", "bernus") else None
    if ic is not None:
        try:
            traj = integrate(model, ic, params={**(params or {}), param: lo},
                             t_span=(0.0, 8000.0))
            guess, T = cycle_guess_from_trajectory(traj)
            lc = find_limit_cycle(model, {**(params or {}), param: lo},
                                  guess, T)
            branches.append(continue_limit_cycles(
                model, param, (lo, hi), lc,
                params={**(params or {}), param: lo}, direction=+1))
        except (CycleError, IntegrationError):
            pass
    span = hi - lo
    for b in eq_branch.bifurcations:
        if b.kind != "Hopf":
            continue
        for side in (-1, +1):
            p_try = b.param_value + side * 0.02 * span
            if not lo <= p_try <= hi:
                continue
            try:
                pp = {**(params or {}), param: p_try}
                eq = find_equilibrium(model, pp)
                if eq.stability == "stable":
                    continue
                start = eq.state.copy()
                start[0] += 1.0
                traj = integrate(model, start, params=pp,
                                 t_span=(0.0, 30000.0))
                guess, T = cycle_guess_from_trajectory(traj, discard=0.8)
                lc = find_limit_cycle(model, pp, guess, T)
                branches.append(continue_limit_cycles(
                    model, param, (lo, hi), lc, params=pp,
                    direction=-side))
            except (CycleError, IntegrationError, EquilibriumError):
                continue
    return branches


def cmd_continue(args):
    model = _load_named_model(args.model)
    params = _parse_overrides(model, args.set)
    lo, hi = sorted((args.lo, args.hi))
    if args.param not in model.param_names:
        raise UsageError(f"unknown parameter {args.param!r}; valid: "
                         f"{sorted(model.param_names)}")
    out = _outdir(args)
    cfg = {"param": args.param, "range": [lo, hi], "mode":
           "lc" if args.lc else "eq", "params": params}
    man = _manifest(args, model, cfg)
    t0 = time.perf_counter()

    eq_branch = continue_equilibria(model, args.param, (lo, hi),
                                    params=params)
    eq_json = os.path.join(out, "equilibria.json")
    eq_csv = os.path.join(out, "equilibria.csv")
    eq_branch.to_json(eq_json)
    eq_branch.to_csv(eq_csv)
    man.outputs += [eq_json, eq_csv]
    found = [(b.kind, b.param_value,
              getattr(b, "auxiliary", {}) or {})
             for b in eq_branch.bifurcations]

    if args.lc:
        branches = _trace_cycle_branches(model, args.model, args.param,
                                         lo, hi, params, eq_branch)
        for i, br in enumerate(branches):
            jp = os.path.join(out, f"cycles_{i}.json")
            cp = os.path.join(out, f"cycles_{i}.csv")
            br.to_json(jp)
            br.to_csv(cp)
            man.outputs += [jp, cp]
            found += [(b.kind, b.param_value,
                       getattr(b, "auxiliary", {}) or {})
                      for b in br.bifurcations]
            if args.second_branch:
                for b in br.bifurcations:
                    if b.kind != "PD":
                        continue
                    try:
                        dbl = continue_doubled_cycles(
                            model, args.param,
                            (lo, b.param_value + 1e-4), b, params=params)
                    except CycleError:
                        continue
                    jp2 = os.path.join(out, f"cycles_{i}_doubled.json")
                    dbl.to_json(jp2)
                    man.outputs.append(jp2)
                    found += [(bb.kind, bb.param_value,
                               getattr(bb, "auxiliary", {}) or {})
                              for bb in dbl.bifurcations]

    man.wall_time_s = time.perf_counter() - t0
    man.write(os.path.join(out, "manifest.json"))
    for kind, pv, aux in sorted(found, key=lambda r: r[1]):
        extra = " ".join(f"{k}={v:.6g}" for k, v in aux.items()
                         if isinstance(v, (int, float)))
        print(f"{kind} at {args.param}={pv:.6f} {extra}".rstrip())
    if not found:
        print("no bifurcations detected in range")
    return EXIT_OK


_ALL_SCENARIOS = ("noble-suppress", "noble-chaos", "noble-two-region",
                  "noble-chaos-small-D", "ead-1pct", "ead-2pct",
                  "ead-50pct", "ead-normal-surround", "chaos-a", "chaos-b",
                  "chaos-c")


def _cable_config_from_file(path):
    with open(path) as f:
        doc = json.load(f)
    regions = tuple(
        CableRegion(
            interval=tuple(r["interval"]),
            params=r.get("params"),
            ic=tuple(r["ic"]) if r.get("ic") is not None else None,
            stimulus=(StimulusProtocol(**r["stimulus"])
                      if r.get("stimulus") else None))
        for r in doc.get("regions", ()))
    stim = (StimulusProtocol(**doc["stimulus"])
            if doc.get("stimulus") else None)
    kw = {k: doc[k] for k in ("length", "n_cells", "diffusion",
                              "sample_dt", "scenario") if k in doc}
    return doc["model"], CableConfig(
        regions=regions, params=doc.get("params"),
        ic=tuple(doc["ic"]) if doc.get("ic") is not None else None,
        stimulus=stim, t_span=tuple(doc.get("t_span", (0.0, 1000.0))),
        **kw)


def cmd_cable(args):
    if args.config:
        model_name, cfg = _cable_config_from_file(args.config)
        model = _load_named_model(model_name)
    elif args.scenario:
        if args.scenario not in _ALL_SCENARIOS:
            raise NotFoundError(
                f"unknown scenario {args.scenario!r}; valid: "
                f"{', '.join(_ALL_SCENARIOS)}")
        if args.scenario.startswith("noble-"):
            model = noble_model()
            cfg = noble_cable_scenarios(args.scenario)
        else:
            model = bernus_model()
            cfg = bernus_cable_scenarios(args.scenario,
                                         g_ca_scale=args.g_ca_scale)
    else:
        raise UsageError("cable needs a scenario id or --config FILE; "
                         f"scenarios: {', '.join(_ALL_SCENARIOS)}")
    if args.t_end is not None:
        from .cable import with_t_span
        cfg = with_t_span(cfg, (cfg.t_span[0], args.t_end))
    out = _outdir(args)
    man = _manifest(args, model, cfg.to_dict())
    t0 = time.perf_counter()
    fld = simulate_cable(model, cfg, solver=_solver_from(args))
    csv_path = os.path.join(out, "field.csv")
    fld.to_csv(csv_path, stride=args.stride)
    side_path = os.path.join(out, "field.json")
    fld.write_sidecar(side_path)
    man.outputs += [csv_path, side_path]
    man.wall_time_s = time.perf_counter() - t0
    man.write(os.path.join(out, "manifest.json"))
    for p in probe_report(fld):
        print(f"cell {p['cell']} (x={p['x']:.3f}): {p['verdict']} "
              f"T={p['period']} EADs={p['ead_total']}")
    if fld.failure_time is not None:
        print(f"integration failed at t={fld.failure_time:.3f} ms; "
              "partial field written")
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_lyapunov(args):
    model = _load_named_model(args.model)
    params = _parse_overrides(model, args.set)
    ic = _parse_ic(model, args.model, args.ic)
    out = _outdir(args)
    cfg = {"params": params, "ic": ic.tolist(), "horizon": args.horizon,
           "renorm_dt": args.renorm_dt, "delta0": args.delta0}
    man = _manifest(args, model, cfg)
    t0 = time.perf_counter()
    res = largest_lyapunov(model, params, ic, horizon=args.horizon,
                           renorm_dt=args.renorm_dt, delta0=args.delta0)
    csv_path = os.path.join(out, "lyapunov.csv")
    with open(csv_path, "w") as f:
        f.write("n,lambda1_running\n")
        for i, v in enumerate(res.series):
            f.write(f"{i},{v!r}\n")
    man.outputs.append(csv_path)
    man.wall_time_s = time.perf_counter() - t0
    man.write(os.path.join(out, "manifest.json"))
    print(f"lambda1 = {res.exponent:.6g} /ms ({res.verdict}; "
          f"tail drift {res.tail_drift:.3g})")
    return EXIT_OK


def cmd_modes(args):
    model = _load_named_model(args.model)
    params = _parse_overrides(model, args.set)
    try:
        eq = find_equilibrium(model, params, V_bracket=(-120.0, 0.0))
    except EquilibriumError:
        eq = find_equilibrium(model, params, V_bracket=(0.0, 60.0))
    out = _outdir(args)
    ks = [args.k] if args.k is not None else list(range(args.kmax + 1))
    cfg = {"params": params, "k": ks[0] if len(ks) == 1 else
           {"kmax": args.kmax}, "length": args.length,
           "diffusion": args.diffusion}
    man = _manifest(args, model, cfg)
    t0 = time.perf_counter()
    rows = []
    for k in ks:
        ma = mode_jacobian(model, eq, k, length=args.length,
                           diffusion=args.diffusion, params=params)
        rows.append((k, ma.shift, float(ma.eigenvalues.real.max()),
                     ma.stability))
    csv_path = os.path.join(out, "modes.csv")
    with open(csv_path, "w") as f:
        f.write("k,shift,max_re_lambda,stability\n")
        for k, sh, re, st in rows:
            f.write(f"{k},{sh!r},{re!r},{st}\n")
    man.outputs.append(csv_path)
    man.wall_time_s = time.perf_counter() - t0
    man.write(os.path.join(out, "manifest.json"))
    stable_from = next((k for (k, _, _, st) in rows if st == "stable"
                        and all(r[3] == "stable" for r in rows[k:])), None)
    last = rows[-1]
    print(f"k={last[0]}: max Re lambda = {last[2]:.6g} ({last[3]})")
    if len(rows) > 1:
        print(f"stable for all k >= {stable_from}"
              if stable_from is not None else "no stable tail in scan")
    return EXIT_OK


def _sweep_point(payload):
    (model_name, param, value, params, ic, t_end) = payload
    model = _load_named_model(model_name)
    pp = {**params, param: value}
    traj = integrate(model, ic, params=pp, t_span=(0.0, t_end))
    period = measure_period(traj)
    eads = count_eads(traj)
    return {"run_id": f"{param}={value:.6g}", "T": period,
            "V_max": float(traj.states[0].max()),
            "V_min": float(traj.states[0].min()),
            "EAD_count": int(sum(eads)),
            "verdict": "periodic" if period is not None else "aperiodic"}


def cmd_sweep(args):
    model = _load_named_model(args.model)
    params = _parse_overrides(model, args.set)
    if args.param not in model.param_names:
        raise UsageError(f"unknown parameter {args.param!r}")
    ic = _parse_ic(model, args.model, args.ic)
    values = np.arange(args.lo, args.hi + 0.5 * args.step, args.step)
    out = _outdir(args)
    cfg = {"param": args.param, "values": values.tolist(),
           "params": params, "t_end": args.t_end}
    man = _manifest(args, model, cfg)
    payloads = [(args.model, args.param, float(v), params, ic.tolist(),
                 args.t_end) for v in values]
    t0 = time.perf_counter()
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_point, payloads))
    else:
        rows = [_sweep_point(p) for p in payloads]
    csv_path = os.path.join(out, "sweep.csv")
    write_metrics_csv(csv_path, rows)
    man.outputs.append(csv_path)
    man.wall_time_s = time.perf_counter() - t0
    man.write(os.path.join(out, "manifest.json"))
    for r in rows:
        print(f"{r['run_id']}: T={r['T']} EADs={r['EAD_count']} "
              f"{r['verdict']}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(
        prog="cardiodyn",
        description="Cardiac cell-model simulation and bifurcation "
                    "workbench")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--out", default=None,
                        help="output directory (default: $CARDIODYN_OUTDIR "
                             "or .)")
        sp.add_argument("--rtol", type=float, default=None)
        sp.add_argument("--atol", type=float, default=None)
        sp.add_argument("--seed", type=int, default=None,
                        help="RNG seed (reserved; analyses are "
                             "deterministic)")

    def model_args(sp):
        sp.add_argument("model", help="'noble', 'bernus', or model file")
        sp.add_argument("--set", action="append", metavar="NAME=VALUE",
                        help="parameter override, repeatable")

    sp = sub.add_parser("simulate", help="integrate a cell model")
    model_args(sp)
    sp.add_argument("--ic", default="default",
                    help="'default', 'chaotic', or comma-separated state")
    sp.add_argument("--t-end", type=float, default=6000.0)
    sp.add_argument("--stride", type=int, default=1)
    sp.add_argument("--stim-amplitude", type=float, default=0.0)
    sp.add_argument("--stim-start", type=float, default=10.0)
    sp.add_argument("--stim-duration", type=float, default=2.0)
    sp.add_argument("--stim-period", type=float, default=0.0)
    sp.add_argument("--stim-count", type=int, default=1)
    common(sp)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("continue",
                        help="trace equilibrium (and cycle) branches")
    model_args(sp)
    sp.add_argument("param", help="bifurcation parameter name")
    sp.add_argument("lo", type=float)
    sp.add_argument("hi", type=float)
    grp = sp.add_mutually_exclusive_group()
    grp.add_argument("--eq", action="store_true",
                     help="equilibrium branch only (default)")
    grp.add_argument("--lc", action="store_true",
                     help="also trace limit-cycle branches")
    sp.add_argument("--second-branch", action="store_true",
                    help="continue the period-doubled branch from each PD")
    common(sp)
    sp.set_defaults(fn=cmd_continue)

    sp = sub.add_parser("cable", help="run a 1D monodomain cable scenario")
    sp.add_argument("scenario", nargs="?", default=None,
                    help=f"one of: {', '.join(_ALL_SCENARIOS)}")
    sp.add_argument("--config", default=None,
                    help="cable config JSON (overrides scenario)")
    sp.add_argument("--g-ca-scale", type=float, default=1.0,
                    help="rescale all G_Ca values (Bernus scenarios)")
    sp.add_argument("--t-end", type=float, default=None)
    sp.add_argument("--stride", type=int, default=1)
    common(sp)
    sp.set_defaults(fn=cmd_cable)

    sp = sub.add_parser("lyapunov",
                        help="largest Lyapunov exponent of a cell model")
    model_args(sp)
    sp.add_argument("--ic", default="default")
    sp.add_argument("--horizon", type=float, default=20000.0)
    sp.add_argument("--renorm-dt", type=float, default=10.0)
    sp.add_argument("--delta0", type=float, default=1e-8)
    common(sp)
    sp.set_defaults(fn=cmd_lyapunov)

    sp = sub.add_parser("modes",
                        help="mode-k linearized stability at equilibrium")
    model_args(sp)
    sp.add_argument("--k", type=int, default=None)
    sp.add_argument("--kmax", type=int, default=200)
    sp.add_argument("--length", type=float, default=1.0)
    sp.add_argument("--diffusion", type=float, default=1.0 / 360.0)
    common(sp)
    sp.set_defaults(fn=cmd_modes)

    sp = sub.add_parser("sweep",
                        help="per-parameter-point simulation metrics")
    model_args(sp)
    sp.add_argument("param")
    sp.add_argument("lo", type=float)
    sp.add_argument("hi", type=float)
    sp.add_argument("--step", type=float, required=True)
    sp.add_argument("--ic", default="default")
    sp.add_argument("--t-end", type=float, default=6000.0)
    sp.add_argument("--workers", type=int, default=1)
    common(sp)
    sp.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    args._argv = list(argv) if argv is not None else list(sys.argv[1:])
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NotFoundError, FileNotFoundError) as e:
        print(f"not found: {e}", file=sys.stderr)
        return EXIT_NOT_FOUND
    except (CableError, ModelError, ValueError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except _NUMERICAL_ERRORS as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
