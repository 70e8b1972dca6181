"""Experiment harness: config parsing, dispatch, CSV + manifest emission.

Configs are sectioned key=value text ([run] section) or the equivalent
command-line flags; flags override the file.  Every run writes a CSV with a
fixed column order and 17-significant-digit reals (byte-stable for a fixed
config and seed) plus a JSON manifest with the resolved config and a result
summary.  Exit status is 0 only when all asserted invariants in the run hold.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


class ConfigFileError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config schema and parsing
# ---------------------------------------------------------------------------

def _float_list(text):
    return [float(tok) for tok in str(text).replace(";", ",").split(",") if tok.strip()]


def _positive_int(text):
    v = int(text)
    if v <= 0:
        raise ValueError(f"must be positive, got {v}")
    return v


_COMMON = {
    "out": (str, None),
    "seed": (int, 0),
    "workers": (_positive_int, None),
}

SCHEMAS = {
    "cell-problem": {
        "flow": (str, "cellular"), "amp": (float, 1.0), "e": (_float_list, [1.0, 0.0]),
        "n": (_positive_int, 64), "tol": (float, 1e-10), **_COMMON,
    },
    "diffusivity-sweep": {
        "flow": (str, "cellular"), "amps": (_float_list, [25, 50, 100, 200, 400]),
        "e": (_float_list, [1.0, 0.0]), "tol": (float, 1e-8),
        "n-max": (_positive_int, 720), **_COMMON,
    },
    "front-speed": {
        "flow": (str, "cellular"), "amp": (float, 16.0),
        "reaction": (str, "ignition:theta=0.25"), "e": (str, "x1"),
        "n-cross": (_positive_int, 32), "integrals": (int, 1),
        "t-end": (float, 0.0), **_COMMON,
    },
    "scaling-sweep": {
        "flow": (str, "cellular"), "amps": (_float_list, [16, 64]),
        "reaction": (str, "ignition:theta=0.25"), "n-cross": (_positive_int, 32),
        **_COMMON,
    },
    "ratio-battery": {
        "battery": (str, "zero;shear:sin@4;shear:sin@16;cellular@16;"
                         "cellular@64;rotated-cellular@16"),
        "reaction": (str, "ignition:theta=0.25"), "n-cross": (_positive_int, 32),
        "integrals": (int, 1), **_COMMON,
    },
    "mc-diffusivity": {
        "flow": (str, "cellular"), "amp": (float, 50.0), "t": (float, 50.0),
        "paths": (_positive_int, 4000), "e": (_float_list, [1.0, 0.0]),
        "dt-max": (float, 0.005), **_COMMON,
    },
    "fk-check": {
        "flow": (str, "cellular"), "amp": (float, 20.0), "t": (float, 0.5),
        "paths": (_positive_int, 100000), "n": (_positive_int, 64), **_COMMON,
    },
    "spread": {
        "flow": (str, "cellular"), "amps": (_float_list, [25, 100, 400]),
        "tau": (float, 1.0), "alpha": (float, 0.05), "paths": (_positive_int, 2000),
        "probes": (_positive_int, 3), **_COMMON,
    },
    "quench-sweep": {
        "flow": (str, "cellular"), "theta": (float, 0.25),
        "Ls": (_float_list, [0.75, 1.5]), "amps": (_float_list, [1, 2, 4, 8, 16, 32, 64, 128]),
        "horizon": (float, 40.0), "n-cross": (_positive_int, 32), **_COMMON,
    },
    "counterexample3d": {
        "Rs": (_float_list, [1 / 8, 1 / 16, 1 / 32, 1 / 64]),
        "fprime0": (float, 1.0), "n": (_positive_int, 256), **_COMMON,
    },
    "selftest": {**_COMMON},
}


def parse_config_file(path, command=None):
    """Parse a sectioned key=value file; first error reports its line number."""
    values = {}
    section = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith(("#", ";")):
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                continue
            if "=" not in line:
                raise ConfigFileError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if section not in (None, "run"):
                raise ConfigFileError(f"{path}:{lineno}: unknown section [{section}]")
            if key == "command":
                if command is not None and val != command:
                    raise ConfigFileError(
                        f"{path}:{lineno}: config is for {val!r}, not {command!r}")
                values["command"] = val
                continue
            values.setdefault("_lines", {})[key] = lineno
            values[key] = val
    cmd = command or values.get("command")
    if cmd is None:
        raise ConfigFileError(f"{path}: no command given (add command=<name>)")
    if cmd not in SCHEMAS:
        raise ConfigFileError(f"{path}: unknown command {cmd!r}")
    schema = SCHEMAS[cmd]
    lines = values.pop("_lines", {})
    out = {"command": cmd}
    for key, val in values.items():
        if key == "command":
            continue
        if key not in schema:
            raise ConfigFileError(f"{path}:{lines.get(key, '?')}: unknown key {key!r}")
        typ = schema[key][0]
        try:
            out[key] = typ(val)
        except (TypeError, ValueError) as err:
            raise ConfigFileError(f"{path}:{lines.get(key, '?')}: bad value for "
                                  f"{key!r}: {err}")
    return out


def resolve_config(command, file_values, flag_values):
    cfg = {}
    schema = SCHEMAS[command]
    for key, (typ, default) in schema.items():
        cfg[key] = default
    for key, val in file_values.items():
        if key != "command":
            cfg[key] = val
    for key, val in flag_values.items():
        if val is not None:
            cfg[key] = val
    return cfg


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")


def write_manifest(path, command, cfg, summary, wall_time, ok, tolerances=None):
    manifest = {
        "command": command,
        "config": {k: v for k, v in cfg.items() if not k.startswith("_")},
        "version": __version__,
        "wall_time_s": wall_time,
        "tolerances": tolerances or {},
        "summary": summary,
        "ok": bool(ok),
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _failure_record(out_dir, command, message):
    rec = {"command": command, "error": message, "ok": False}
    path = Path(out_dir) / "failure.json"
    with open(path, "w") as fh:
        json.dump(rec, fh, indent=2)
        fh.write("\n")
    return path


def _workers(cfg):
    if cfg.get("workers"):
        return cfg["workers"]
    return int(os.environ.get("FRONTLAB_WORKERS", "1"))


def _map_members(fn, items, n_workers):
    """Deterministic map: results in submission order regardless of workers.

    Workers are spawned (not forked): compiled kernels are not fork-safe once
    a parallel region has executed in the parent.
    """
    if n_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    import multiprocessing

    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=n_workers, mp_context=ctx) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# command handlers (each returns columns, rows, summary, ok)
# ---------------------------------------------------------------------------

def _build_flow(name, n, amp=1.0):
    from .flows import flow_from_name, scale
    flow = flow_from_name(name, n)
    return scale(flow, amp) if amp != 1.0 else flow


def _cmd_cell_problem(cfg):
    from . import cell_problem as cp
    from .grids import TorusGrid
    flow = _build_flow(cfg["flow"], cfg["n"], cfg["amp"])
    sol = cp.solve_cell_problem(flow, cfg["e"], TorusGrid(flow.dim, cfg["n"]),
                                tol=cfg["tol"])
    rows = [{"A": cfg["amp"], "n": cfg["n"], "d_eff": sol.d_eff,
             "residual": sol.residual_norm, "iterations": sol.iterations}]
    return (["A", "n", "d_eff", "residual", "iterations"], rows,
            {"d_eff": sol.d_eff}, True)


def _cmd_diffusivity_sweep(cfg):
    from . import cell_problem as cp
    flow = _build_flow(cfg["flow"], 64)
    res = cp.diffusivity_amplitude_sweep(flow, cfg["e"], cfg["amps"],
                                         tol=cfg["tol"], n_max=cfg["n-max"])
    rows = [{"A": a, "n": n, "d_eff": d, "residual": r, "iterations": it}
            for a, n, d, r, it in zip(res.amplitudes, res.grid_sizes,
                                      res.d_effs, res.residuals, res.iterations)]
    return (["A", "n", "d_eff", "residual", "iterations"], rows,
            {"exponent": res.exponent}, True)


def _cmd_front_speed(cfg):
    from . import front_speed as fs
    from .reactions import reaction_from_name
    flow = None if cfg["flow"] == "zero" else _build_flow(cfg["flow"], 64, cfg["amp"])
    reaction = reaction_from_name(cfg["reaction"])
    e = (1.0, 0.0) if cfg["e"] in ("x1", "1,0") else (0.0, 1.0)
    run_cfg = fs.FrontRunConfig(
        n_cross=cfg["n-cross"],
        snapshots_per_cell=12 if cfg["integrals"] else 0,
        t_end=cfg["t-end"] or None)
    est = fs.estimate_front_speed(flow, reaction, e=e, cfg=run_cfg,
                                  keep_result=True)
    ri = di = float("nan")
    if cfg["integrals"]:
        ri, di = fs.front_integral_checks(est.run, reaction, est.speed)
    rows = [{"A": cfg["amp"], "n": cfg["n-cross"], "dt": est.resolution[2],
             "speed": est.speed, "r2": est.fit_rsquared,
             "reaction_integral": ri, "dissipation_integral": di}]
    cols = ["A", "n", "dt", "speed", "r2", "reaction_integral",
            "dissipation_integral"]
    return cols, rows, {"speed": est.speed, "accepted": est.accepted}, est.accepted


def _sweep_member(args):
    name, amp, reaction_spec, n_cross = args
    from . import front_speed as fs
    from .reactions import reaction_from_name
    flow = _build_flow(name, 64, amp)
    reaction = reaction_from_name(reaction_spec)
    cfg = fs.FrontRunConfig(n_cross=n_cross, snapshots_per_cell=12)
    est = fs.estimate_front_speed(flow, reaction, cfg=cfg, keep_result=True)
    est.require_accepted()
    ri, di = fs.front_integral_checks(est.run, reaction, est.speed)
    return {"A": amp, "n": n_cross, "dt": est.resolution[2], "speed": est.speed,
            "r2": est.fit_rsquared, "reaction_integral": ri,
            "dissipation_integral": di}


def _cmd_scaling_sweep(cfg):
    from . import cell_problem as cp
    amps = cfg["amps"]
    members = [(cfg["flow"], a, cfg["reaction"], cfg["n-cross"]) for a in amps]
    rows = _map_members(_sweep_member, members, _workers(cfg))
    speeds = [r["speed"] for r in rows]
    exponent = cp._fit_upper_half(amps, speeds) if len(amps) > 1 else None
    cols = ["A", "n", "dt", "speed", "r2", "reaction_integral",
            "dissipation_integral"]
    return cols, rows, {"exponent": exponent, "speeds": speeds}, True


def _battery_member(args):
    label, name, amp, reaction_spec, n_cross, integrals = args
    from . import cell_problem as cp, front_speed as fs
    from .grids import TorusGrid
    from .reactions import reaction_from_name
    reaction = reaction_from_name(reaction_spec)
    if name == "zero" or amp == 0.0:
        flow, d_eff = None, 1.0
    else:
        flow = _build_flow(name, 64, amp)
        n = min(cp.minimum_resolution(flow), 512)
        d_eff = cp.solve_cell_problem(flow, [1, 0], TorusGrid(2, n), tol=1e-8).d_eff
    cfg = fs.FrontRunConfig(n_cross=n_cross,
                            snapshots_per_cell=12 if integrals else 0)
    est = fs.estimate_front_speed(flow, reaction, cfg=cfg, d_eff=d_eff,
                                  keep_result=True)
    est.require_accepted()
    ri = di = float("nan")
    if integrals:
        ri, di = fs.front_integral_checks(est.run, reaction, est.speed)
    return {"label": label, "A": amp, "speed": est.speed, "d_eff": d_eff,
            "ratio": est.speed / math.sqrt(d_eff), "reaction_integral": ri,
            "dissipation_integral": di}


def parse_battery(text):
    members = []
    for tok in text.split(";"):
        tok = tok.strip()
        if not tok:
            continue
        if "@" in tok:
            name, amp = tok.rsplit("@", 1)
            members.append((tok, name, float(amp)))
        else:
            members.append((tok, tok, 0.0 if tok == "zero" else 1.0))
    return members


def _cmd_ratio_battery(cfg):
    members = parse_battery(cfg["battery"])
    args = [(label, name, amp, cfg["reaction"], cfg["n-cross"], cfg["integrals"])
            for label, name, amp in members]
    rows = _map_members(_battery_member, args, _workers(cfg))
    ratios = [r["ratio"] for r in rows]
    summary = {"min_ratio": min(ratios), "max_ratio": max(ratios),
               "spread": max(ratios) / min(ratios)}
    cols = ["label", "A", "speed", "d_eff", "ratio", "reaction_integral",
            "dissipation_integral"]
    return cols, rows, summary, True


def _cmd_mc_diffusivity(cfg):
    from . import sde
    flow = None if cfg["flow"] == "zero" else _build_flow(cfg["flow"], 64, cfg["amp"])
    dt = sde.gated_dt(flow, dt_max=cfg["dt-max"])
    ens = sde.simulate_paths(flow, "uniform", cfg["t"], dt, cfg["paths"],
                             cfg["seed"])
    est = sde.mc_diffusivity(ens, cfg["e"])
    rows = [{"flow": cfg["flow"], "A": cfg["amp"], "t": est.t_end,
             "paths": cfg["paths"], "seed": cfg["seed"], "dt": dt,
             "estimate": est.value, "std_error": est.std_error}]
    cols = ["flow", "A", "t", "paths", "seed", "dt", "estimate", "std_error"]
    return cols, rows, {"estimate": est.value, "std_error": est.std_error}, True


def _cmd_fk_check(cfg):
    import numpy as np
    from . import sde
    flow = None if cfg["flow"] == "zero" else _build_flow(cfg["flow"], cfg["n"], cfg["amp"])

    def psi0(x, y):
        return np.sin(2 * np.pi * x) ** 2 + 0.25

    rep = sde.feynman_kac_check(flow, psi0, cfg["t"], cfg["paths"], cfg["seed"],
                                grid_n=cfg["n"])
    rows = [{"x": p[0], "y": p[1], "mc": mv, "se": se, "pde": pv,
             "ok": int(abs(mv - pv) <= 3 * se + rep.slack)}
            for p, mv, se, pv in zip(rep.probes, rep.mc_values, rep.mc_errors,
                                     rep.pde_values)]
    return (["x", "y", "mc", "se", "pde", "ok"], rows,
            {"passed": rep.passed}, rep.passed)


def _spread_member(args):
    name, amp, tau, alpha, paths, probes, seed = args
    from . import sde
    flow = None if name == "zero" else _build_flow(name, 64, amp)
    res = sde.short_time_spread(flow, [1, 0], tau, alpha, probe_grid=probes,
                                n_paths=paths, seed=seed)
    return {"A": amp, "tau": tau, "alpha": alpha,
            "probability": res.probability, "threshold": res.threshold,
            "best_x": res.best_x[0], "best_y": res.best_x[1],
            "best_t": res.best_t}


def _cmd_spread(cfg):
    args = [(cfg["flow"], a, cfg["tau"], cfg["alpha"], cfg["paths"],
             cfg["probes"], cfg["seed"]) for a in cfg["amps"]]
    rows = _map_members(_spread_member, args, _workers(cfg))
    cols = ["A", "tau", "alpha", "probability", "threshold", "best_x",
            "best_y", "best_t"]
    return cols, rows, {"min_probability": min(r["probability"] for r in rows)}, True


def _quench_member(args):
    name, theta, L, amps, horizon, n_cross = args
    from . import quenching
    from .reactions import smoothed_ignition
    base = smoothed_ignition(theta, m=1.0)
    m = 0.999 * quenching.default_gamma_gate(theta) / base.sup_f_over_s
    reaction = smoothed_ignition(theta, m=m)
    flow = _build_flow(name, 64)
    res = quenching.quench_threshold(flow, reaction, L, amps, horizon=horizon,
                                     n_cross=n_cross)
    return res


def _cmd_quench_sweep(cfg):
    from . import quenching
    args = [(cfg["flow"], cfg["theta"], L, cfg["amps"], cfg["horizon"],
             cfg["n-cross"]) for L in cfg["Ls"]]
    results = _map_members(_quench_member, args, _workers(cfg))
    rows = []
    for res in results:
        for (a, verdict), out in zip(res.ladder, res.outcomes):
            rows.append({"L": res.L, "A": a, "verdict": verdict,
                         "decision_time": out.decision_time})
    summary = {"A_star": {str(r.L): r.A_star for r in results},
               "open_ended": [r.L for r in results if r.open_ended]}
    ok = not any(r.open_ended for r in results)
    if len([r for r in results if np.isfinite(r.A_star) and r.A_star > 0]) >= 4:
        fit = quenching.quench_scaling_fit(results)
        summary["exponent"] = fit.exponent
        summary["constant"] = fit.constant
    return ["L", "A", "verdict", "decision_time"], rows, summary, ok


def _cmd_counterexample3d(cfg):
    from . import variational as va
    rep = va.counterexample_report(sorted(cfg["Rs"], reverse=True),
                                   cfg["fprime0"], n=cfg["n"], seed=cfg["seed"])
    rows = [{"R": r.R, "value_51": r.value_51, "value_52": r.value_52,
             "value_53": r.value_53, "ratio_51_53": r.value_51 / r.value_53,
             "ratio_51_53sq": r.value_51 / r.value_53 ** 2,
             "gap_51": r.gap_51, "gap_52": r.gap_52}
            for r in rep.results]
    summary = {
        "backward_bounded": rep.backward_bounded,
        "value_53_increasing": rep.value_53_increasing,
        "ratio_51_to_53_increasing": rep.ratio_51_to_53_increasing,
        "log_fit_slope": rep.log_fit_slope, "log_fit_r2": rep.log_fit_r2,
        "min_ratio_51_to_53sq": rep.min_ratio_51_to_53sq,
    }
    ok = rep.backward_bounded and rep.value_53_increasing
    cols = ["R", "value_51", "value_52", "value_53", "ratio_51_53",
            "ratio_51_53sq", "gap_51", "gap_52"]
    return cols, rows, summary, ok


def _cmd_selftest(cfg):
    import numpy as np
    from . import cell_problem as cp, flows, sde
    from .grids import (ScalarField, TorusGrid, gradient, integrate,
                        inverse_laplacian)
    checks = []
    g = TorusGrid(2, 32)
    x, y = g.meshgrid()
    f = ScalarField(g, np.sin(2 * np.pi * x))
    err = float(np.max(np.abs(gradient(f)[0].values - 2 * np.pi * np.cos(2 * np.pi * x))))
    checks.append(("spectral gradient exact", err < 1e-12))
    w = inverse_laplacian(ScalarField(g, np.sin(2 * np.pi * y)))
    err = float(np.max(np.abs(w.values - np.sin(2 * np.pi * y) / (4 * np.pi ** 2))))
    checks.append(("inverse laplacian single mode", err < 1e-12))
    checks.append(("integrate sin^2 = 1/2",
                   abs(integrate(ScalarField(g, np.sin(2 * np.pi * x) ** 2)) - 0.5) < 1e-12))
    u = flows.make_cellular(g)
    checks.append(("cellular flow validates", flows.validate(u).passes))
    sh = flows.flow_from_name("shear:sin", 32)
    sol = cp.solve_cell_problem(flows.scale(sh, 4.0), [1, 0], tol=1e-10)
    checks.append(("shear d_eff analytic",
                   abs(sol.d_eff - (1 + 16 / (8 * np.pi ** 2))) < 1e-9))
    e1 = sde.simulate_paths(None, (0.0, 0.0), 0.5, 0.01, 64, seed=1)
    e2 = sde.simulate_paths(None, (0.0, 0.0), 0.5, 0.01, 64, seed=1)
    checks.append(("sde determinism", bool(np.array_equal(e1.endpoints, e2.endpoints))))
    rows = [{"check": name, "passed": int(okk)} for name, okk in checks]
    ok = all(okk for _, okk in checks)
    return ["check", "passed"], rows, {"passed": ok}, ok


_HANDLERS = {
    "cell-problem": _cmd_cell_problem,
    "diffusivity-sweep": _cmd_diffusivity_sweep,
    "front-speed": _cmd_front_speed,
    "scaling-sweep": _cmd_scaling_sweep,
    "ratio-battery": _cmd_ratio_battery,
    "mc-diffusivity": _cmd_mc_diffusivity,
    "fk-check": _cmd_fk_check,
    "spread": _cmd_spread,
    "quench-sweep": _cmd_quench_sweep,
    "counterexample3d": _cmd_counterexample3d,
    "selftest": _cmd_selftest,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="frontlab",
        description="Front propagation and mixing experiments in periodic flows")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")
    for command, schema in SCHEMAS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", type=str, default=None)
        for key, (typ, default) in schema.items():
            if typ in (int, float, str, _positive_int):
                p.add_argument(f"--{key}", type=typ, default=None)
            elif typ is _float_list:
                p.add_argument(f"--{key}", type=_float_list, default=None)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    flag_values = {k.replace("_", "-"): v for k, v in vars(args).items()
                   if k not in ("command", "config")}
    # argparse mangles dashes; map back to schema keys
    schema = SCHEMAS[args.command]
    flag_values = {k: v for k, v in flag_values.items() if k in schema}
    try:
        file_values = parse_config_file(args.config, args.command) if args.config else {}
    except (ConfigFileError, OSError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = resolve_config(args.command, file_values, flag_values)
    except (TypeError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(cfg.get("out") or Path("runs") / args.command)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    try:
        columns, rows, summary, ok = _HANDLERS[args.command](cfg)
    except (ConfigFileError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        _failure_record(out_dir, args.command, str(err))
        return EXIT_CONFIG
    except Exception as err:
        print(f"run failed: {err}", file=sys.stderr)
        _failure_record(out_dir, args.command, str(err))
        return EXIT_FAILURE
    wall = time.time() - t0
    csv_path = out_dir / "results.csv"
    write_csv(csv_path, columns, rows)
    write_manifest(out_dir / "manifest.json", args.command, cfg, summary, wall, ok)
    print(f"wrote {csv_path} ({len(rows)} rows) in {wall:.1f}s; "
          f"{'ok' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
