"""Command line runner for the benchmark experiments.

    hdlearn run <config.json>
    hdlearn list
    hdlearn plotdata <kind> <files...> [--out PATH]

A config is a JSON object ``{"kind": ..., "seeds": [...], "params": {...}}``
with an optional ``"output_dir"``.  Outputs land under ``$HDLEARN_OUTPUT``
(default ``./runs``).  Every seed writes its own CSVs plus a manifest;
timings live only in the manifest, so rerunning a config reproduces the
CSVs byte for byte.

Exit codes: 0 success, 2 invalid config, 3 the run diverged (partial
outputs are kept).
"""

import argparse
import datetime as _dt
import hashlib
import json
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .records import read_csv, write_csv

OUTPUT_ENV = "HDLEARN_OUTPUT"


class ConfigError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class Diverged(RuntimeError):
    pass


# -- registry ------------------------------------------------------------------

@dataclass
class Kind:
    name: str
    description: str
    anchor: str
    required: dict                      # field -> expected type(s)
    defaults: dict = field(default_factory=dict)
    runner: object = None


REGISTRY = {}


def register(name, description, anchor, required, defaults=None):
    def wrap(fn):
        REGISTRY[name] = Kind(name, description, anchor, required, defaults or {}, fn)
        return fn
    return wrap


_NUM = (int, float)


def _check_type(name, value, kind):
    if kind == "int_list":
        ok = isinstance(value, list) and value and all(isinstance(v, int) and not isinstance(v, bool)
                                                       for v in value)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind == _NUM:
        ok = isinstance(value, _NUM) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        expected = {"int_list": "non-empty list of integers", int: "integer", _NUM: "number",
                    str: "string", bool: "boolean"}.get(kind, str(kind))
        raise ConfigError(name, f"expected {expected}, got {value!r}")


def validate(config):
    """Check a parsed config; returns it with defaults filled into ``params``."""
    if not isinstance(config, dict):
        raise ConfigError("config", "top level must be a JSON object")
    if "kind" not in config:
        raise ConfigError("kind", "missing required field")
    kind = config["kind"]
    if kind not in REGISTRY:
        raise ConfigError("kind", f"unknown kind {kind!r}; known: {', '.join(sorted(REGISTRY))}")
    if "seeds" not in config:
        raise ConfigError("seeds", "missing required field")
    _check_type("seeds", config["seeds"], "int_list")
    params = config.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params", "must be a JSON object")
    entry = REGISTRY[kind]
    for name, typ in entry.required.items():
        if name not in params:
            raise ConfigError(f"params.{name}", "missing required field")
        _check_type(f"params.{name}", params[name], typ)
    unknown = set(params) - set(entry.required) - set(entry.defaults)
    if unknown:
        raise ConfigError(f"params.{sorted(unknown)[0]}", f"not a parameter of kind {kind!r}")
    full = dict(config)
    full["params"] = {**entry.defaults, **params}
    return full


def config_hash(config):
    """SHA-256 over the semantic fields, independent of key order."""
    semantic = {k: config[k] for k in ("kind", "seeds", "params") if k in config}
    blob = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# -- runners -------------------------------------------------------------------
# Each runner returns (tables, diverged_message) where tables maps an output
# stem to (columns, rows).

def _record_table(rec, drop=("seconds",)):
    cols = [c for c in rec.columns if c not in drop]
    return cols, rec.rows


@register("deep_bsde", "Deep BSDE on the LQG/HJB, default-risk or heat problem",
          "stochastic control and PDEs: the BSDE reformulation", {"problem": str, "d": int},
          {"lam": 1.0, "N": 20, "batch": 64, "iters": 2000, "lr": 1e-2, "schedule": [],
           "hidden": None, "activation": "relu", "y0_start": "terminal_mean", "oracle_samples": 10**6,
           "log_every": 50, "delta": 2.0 / 3.0, "R": 0.02})
def run_deep_bsde(p, seed):
    from . import bsde
    d = p["d"]
    if p["problem"] == "hjb_lqg":
        problem = bsde.hjb_lqg_problem(d, p["lam"])
        oracle = bsde.hopf_cole_reference(d, p["lam"], bsde.lqg_terminal, mc_samples=p["oracle_samples"],
                                          seed=seed)
        exact = bsde.hopf_cole_radial(d, p["lam"], bsde.lqg_terminal_r2)
    elif p["problem"] == "default_risk":
        problem = bsde.black_scholes_default_problem(d, delta=p["delta"], R=p["R"])
        oracle, exact = (float("nan"), float("nan")), float("nan")
    elif p["problem"] == "heat":
        problem = bsde.heat_problem(d, bsde.lqg_terminal)
        oracle = bsde.heat_reference(d, bsde.lqg_terminal, mc_samples=p["oracle_samples"], seed=seed)
        exact = float("nan")
    else:
        raise ConfigError("params.problem", f"unknown problem {p['problem']!r}")
    cfg = bsde.BsdeTrainConfig(batch=p["batch"], iters=p["iters"], lr=p["lr"],
                               schedule=[tuple(s) for s in p["schedule"]], seed=seed,
                               log_every=p["log_every"])
    kw = {"activation": p["activation"]}
    if p["hidden"] is not None:
        kw["hidden"] = p["hidden"]
    solver, rec = bsde.solve(problem, N=p["N"], config=cfg, y0_start=p["y0_start"], **kw)
    rel = (solver.y0 - oracle[0]) / oracle[0] if np.isfinite(oracle[0]) else float("nan")
    summary = {"problem": p["problem"], "d": d, "lam": p["lam"], "seed": seed, "y0": solver.y0,
               "oracle": oracle[0], "oracle_se": oracle[1], "exact": exact, "rel_err": rel}
    tables = {"record": _record_table(rec), "summary": (list(summary), [summary])}
    return tables, rec.aborted


@register("policy_control", "Per-step policy networks on an LQ benchmark, scored against Riccati",
          "stochastic control: policy networks per time step", {"state_dim": int, "horizon": int},
          {"batch": 256, "iters": 1000, "lr": 1e-2, "schedule": [], "hidden": [32, 32],
           "eval_samples": 10**5, "problem_seed": 0})
def run_policy_control(p, seed):
    from . import control
    spec = control.lq_benchmark(p["state_dim"], p["horizon"], seed=p["problem_seed"])
    problem = spec.problem()
    opt = control.riccati_lq_reference(spec)
    cfg = control.PolicyTrainConfig(batch=p["batch"], iters=p["iters"], lr=p["lr"],
                                    schedule=[tuple(s) for s in p["schedule"]],
                                    hidden=tuple(p["hidden"]), seed=seed)
    stack, rec = control.train_policies(problem, cfg, oracle=opt)
    cost, se = control.evaluate_cost(problem, stack, B=p["eval_samples"], seed=seed)
    summary = {"state_dim": p["state_dim"], "horizon": p["horizon"], "seed": seed, "cost": cost,
               "cost_se": se, "riccati": opt, "ratio": cost / opt}
    return {"record": _record_table(rec), "summary": (list(summary), [summary])}, rec.aborted


@register("heatmap", "Scaled against unscaled two-layer nets on a single-neuron target",
          "mean-field training: scaled versus unscaled models", {"m_grid": "int_list", "n_grid": "int_list"},
          {"d": 5, "steps": 1000, "lr": 5e-3, "optimizer": "adam"})
def run_heatmap(p, seed):
    from . import meanfield as mf
    cfg = mf.HeatmapConfig(d=p["d"], steps=p["steps"], optimizer=p["optimizer"], lr=p["lr"])
    rows = []
    for scaled in (True, False):
        rows += list(mf.heatmap_experiment(p["m_grid"], p["n_grid"], scaled, (seed,), cfg).rows())
    bad = [r for r in rows if not np.isfinite(r["test_error"])]
    msg = f"{len(bad)} cells diverged" if bad else None
    return {"heatmap": (["m", "n", "scaled", "seed", "test_error"], rows)}, msg


_TARGETS = {"relu_gaussian": "relu_gaussian_target", "relu_stein": "relu_stein_target",
            "gaussian_cos": "gaussian_cos_target"}


@register("rate_study", "Monte Carlo approximation rate of sampled two-layer nets for a Barron target",
          "approximation theory: the direct approximation theorem", {"target": str, "d": int},
          {"m_ladder": [2**k for k in range(4, 13)], "trials": 16})
def run_rate_study(p, seed):
    from . import meanfield as mf
    if p["target"] not in _TARGETS:
        raise ConfigError("params.target", f"unknown target {p['target']!r}; known: {', '.join(_TARGETS)}")
    target = getattr(mf, _TARGETS[p["target"]])(p["d"])
    st = mf.barron_rate_study(target, p["m_ladder"], trials=p["trials"], seed=seed)
    rows = [{"m": int(m), "mean_error": e, "std_error": s, "seed": seed}
            for m, e, s in zip(st.m, st.mean_error, st.std_error)]
    return {"rate": (["m", "mean_error", "std_error", "seed"], rows)}, None


@register("rademacher", "Empirical Rademacher complexity of the Barron ball against its bound",
          "generalization: Rademacher complexity of the Barron ball", {"d": int, "n": int, "Q": _NUM},
          {"trials": 200})
def run_rademacher(p, seed):
    from . import meanfield as mf
    from . import rng as rngmod
    X = rngmod.stream(seed, "rademacher-data").random((p["n"], p["d"]))
    est, rep = mf.rademacher_estimate(mf.BarronBall(float(p["Q"])), X, trials=p["trials"], seed=seed)
    row = {"d": p["d"], "n": p["n"], "Q": float(p["Q"]), "seed": seed, "estimate": est,
           "bound": mf.rademacher_bound(float(p["Q"]), p["d"], p["n"])}
    return {"rademacher": (list(row), [row])}, None


@register("mc_rate", "Monte Carlo integration error of g(x) = x on the unit interval",
          "approximation theory: Monte Carlo variance identity", {"m_ladder": "int_list"},
          {"replications": 10**4})
def run_mc_rate(p, seed):
    from . import meanfield as mf
    st = mf.mc_rate_study(lambda x: x[:, 0], mf.unit_cube(1), 0.5, p["m_ladder"], p["replications"], seed)
    rows = [{"m": int(m), "mean_error": e, "std_error": s, "seed": seed}
            for m, e, s in zip(st.m, st.mean_error, st.std_error)]
    return {"rate": (["m", "mean_error", "std_error", "seed"], rows)}, None


@register("runge", "Equispaced polynomial interpolation of the Runge function",
          "approximation theory: the Runge phenomenon", {"degrees": "int_list"})
def run_runge(p, seed):
    from . import meanfield as mf
    err = mf.runge_demo(tuple(p["degrees"]))
    rows = [{"degree": k, "max_error": err[k]} for k in p["degrees"]]
    return {"runge": (["degree", "max_error"], rows)}, None


@register("msa_compare", "Extended MSA against plain SGD on a small scaled ResNet",
          "control view of ResNets: method of successive approximations", {"budget": int},
          {"d": 5, "L": 4, "M": 8, "n": 256, "lam": 10.0, "inner_steps": 10, "sgd_lrs": [1, 3, 10, 20, 30]})
def run_msa_compare(p, seed):
    from . import pmp
    cfg = pmp.MsaConfig(lam=p["lam"], inner="lbfgs", inner_steps=p["inner_steps"], adapt=True, seed=seed)
    mrec, srec, s = pmp.compare_msa_sgd(p["d"], p["L"], p["M"], p["n"], p["budget"], cfg,
                                        tuple(float(v) for v in p["sgd_lrs"]), seed=seed)
    s = {k: (-1 if v is None else v) for k, v in s.items()}
    s["seed"] = seed
    tables = {"msa": _record_table(mrec), "sgd": _record_table(srec), "summary": (list(s), [s])}
    return tables, mrec.aborted


@register("regularized", "Path-norm regularized two-layer net on a single-neuron target",
          "generalization: the path-norm regularized estimator", {"d": int, "n": int, "m": int, "lam": _NUM},
          {"steps": 800, "lr": 0.01, "optimizer": "adam"})
def run_regularized(p, seed):
    from . import meanfield as mf
    target = mf.single_neuron_target(1.0, np.eye(p["d"])[0])
    data = mf.make_dataset(target, p["d"], p["n"], seed=seed)
    cfg = mf.FitConfig(steps=p["steps"], optimizer=p["optimizer"], lr=p["lr"])
    _, rep = mf.regularized_train(data, p["m"], float(p["lam"]), cfg, seed=seed)
    row = {"d": p["d"], "n": p["n"], "m": p["m"], "lam": float(p["lam"]), "seed": seed,
           "empirical_risk": rep["empirical_risk"], "path_norm": rep["path_norm"], "test_risk": rep["test_risk"]}
    return {"summary": (list(row), [row])}, "training diverged" if rep["diverged"] else None


# -- run -------------------------------------------------------------------------

def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def output_dir(config, chash):
    root = Path(os.environ.get(OUTPUT_ENV, "runs"))
    return root / config.get("output_dir", f"{config['kind']}-{chash[:12]}")


def run_config(config):
    """Validate and execute; returns (exit_code, list of written paths)."""
    config = validate(config)
    chash = config_hash(config)
    out = output_dir(config, chash)
    out.mkdir(parents=True, exist_ok=True)
    entry = REGISTRY[config["kind"]]
    written, code = [], 0
    for seed in config["seeds"]:
        started = _now()
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            tables, diverged = entry.runner(config["params"], seed)
        files = []
        for stem, (cols, rows) in tables.items():
            path = out / f"{config['kind']}_{stem}_seed{seed}.csv"
            write_csv(path, cols, rows)
            files.append(path.name)
        manifest = {
            "config_hash": chash, "kind": config["kind"], "seed": seed, "config": config,
            "versions": {"hdlearn": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "started": started, "finished": _now(), "outputs": files, "diverged": diverged,
        }
        mpath = out / f"manifest_seed{seed}.json"
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        written += [out / f for f in files] + [mpath]
        if diverged:
            code = 3
    return code, written


# -- plot data -----------------------------------------------------------------

def _floats(rows, *names):
    try:
        return [np.array([float(r[n]) for r in rows]) for n in names]
    except KeyError as exc:
        raise ConfigError(str(exc.args[0]), "column missing from input") from None


def plot_lambda_sweep(files):
    rows = [r for f in files for r in read_csv(f)]
    lam, y0, oracle = _floats(rows, "lam", "y0", "oracle")
    order = np.argsort(lam, kind="stable")
    out = [{"lam": lam[i], "y0": y0[i], "oracle": oracle[i], "rel_err": (y0[i] - oracle[i]) / oracle[i]}
           for i in order]
    return ["lam", "y0", "oracle", "rel_err"], out


def plot_heatmap(files):
    rows = [r for f in files for r in read_csv(f)]
    m, n, scaled, err = _floats(rows, "m", "n", "scaled", "test_error")
    cells = sorted(set(zip(scaled, m, n)))
    out = []
    for s, mm, nn in cells:
        sel = (scaled == s) & (m == mm) & (n == nn)
        out.append({"m": int(mm), "n": int(nn), "scaled": int(s), "error": float(np.median(err[sel]))})
    return ["m", "n", "scaled", "error"], out


def plot_rate(files):
    from .meanfield import fit_slope
    rows = [r for f in files for r in read_csv(f)]
    m, e = _floats(rows, "m", "mean_error")
    ms = np.unique(m)
    mean = np.array([e[m == v].mean() for v in ms])
    slope = fit_slope(ms, mean)
    icpt = float(np.mean(np.log(mean)) - slope * np.mean(np.log(ms)))
    out = [{"m": int(v), "mean_error": err, "fitted": float(np.exp(icpt) * v**slope), "slope": slope}
           for v, err in zip(ms, mean)]
    return ["m", "mean_error", "fitted", "slope"], out


PLOTTERS = {"lambda_sweep": plot_lambda_sweep, "heatmap": plot_heatmap, "rate": plot_rate}


# -- entry point -----------------------------------------------------------------

def list_experiments():
    return [f"{k.name}\t{k.description} [{k.anchor}]" for k in sorted(REGISTRY.values(), key=lambda k: k.name)]


def main(argv=None):
    parser = argparse.ArgumentParser(prog="hdlearn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    sub.add_parser("list", help="list experiment kinds")
    p_plot = sub.add_parser("plotdata", help="tidy CSVs for plotting")
    p_plot.add_argument("kind", choices=sorted(PLOTTERS))
    p_plot.add_argument("files", nargs="+")
    p_plot.add_argument("--out", default=None, help="output path (default: stdout)")
    args = parser.parse_args(argv)

    if args.command == "list":
        print("\n".join(list_experiments()))
        return 0
    if args.command == "plotdata":
        try:
            cols, rows = PLOTTERS[args.kind](args.files)
        except (ConfigError, ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        if args.out:
            write_csv(args.out, cols, rows)
        else:
            import io
            sys.stdout.write(write_csv(io.StringIO(), cols, rows))
        return 0
    try:
        with open(args.config, encoding="utf-8") as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    try:
        code, written = run_config(config)
    except ConfigError as exc:
        print(f"error: invalid config field {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
    if code == 3:
        print("error: run diverged; partial outputs kept", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
