"""Command-line front end.

Every subcommand writes its artifact plus ``<out>.manifest.json`` holding the
resolved configuration, its hash, the master seed, package versions and the
SHA-256 of each output.  ``driftwalk replay <manifest>`` re-runs a manifest
and checks the outputs byte for byte.

Settings resolve as: built-in defaults, then the matching section of an INI
file given with ``--config``, then explicit flags.  The worker count comes from
``--workers`` or ``DRIFTWALK_WORKERS`` and is deliberately left out of the
manifest because it never changes results.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import os
import sys
import warnings
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .corrector import CorrectorEstimator, kv_diagnostics, lambda_grid
from .exceptions import ConfigError, DriftwalkError, ParseError, SchemaMismatch, SolverDivergence
from .generators import GeneratorSpec, generate
from .io import load_environment, load_generator_block, save_environment
from .lattice import LatticeDims, StreamTensorField, curl
from .spectral import HminusEstimator
from .stats import DiffusivityEstimator, bound_margins, heat_kernel, isoperimetry
from .walker import WalkConfig, simulate_ctmc, simulate_lazy

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3
RUNTIME_ERRORS = (SolverDivergence, OSError)


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    return None if s in (None, "", "none", "None") else float(s)


def _opt_str(s):
    return None if s in (None, "", "none", "None") else str(s)


def _opt_int(s):
    return None if s in (None, "", "none", "None") else int(s)


# name -> (converter, default, help).  Names mirror the flags with "_" for "-".
SCHEMAS = {
    "generate": {
        "kind": (str, "plaquette_iid", "plaquette_iid | manhattan | height_field"),
        "d": (int, 2, "dimension"),
        "L": (int, 16, "torus side length"),
        "seed": (int, 0, "master seed"),
        "amplitude": (_opt_float, None, "plaquette amplitude (default: largest dyadic below 1/(2d))"),
        "balanced": (_bool, True, "Manhattan: exact half/half orientations per axis"),
        "continuous": (_bool, False, "plaquette: uniform instead of +-amplitude"),
        "stream": (_bool, False, "save the stream tensor instead of the drift"),
        "out": (str, "env.json", "output path"),
    },
    "simulate": {
        "env": (str, "env.json", "environment file"),
        "T": (_opt_float, None, "continuous-time horizon"),
        "n": (_opt_int, None, "lazy-walk step count (instead of T)"),
        "samples": (int, 10000, "number of trajectories"),
        "seed": (int, 0, "master seed"),
        "record": (str, "endpoint", "endpoint | decomposition"),
        "start": (str, "random", "random | origin"),
        "annealed": (_bool, False, "fresh environment per trajectory from the file's generator block"),
        "out": (str, "endpoints.csv", "output CSV"),
    },
    "hminus": {
        "env": (str, "env.json", "environment file"),
        "ensemble": (int, 1, "number of environments (regenerated from the generator block)"),
        "seed": (int, 0, "ensemble master seed"),
        "out": (str, "report.json", "output JSON"),
    },
    "corrector": {
        "env": (str, "env.json", "environment file"),
        "ctilde": (_opt_str, None, "hminus report for the bound check"),
        "out": (str, "corrector.json", "output JSON"),
    },
    "kvdiag": {
        "env": (str, "env.json", "environment file"),
        "lambda_grid": (str, "1e-1:1e-8", "decades hi:lo"),
        "out": (str, "kv.csv", "output CSV"),
    },
    "analyze": {
        "endpoints": (str, "endpoints.csv", "endpoint CSV from simulate"),
        "env": (_opt_str, None, "environment file (dimension check)"),
        "ctilde": (_opt_str, None, "hminus report"),
        "T": (_opt_float, None, "horizon (default: from the endpoints manifest)"),
        "out": (str, "diff.json", "output JSON"),
    },
    "heatkernel": {
        "env": (str, "env.json", "environment file"),
        "nmax": (int, 100, "largest step count"),
        "out": (str, "hk.csv", "output (.csv rows or .json report)"),
    },
    "isoperimetry": {
        "env": (str, "env.json", "environment file"),
        "sets": (int, 100, "number of random site sets"),
        "density": (float, 0.3, "inclusion probability of each site"),
        "seed": (int, 0, "seed for the random sets"),
        "out": (str, "iso.json", "output JSON"),
    },
    "plotdata": {
        "report": (str, "report.json", "report JSON from analyze, heatkernel or hminus"),
        "kind": (_opt_str, None, "report kind when the file does not state it"),
        "svg": (_opt_str, None, "optional SVG line plot (needs matplotlib)"),
        "out": (str, "plot.csv", "output CSV"),
    },
}

PIPELINE_STAGES = ("generate", "hminus", "corrector", "simulate", "analyze")


# ------------------------------------------------------------------ config

def read_ini(path):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}",
                          key=getattr(exc, "section", None) or getattr(exc, "option", None)) from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", key="config") from exc
    return {s: dict(parser[s]) for s in parser.sections()}


def resolve(command, file_values=None, flags=None):
    """Merge defaults, config-file values and flags for ``command``."""
    schema = SCHEMAS[command]
    out = {k: v[1] for k, v in schema.items()}
    for source in (file_values or {}, {k: v for k, v in (flags or {}).items() if v is not None}):
        for key, raw in source.items():
            if key not in schema:
                raise ConfigError(f"unknown setting {command}.{key}", key=f"{command}.{key}")
            try:
                out[key] = schema[key][0](raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {command}.{key}: {raw!r} ({exc})",
                                  key=f"{command}.{key}") from exc
    return out


def config_hash(command, cfg):
    blob = json.dumps({"command": command, "config": cfg}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def default_workers():
    raw = os.environ.get("DRIFTWALK_WORKERS", "1")
    try:
        w = int(raw)
    except ValueError as exc:
        raise ConfigError(f"DRIFTWALK_WORKERS must be an integer, got {raw!r}",
                          key="DRIFTWALK_WORKERS") from exc
    return max(1, w)


def _versions():
    import numba
    import scipy
    return {"driftwalk": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__}


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest_path(out):
    return Path(str(out) + ".manifest.json")


def write_manifest(command, cfg, outputs):
    doc = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(command, cfg),
        "seed": cfg.get("seed"),
        "versions": _versions(),
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    path = manifest_path(cfg["out"])
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _num(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_num(x) for x in r])
    Path(path).write_text(buf.getvalue())


def _load_drift(path):
    env = load_environment(path)
    return curl(env) if isinstance(env, StreamTensorField) else env


# ------------------------------------------------------------------ commands

def cmd_generate(cfg, workers):
    spec = GeneratorSpec(cfg["kind"], LatticeDims(cfg["d"], cfg["L"]), cfg["seed"],
                         cfg["amplitude"], cfg["balanced"], cfg["continuous"])
    tensor, drift = generate(spec)
    obj = tensor if cfg["stream"] and tensor is not None else drift
    save_environment(obj, cfg["out"], generator=spec.to_dict())
    return [cfg["out"]], {"d": spec.dims.d, "L": spec.dims.L, "kind": spec.kind}


def _generator_factory(env_path):
    block = load_generator_block(env_path)
    if not block:
        raise ConfigError("environment file has no generator block", key="env")
    return GeneratorSpec.from_dict(block)


def cmd_simulate(cfg, workers):
    if cfg["record"] not in ("endpoint", "decomposition"):
        raise ConfigError("simulate.record must be endpoint or decomposition", key="simulate.record")
    if cfg["annealed"]:
        spec = _generator_factory(cfg["env"])

        def env(rng):
            return generate(spec.with_seed(int(rng.integers(2**63))))[1]
    else:
        env = _load_drift(cfg["env"])
    try:
        wc = WalkConfig(env, T=cfg["T"], n=cfg["n"], samples=cfg["samples"],
                        master_seed=cfg["seed"], record=cfg["record"], start=cfg["start"],
                        workers=workers)
    except ValueError as exc:
        raise ConfigError(str(exc), key="simulate.T") from exc
    res = simulate_ctmc(wc) if cfg["T"] is not None else simulate_lazy(wc)
    d = res.endpoints.shape[1]
    header = ["sample_index"] + [f"x_{i + 1}" for i in range(d)] + ["jump_count"]
    if res.Z is not None:
        header += [f"y_{i + 1}" for i in range(d)] + [f"z_{i + 1}" for i in range(d)]
    rows = []
    for i in range(len(res)):
        row = [int(i)] + [int(x) for x in res.endpoints[i]] + [int(res.jump_counts[i])]
        if res.Z is not None:
            row += [float(x) for x in res.Y[i]] + [float(x) for x in res.Z[i]]
        rows.append(row)
    _write_csv(cfg["out"], header, rows)
    return [cfg["out"]], {"samples": len(res), "d": d}


def cmd_hminus(cfg, workers):
    if cfg["ensemble"] > 1:
        spec = _generator_factory(cfg["env"])
        seeds = np.random.SeedSequence(cfg["seed"]).generate_state(cfg["ensemble"], dtype=np.uint64)
        envs = [generate(spec.with_seed(int(s)))[1] for s in seeds]
    else:
        envs = [_load_drift(cfg["env"])]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est = HminusEstimator().fit(envs)
    rep = est.report()
    rep["report"] = "hminus"
    rep["notes"] = sorted({str(w.message) for w in caught})
    _dump_json(rep, cfg["out"])
    return [cfg["out"]], {"trace": rep["trace"]}


def _read_ctilde(path):
    try:
        doc = json.loads(Path(path).read_text())
        return np.array(doc["ctilde"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaMismatch(f"{path}: no usable 'ctilde' entry") from exc


def cmd_corrector(cfg, workers):
    env = _load_drift(cfg["env"])
    est = CorrectorEstimator().fit(env)
    rep = {"report": "corrector", "sigma2": est.sigma2_.tolist(), "residual": est.residual_,
           "d": env.dims.d, "L": env.dims.L}
    if cfg["ctilde"]:
        rep["bound_check"] = bound_margins(est.sigma2_, _read_ctilde(cfg["ctilde"]))
    _dump_json(rep, cfg["out"])
    return [cfg["out"]], {"sigma2": rep["sigma2"]}


def cmd_kvdiag(cfg, workers):
    env = _load_drift(cfg["env"])
    try:
        grid = lambda_grid(cfg["lambda_grid"])
    except ValueError as exc:
        raise ConfigError(f"bad lambda grid {cfg['lambda_grid']!r}", key="kvdiag.lambda_grid") from exc
    rows = kv_diagnostics(env, grid)
    _write_csv(cfg["out"], ["lambda", "component", "lam_u_sq", "dirichlet", "two_u_f", "residual"],
               [(r.lam, r.component + 1, r.lam_u_sq, r.dirichlet, r.two_u_f, r.residual) for r in rows])
    return [cfg["out"]], {"rows": len(rows)}


def read_endpoints(path):
    with open(path) as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration as exc:
            raise ParseError(f"{path}: empty endpoint file") from exc
        xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
        if not xcols:
            raise ParseError(f"{path}: no x_i columns")
        data = [[float(r[i]) for i in xcols] for r in reader if r]
    return np.array(data, dtype=float).reshape(-1, len(xcols))


def cmd_analyze(cfg, workers):
    X = read_endpoints(cfg["endpoints"])
    T = cfg["T"]
    if T is None:
        man = manifest_path(cfg["endpoints"])
        try:
            T = json.loads(man.read_text())["config"]["T"]
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError("horizon T not given and no endpoints manifest with T",
                              key="analyze.T") from exc
        if T is None:
            raise ConfigError("endpoints were simulated without a horizon T", key="analyze.T")
    if cfg["env"]:
        env = _load_drift(cfg["env"])
        if env.dims.d != X.shape[1]:
            raise ConfigError("endpoint dimension does not match the environment", key="analyze.env")
    ctilde = _read_ctilde(cfg["ctilde"]) if cfg["ctilde"] else None
    est = DiffusivityEstimator(T=float(T), ctilde=ctilde).fit(X)
    rep = est.report()
    rep["report"] = "analyze"
    if est.bound_check_ is not None and not est.bound_check_["passed"]:
        rep["notes"].append("bound check failed")
    _dump_json(rep, cfg["out"])
    return [cfg["out"]], {"bound_check_passed": None if est.bound_check_ is None
                          else est.bound_check_["passed"]}


def cmd_heatkernel(cfg, workers):
    env = _load_drift(cfg["env"])
    rep = heat_kernel(env, cfg["nmax"])
    if str(cfg["out"]).endswith(".json"):
        _dump_json(rep.to_dict(), cfg["out"])
    else:
        _write_csv(cfg["out"], PLOT_COLUMNS["heatkernel"], rep.rows)
    return [cfg["out"]], {"exponent": rep.exponent, "mass_error": rep.mass_error}


def cmd_isoperimetry(cfg, workers):
    env = _load_drift(cfg["env"])
    rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"]))
    rows = []
    for s in range(cfg["sets"]):
        mask = rng.random(env.dims.shape) < cfg["density"]
        Q, b = isoperimetry(env, mask)
        rows.append({"set": s, "size": int(mask.sum()), "Q": Q, "boundary": b})
    rep = {"report": "isoperimetry", "d": env.dims.d, "L": env.dims.L, "rows": rows,
           "identity_exact": True}
    _dump_json(rep, cfg["out"])
    return [cfg["out"]], {"sets": len(rows)}


PLOT_COLUMNS = {
    "analyze": ["T", "msd_over_t", "se"],
    "heatkernel": ["n", "sup_p", "sup_times_n_half_d"],
    "hminus": ["direction", "hminus_norm"],
}


def emit_plotdata(report, kind=None):
    """Tidy ``(header, rows)`` for a report dict; raises :class:`SchemaMismatch`."""
    kind = report.get("report", kind) if isinstance(report, dict) else None
    if kind not in PLOT_COLUMNS:
        raise SchemaMismatch(f"cannot tell which report this is (kind={kind!r})")
    try:
        if kind == "analyze":
            rows = [tuple(r[:3]) for r in report.get("msd_curve", [])]
        elif kind == "heatkernel":
            rows = [tuple(r[:3]) for r in report.get("rows", [])]
        else:
            rows = [(n, v) for n, v in enumerate(report.get("hminus_norms", []))]
    except (TypeError, IndexError) as exc:
        raise SchemaMismatch(f"malformed {kind} report") from exc
    return kind, PLOT_COLUMNS[kind], rows


def _svg(path, kind, header, rows):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "driftwalk"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if rows:
        x = [r[0] for r in rows]
        ax.plot(x, [r[1] for r in rows] if kind != "heatkernel" else [r[2] for r in rows], marker="o")
    ax.set_xlabel(header[0])
    ax.set_ylabel(header[1] if kind != "heatkernel" else header[2])
    if kind == "analyze":
        ax.set_xscale("log")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_plotdata(cfg, workers):
    try:
        report = json.loads(Path(cfg["report"]).read_text())
    except ValueError as exc:
        raise ParseError(f"{cfg['report']}: {exc}") from exc
    kind, header, rows = emit_plotdata(report, cfg["kind"])
    _write_csv(cfg["out"], header, rows)
    outputs = [cfg["out"]]
    if cfg["svg"]:
        _svg(cfg["svg"], kind, header, rows)
        outputs.append(cfg["svg"])
    return outputs, {"columns": header, "rows": len(rows)}


COMMANDS = {
    "generate": cmd_generate, "simulate": cmd_simulate, "hminus": cmd_hminus,
    "corrector": cmd_corrector, "kvdiag": cmd_kvdiag, "analyze": cmd_analyze,
    "heatkernel": cmd_heatkernel, "isoperimetry": cmd_isoperimetry, "plotdata": cmd_plotdata,
}


def run_command(command, cfg, workers=1):
    outputs, summary = COMMANDS[command](cfg, workers)
    man = write_manifest(command, cfg, outputs)
    return {"command": command, "outputs": [str(p) for p in outputs], "manifest": str(man),
            "summary": summary}


def pipeline_configs(sections, outdir):
    """Per-stage configs for generate -> hminus -> corrector -> simulate -> analyze."""
    extra = set(sections) - set(PIPELINE_STAGES) - {"pipeline"}
    if extra:
        raise ConfigError(f"unknown config section {sorted(extra)[0]!r}", key=sorted(extra)[0])
    out = Path(outdir)
    env, rep = str(out / "env.json"), str(out / "report.json")
    wired = {
        "generate": {"out": env},
        "hminus": {"env": env, "out": rep},
        "corrector": {"env": env, "ctilde": rep, "out": str(out / "corrector.json")},
        "simulate": {"env": env, "out": str(out / "endpoints.csv")},
        "analyze": {"endpoints": str(out / "endpoints.csv"), "env": env, "ctilde": rep,
                    "out": str(out / "diff.json")},
    }
    cfgs = {}
    for stage in PIPELINE_STAGES:
        given = dict(sections.get(stage, {}))
        for key in wired[stage]:
            if key in given:
                raise ConfigError(f"{stage}.{key} is set by the pipeline", key=f"{stage}.{key}")
        cfgs[stage] = resolve(stage, given, wired[stage])
    return cfgs


def run_pipeline(config_path, outdir, workers=1):
    sections = read_ini(config_path) if config_path else {}
    Path(outdir).mkdir(parents=True, exist_ok=True)
    results = [run_command(stage, cfg, workers)
               for stage, cfg in pipeline_configs(sections, outdir).items()]
    diff = json.loads(Path(results[-1]["outputs"][0]).read_text())
    return {"stages": results, "bound_check": diff.get("bound_check")}


def replay(manifest, workers=1):
    """Re-run a manifest; returns ``(matches, details)``."""
    try:
        doc = json.loads(Path(manifest).read_text())
        command, cfg, expected = doc["command"], doc["config"], doc["outputs"]
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"unreadable manifest {manifest}: {exc}", key="manifest") from exc
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r} in manifest", key="command")
    cfg = resolve(command, None, cfg)
    run_command(command, cfg, workers)
    details = {p: (h, _sha256(p)) for p, h in expected.items()}
    return all(a == b for a, b in details.values()), details


# ------------------------------------------------------------------ entry point

def build_parser():
    p = argparse.ArgumentParser(prog="driftwalk",
                                description="Random walks in divergence-free drift fields.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        sp = sub.add_parser(name, help=f"{name} subcommand")
        sp.add_argument("--config", help="INI file; the [%s] section supplies defaults" % name)
        sp.add_argument("--workers", type=int, help="worker threads (default: $DRIFTWALK_WORKERS or 1)")
        for key, (_, default, help_) in schema.items():
            flag = "--" + key.replace("_", "-")
            sp.add_argument(flag, dest=key, default=None, help=f"{help_} (default: {default})")
    pp = sub.add_parser("pipeline", help="generate -> hminus -> corrector -> simulate -> analyze")
    pp.add_argument("--config", help="INI file with one section per stage (default: bundled demo)")
    pp.add_argument("--outdir", default="driftwalk-run")
    pp.add_argument("--workers", type=int)
    rp = sub.add_parser("replay", help="re-run a manifest and compare outputs byte for byte")
    rp.add_argument("manifest")
    rp.add_argument("--workers", type=int)
    return p


def demo_config_path():
    return str(resources.files("driftwalk") / "data" / "demo.ini")


def _error(exc, code):
    key = getattr(exc, "key", None)
    doc = {"error": type(exc).__name__, "message": str(exc)}
    if key is not None:
        doc["key"] = key
    sys.stderr.write(json.dumps(doc) + "\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        workers = args.workers if args.workers is not None else default_workers()
        if workers < 1:
            raise ConfigError("workers must be >= 1", key="workers")
        if args.command == "pipeline":
            result = run_pipeline(args.config or demo_config_path(), args.outdir, workers)
            code = EXIT_OK
        elif args.command == "replay":
            ok, details = replay(args.manifest, workers)
            result = {"replay": args.manifest, "identical": ok,
                      "outputs": {p: {"expected": a, "actual": b} for p, (a, b) in details.items()}}
            code = EXIT_OK if ok else EXIT_RUNTIME
        else:
            file_values = read_ini(args.config).get(args.command, {}) if args.config else {}
            flags = {k: getattr(args, k) for k in SCHEMAS[args.command]}
            cfg = resolve(args.command, file_values, flags)
            result = run_command(args.command, cfg, workers)
            code = EXIT_OK
    except RUNTIME_ERRORS as exc:
        return _error(exc, EXIT_RUNTIME)
    except (DriftwalkError, ValueError) as exc:
        return _error(exc, EXIT_INPUT)
    sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
