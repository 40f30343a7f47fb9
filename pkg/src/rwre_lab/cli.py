"""Command line entry point: ``rwre-lab run|check|reproduce|list``.

Exit codes: 0 ok, 1 acceptance failure (reproduce only), 2 invalid
configuration, 3 capacity (memory cap, censoring, infeasible constants),
4 indeterminate verdict, 5 internal error.  Every error is reported on
stderr as one JSON object.
"""

import argparse
import copy
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import resources

import jsonschema
import numpy as np

from . import __version__
from .errors import CapacityError, CensoringError, ConfigError, RWRELabError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_CAPACITY, EXIT_INDETERMINATE, EXIT_INTERNAL = 0, 1, 2, 3, 4, 5
SCHEMA_VERSION = "1.0"
OUT_ENV = "RWRE_LAB_OUT"
DEFAULT_OUT = "rwre_lab_out"

DEFAULTS = {"trials": 2000, "n_env": 100, "walk_trials": 1000, "seed": 0, "jobs": 1,
            "budget": 1e7, "censor_cap": 1e-3, "memory_cap": 1 << 28}
# keys that never influence a reported number
NON_RESULT_KEYS = ("jobs", "outputs")
NEEDS_LAW = {"slab_curve", "boxT", "weakW", "transience", "hierarchy_report", "cascade",
             "corollary", "velocity"}
NEEDS_HIERARCHY = {"cascade", "null_model"}


def load_schema(version=SCHEMA_VERSION):
    text = resources.files("rwre_lab").joinpath(f"schemas/config-{version}.json").read_text()
    return json.loads(text)


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays unpacked, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return _clean(obj.to_dict())
    return str(obj)


def canonical_json(obj):
    return json.dumps(_clean(obj), sort_keys=True, indent=1)


def _sha(obj):
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


@dataclass
class ExperimentConfig:
    """A schema-validated configuration with defaults filled in."""

    data: dict

    @property
    def experiment(self):
        return self.data["experiment"]

    def get(self, key, default=None):
        return self.data.get(key, default)

    def cond(self, key, default=None):
        return self.data.get("condition", {}).get(key, default)

    def result_config(self):
        return {k: v for k, v in self.data.items() if k not in NON_RESULT_KEYS}

    @property
    def config_hash(self):
        return _sha(self.result_config())

    def law(self):
        from .env import EnvironmentLaw
        return EnvironmentLaw.from_dict(self.data["law"]) if "law" in self.data else None

    def direction(self):
        from .geometry import as_direction
        d = self.dimension()
        return as_direction(self.data.get("direction"), d)

    def dimension(self):
        if "law" in self.data:
            return int(self.data["law"]["d"])
        return int(self.data.get("hierarchy", {}).get("d", 1))

    def hierarchy(self):
        from .geometry import make_hierarchy
        h = self.data["hierarchy"]
        return make_hierarchy(h["L0"], h.get("N0"), h.get("Ntilde0"), h.get("c_tilde", 1.0),
                              h.get("k_max", 3), self.dimension(),
                              h.get("paper_defaults", False), warn=False)

    def mixing(self):
        from .env import MixingParams
        m = self.data.get("mixing")
        return None if m is None else MixingParams(m["C"], m["g"], m.get("r", 1))


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    result_hash: str
    wall_time_s: float
    timings: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    jobs: int = 1
    started_at: str = ""

    def to_dict(self):
        return asdict(self)


def validate_config(raw):
    """Schema check plus construction of every sub-spec; no simulation."""
    if isinstance(raw, ExperimentConfig):
        return raw
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {e.message}") from None
    data = copy.deepcopy(raw)
    for k, v in DEFAULTS.items():
        data.setdefault(k, v)
    cfg = ExperimentConfig(data)
    exp = cfg.experiment
    if exp in NEEDS_LAW and "law" not in data:
        raise ConfigError(f"experiment {exp!r} needs a 'law'")
    if exp in NEEDS_HIERARCHY and "hierarchy" not in data:
        raise ConfigError(f"experiment {exp!r} needs a 'hierarchy'")
    hd = data.get("hierarchy", {}).get("d")
    if hd is not None and "law" in data and hd != data["law"]["d"]:
        raise ConfigError("hierarchy/d disagrees with law/d")
    try:
        cfg.law()
        cfg.direction()
        if "hierarchy" in data:
            cfg.hierarchy()
        cfg.mixing()
        grid = cfg.cond("L_grid")
        if grid is not None and any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("condition/L_grid must be increasing")
    except OverflowError as e:
        raise CapacityError(f"infeasible constants: {e}") from None
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigError(str(e)) from None
    return cfg


def preflight(cfg):
    """Capacity checks that need no simulation."""
    if cfg.experiment == "cascade":
        from .renorm import cascade_memory_bytes, suggest_scaled_config
        h = cfg.hierarchy()
        need = cascade_memory_bytes(h, h.k_max)
        if need > cfg.get("memory_cap"):
            raise CapacityError(
                f"infeasible constants: scale-{h.k_max} dependency window needs {need:.3g} "
                f"bytes (cap {cfg.get('memory_cap')})",
                {"suggested_hierarchy": suggest_scaled_config(h.d, cfg.get('memory_cap'))})


def _verdict_of(exp, result):
    if exp in ("slab_curve", "boxT"):
        return result["verdict"]
    if exp == "weakW":
        return result["satisfied"]
    if exp == "transience":
        return result["verdict"]
    if exp == "hierarchy_report":
        v = result["verdicts"].values()
        return "indeterminate" if "indeterminate" in v else "reported"
    return None


def execute(cfg, jobs=None, seed=None):
    """Run one configuration; returns {payload, timings, csv}."""
    from . import conditions as C
    from .oned import corollary_experiment
    from .renorm import cascade_experiment, null_model_cascade
    from .walk import velocity_estimate

    cfg = validate_config(cfg)
    if seed is not None:
        cfg = ExperimentConfig(dict(cfg.data, seed=int(seed)))
    preflight(cfg)
    jobs = int(cfg.get("jobs") if jobs is None else jobs)
    exp = cfg.experiment
    law = cfg.law()
    D = cfg.direction()
    s = int(cfg.get("seed"))
    trials = int(cfg.get("trials"))
    L_grid = cfg.cond("L_grid", [5, 10, 15, 20])
    gamma = cfg.cond("gamma", 1.0)
    t0 = time.perf_counter()
    curve = None
    if exp == "slab_curve":
        spec = C.ConditionSpec("StretchT", D, b=cfg.cond("b", 1.0), gamma=gamma)
        fit = C.estimate_slab_curve(law, spec, L_grid, trials, s, jobs, cfg.get("budget"),
                                    cfg.get("censor_cap"))
        curve = fit
        result = dict(fit.to_dict(), verdict=C.decay_verdict(fit, gamma=gamma))
    elif exp == "boxT":
        fit = C.estimate_condition_boxT(law, gamma, L_grid, trials, s, jobs, D,
                                        cfg.get("budget"), cfg.get("censor_cap"))
        curve = fit
        result = dict(fit.to_dict(), verdict=C.decay_verdict(fit, gamma=gamma))
    elif exp == "weakW":
        result = C.estimate_condition_W(law, cfg.cond("c", 1.0),
                                        cfg.cond("M_W", cfg.cond("M", 30)),
                                        cfg.cond("lambda1", 0.04), int(cfg.get("n_env")), s, D)
    elif exp == "transience":
        result = C.transience_probe(law, D, cfg.cond("n_grid", [1000, 2000, 4000]), trials,
                                    s, jobs)
    elif exp == "hierarchy_report":
        conf = {"direction": D, "seed": s, "jobs": jobs, "L_grid": L_grid, "trials": trials,
                "n_env": cfg.get("n_env"), "walk_trials": cfg.get("walk_trials")}
        conf.update({k: v for k, v in cfg.get("condition", {}).items()})
        result = C.hierarchy_report(law, conf)
    elif exp == "cascade":
        h = cfg.hierarchy()
        result = cascade_experiment(law, h, h.k_max, int(cfg.get("n_env")), s,
                                    cfg.cond("lambda1"), cfg.mixing(), cfg.get("memory_cap"))
    elif exp == "null_model":
        result = null_model_cascade(cfg.hierarchy(), cfg.cond("p", 0.1), trials, s)
    elif exp == "corollary":
        result = corollary_experiment(law, cfg.cond("m_grid", [4, 16, 64]), L_grid,
                                      cfg.cond("b", 1.0), int(cfg.get("n_env")), s)
    elif exp == "velocity":
        result = velocity_estimate(law, cfg.cond("n_steps", 1000), trials, s, jobs, D)
    else:  # pragma: no cover - the schema enumerates experiments
        raise ConfigError(f"unknown experiment {exp!r}")
    elapsed = time.perf_counter() - t0
    payload = {"schema_version": SCHEMA_VERSION, "tool_version": __version__,
               "experiment": exp, "config_hash": cfg.config_hash,
               "law": law.to_dict() if law is not None else None,
               "direction": D.to_list(), "verdict": _verdict_of(exp, result),
               "result": result}
    return {"payload": _clean(payload), "timings": {exp: elapsed}, "curve": curve,
            "config": cfg}


def _out_dir(arg):
    return arg or os.environ.get(OUT_ENV) or DEFAULT_OUT


def run_config(cfg, out=None, jobs=None, seed=None):
    """Execute and write report.json, manifest.json and an optional curve CSV."""
    from .conditions import write_curve_csv

    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    res = execute(cfg, jobs, seed)
    cfg = res["config"]
    outputs = cfg.get("outputs", {})
    out = _out_dir(out or outputs.get("dir"))
    os.makedirs(out, exist_ok=True)
    report_path = os.path.join(out, outputs.get("report", "report.json"))
    with open(report_path, "w") as fh:
        fh.write(canonical_json(res["payload"]) + "\n")
    paths = {"report": report_path}
    if res["curve"] is not None:
        paths["csv"] = os.path.join(out, outputs.get("csv", "curve.csv"))
        write_curve_csv(paths["csv"], res["curve"])
    man = RunManifest(cfg.config_hash, __version__, _sha(res["payload"]),
                      time.perf_counter() - t0, res["timings"],
                      {"master_seed": int(cfg.get("seed"))},
                      int(jobs if jobs is not None else cfg.get("jobs")), started)
    paths["manifest"] = os.path.join(out, outputs.get("manifest", "manifest.json"))
    with open(paths["manifest"], "w") as fh:
        fh.write(canonical_json(man.to_dict()) + "\n")
    return res["payload"], man, paths


def _diagnostic(code, err, extra=None):
    out = {"status": "error", "exit_code": code, "error": type(err).__name__,
           "message": str(err.args[0]) if err.args else str(err)}
    if len(getattr(err, "args", ())) > 1 and isinstance(err.args[1], dict):
        out.update(err.args[1])
    if extra:
        out.update(extra)
    print(json.dumps(_clean(out), sort_keys=True), file=sys.stderr)
    return code


def _read_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from None


def _guard(fn):
    try:
        return fn()
    except (ConfigError, jsonschema.SchemaError) as e:
        return _diagnostic(EXIT_CONFIG, e)
    except (CapacityError, CensoringError, MemoryError) as e:
        return _diagnostic(EXIT_CAPACITY, e)
    except RWRELabError as e:
        return _diagnostic(EXIT_INTERNAL, e)
    except Exception as e:  # noqa: BLE001 - last-resort diagnostic
        return _diagnostic(EXIT_INTERNAL, e)


def cmd_check(args):
    def go():
        cfg = validate_config(_read_config(args.config))
        preflight(cfg)
        print(json.dumps({"status": "ok", "experiment": cfg.experiment,
                          "config_hash": cfg.config_hash}, sort_keys=True))
        return EXIT_OK
    return _guard(go)


def cmd_run(args):
    if args.check:
        return cmd_check(args)

    def go():
        payload, man, paths = run_config(_read_config(args.config), args.out, args.jobs,
                                          args.seed)
        print(json.dumps({"status": "ok", "verdict": payload["verdict"],
                          "result_hash": man.result_hash, **paths}, sort_keys=True))
        return EXIT_INDETERMINATE if payload["verdict"] == "indeterminate" else EXIT_OK
    return _guard(go)


def cmd_reproduce(args):
    from .acceptance import CHECKS, run_checks, summary_line

    ids = list(CHECKS) if args.id == "all" else [args.id]
    if any(i not in CHECKS for i in ids):
        return _diagnostic(EXIT_CONFIG, KeyError(f"unknown acceptance id {args.id!r}"),
                           {"valid_ids": sorted(CHECKS) + ["all"]})

    def go():
        results = run_checks(ids)
        for r in results:
            print(summary_line(r))
        out = _out_dir(args.out)
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "reproduce.json"), "w") as fh:
            fh.write(canonical_json(results) + "\n")
        return EXIT_OK if all(r["passed"] for r in results) else EXIT_FAIL
    return _guard(go)


def cmd_list(args):
    from .acceptance import CHECKS

    schema = load_schema()
    print("experiments:")
    for e in schema["properties"]["experiment"]["enum"]:
        print(f"  {e}")
    print("acceptance ids:")
    for k, fn in CHECKS.items():
        print(f"  {k}  {fn.__doc__.strip().splitlines()[0]}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the master seed")
    common.add_argument("--jobs", type=int, default=None, help="worker threads")
    common.add_argument("--out", default=None,
                        help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p = argparse.ArgumentParser(prog="rwre-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"rwre-lab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="run one experiment config")
    r.add_argument("config_pos", nargs="?", help=argparse.SUPPRESS)
    r.add_argument("--config", default=None)
    r.add_argument("--check", action="store_true", help="validate only, no simulation")
    r.set_defaults(fn=cmd_run)
    c = sub.add_parser("check", parents=[common], help="validate a config")
    c.add_argument("config_pos", nargs="?", help=argparse.SUPPRESS)
    c.add_argument("--config", default=None)
    c.set_defaults(fn=cmd_check)
    rp = sub.add_parser("reproduce", parents=[common], help="run an acceptance criterion")
    rp.add_argument("id", help="A1..A9 or all")
    rp.set_defaults(fn=cmd_reproduce)
    ls = sub.add_parser("list", help="list experiments and acceptance ids")
    ls.set_defaults(fn=cmd_list)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command in ("run", "check"):
        args.config = args.config or args.config_pos
        if not args.config:
            return _diagnostic(EXIT_CONFIG, ConfigError("a config file is required"))
    return args.fn(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
