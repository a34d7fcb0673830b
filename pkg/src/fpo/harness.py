"""Experiment harness: TOML configs, seeded runs, quartile aggregation and SVG charts.

Run directory layout::

    <output_dir>/
        manifest.json           resolved config + code version
        history_seed<k>.csv     one row per iteration (deterministic)
        timing_seed<k>.csv      wall-clock seconds per iteration

Histories are the single source for every table and chart.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .acquisition import AcquisitionConfig
from .core import METHODS, psi_mapping_for
from .envs import ENVIRONMENTS, make_env
from .evaluation import QuadratureConfig
from .polgrad import PolGradConfig

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "FPO_OUTPUT_ROOT"

METHOD_KINDS = ("fpo-ucb-s", "fpo-ucb-a", "naive", "enum", "random", "fixed", "epopt")
_METHOD_RE = re.compile(r"^(?P<kind>[a-z-]+)(?:\((?P<arg>[^)]*)\))?$")


class ConfigError(ValueError):
    """Raised for any invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    method: str
    environment: str = "cliff_walker"
    env_params: dict = field(default_factory=dict)
    method_params: dict = field(default_factory=dict)
    polgrad: PolGradConfig = field(default_factory=PolGradConfig)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    hidden_sizes: tuple = (5, 5)
    iterations: int = 300
    seeds: tuple = (0, 1, 2, 3, 4)
    output_dir: str = "runs/experiment"
    name: str = ""

    @property
    def label(self):
        return self.name or self.method

    @property
    def kind(self):
        return parse_method(self.method)[0]

    def to_dict(self):
        """Fully resolved configuration (every default materialised)."""
        env_cls, cfg_cls = ENVIRONMENTS[self.environment]
        env_params = dataclasses.asdict(cfg_cls(**self.env_params))
        return {
            "name": self.label,
            "method": self.method,
            "iterations": self.iterations,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "environment": {"name": self.environment, **env_params},
            "method_params": resolved_method_params(self),
            "policy": {"hidden_sizes": list(self.hidden_sizes)},
            "polgrad": dataclasses.asdict(self.polgrad),
            "acquisition": dataclasses.asdict(self.acquisition),
            "quadrature": dataclasses.asdict(self.quadrature),
        }


def parse_method(method):
    """Split ``"epopt(0.2)"`` into ``("epopt", [0.2])``."""
    m = _METHOD_RE.match(method.strip().lower())
    if not m or m.group("kind") not in METHOD_KINDS:
        raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHOD_KINDS)}")
    arg = m.group("arg")
    values = []
    if arg:
        try:
            values = [float(v) for v in arg.split(",")]
        except ValueError:
            raise ConfigError(f"cannot parse method arguments in {method!r}") from None
    return m.group("kind"), values


def resolved_method_params(cfg):
    kind, args = parse_method(cfg.method)
    params = dict(cfg.method_params)
    if kind == "epopt":
        if args:
            params.setdefault("epsilon", args[0])
        params.setdefault("epsilon", 0.2)
        params.setdefault("rejection_start_iter", 50)
        params.setdefault("upper_tail", False)
    elif kind == "fixed":
        if args:
            params.setdefault("psi", args)
        if "psi" not in params:
            raise ConfigError("method 'fixed' needs psi, e.g. fixed(2,1)")
        params["psi"] = [float(v) for v in np.atleast_1d(params["psi"])]
    elif kind.startswith("fpo"):
        params.setdefault("gp_restarts", 8)
        params.setdefault("pair_next_fingerprint", False)
    return params


_SECTIONS = {"polgrad": PolGradConfig, "acquisition": AcquisitionConfig, "quadrature": QuadratureConfig}
_TOP_KEYS = {"name", "method", "iterations", "seeds", "output_dir", "environment", "method_params",
             "policy", *_SECTIONS}


def _build_section(cls, values, section):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}]: {exc}") from None


def config_from_dict(raw):
    """Build and validate an :class:`ExperimentConfig` from parsed TOML."""
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if "method" not in raw:
        raise ConfigError("config must set 'method'")
    env_raw = dict(raw.get("environment", {}))
    env_name = env_raw.pop("name", "cliff_walker")
    if env_name not in ENVIRONMENTS:
        raise ConfigError(f"unknown environment {env_name!r}; choose from {sorted(ENVIRONMENTS)}")
    _build_section(ENVIRONMENTS[env_name][1], env_raw, "environment")
    policy = dict(raw.get("policy", {}))
    if set(policy) - {"hidden_sizes"}:
        raise ConfigError(f"unknown keys in [policy]: {sorted(set(policy) - {'hidden_sizes'})}")
    cfg = ExperimentConfig(
        method=str(raw["method"]),
        environment=env_name,
        env_params=env_raw,
        method_params=dict(raw.get("method_params", {})),
        polgrad=_build_section(PolGradConfig, raw.get("polgrad", {}), "polgrad"),
        acquisition=_build_section(AcquisitionConfig, raw.get("acquisition", {}), "acquisition"),
        quadrature=_build_section(QuadratureConfig, raw.get("quadrature", {}), "quadrature"),
        hidden_sizes=tuple(int(h) for h in policy.get("hidden_sizes", (5, 5))),
        iterations=int(raw.get("iterations", 300)),
        seeds=tuple(int(s) for s in raw.get("seeds", (0, 1, 2, 3, 4))),
        output_dir=str(raw.get("output_dir", "runs/experiment")),
        name=str(raw.get("name", "")),
    )
    validate_config(cfg)
    return cfg


def load_config(path):
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from None
    return config_from_dict(raw)


def validate_config(cfg):
    """Raise :class:`ConfigError` if the config cannot run."""
    kind, _ = parse_method(cfg.method)
    if cfg.environment not in ENVIRONMENTS:
        raise ConfigError(f"unknown environment {cfg.environment!r}")
    env = make_env(cfg.environment, **cfg.env_params)
    if kind == "enum" and not env.discrete:
        raise ConfigError(f"method 'enum' requires a discrete-theta environment, "
                          f"but {cfg.environment!r} has continuous theta")
    if cfg.iterations < 1:
        raise ConfigError("iterations must be >= 1")
    if not cfg.seeds:
        raise ConfigError("at least one seed is required")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        raise ConfigError("seeds must be distinct")
    if not cfg.hidden_sizes or any(h < 1 for h in cfg.hidden_sizes):
        raise ConfigError("hidden_sizes must be positive integers")
    params = resolved_method_params(cfg)
    allowed = {
        "epopt": {"epsilon", "rejection_start_iter", "upper_tail"},
        "fixed": {"psi"},
        "fpo-ucb-s": {"gp_restarts", "pair_next_fingerprint"},
        "fpo-ucb-a": {"gp_restarts", "pair_next_fingerprint"},
    }.get(kind, set())
    if set(params) - allowed:
        raise ConfigError(f"method {kind!r} does not accept {sorted(set(params) - allowed)}")
    if kind == "epopt" and not 0.0 < params["epsilon"] <= 1.0:
        raise ConfigError("epopt epsilon must lie in (0, 1]")
    if kind == "fixed":
        mapping = psi_mapping_for(env)
        psi = np.asarray(params["psi"])
        b = mapping.bounds
        if psi.shape != (len(b),) or np.any(psi < b[:, 0]) or np.any(psi > b[:, 1]):
            raise ConfigError(f"fixed psi {psi.tolist()} must have {len(b)} entries within {b.tolist()}")
    return cfg


def build_estimator(cfg, seed):
    kind, _ = parse_method(cfg.method)
    params = resolved_method_params(cfg)
    common = dict(n_iterations=cfg.iterations, polgrad=cfg.polgrad, quadrature=cfg.quadrature,
                  hidden_sizes=cfg.hidden_sizes, random_state=np.random.SeedSequence(seed))
    if kind.startswith("fpo"):
        return METHODS["fpo"](fingerprint="state" if kind == "fpo-ucb-s" else "action",
                              acquisition=cfg.acquisition, **params, **common)
    return METHODS[kind](**params, **common)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def resolve_output_dir(path):
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _fmt(x):
    return repr(float(x))


def history_header(psi_dim, fp_dim):
    return (["iteration"] + [f"psi_{i}" for i in range(psi_dim)] + ["J"]
            + [f"fp_mean_{i}" for i in range(fp_dim)] + [f"fp_std_{i}" for i in range(fp_dim)]
            + ["kl"])


def write_history(path, records):
    psi_dim = len(records[0]["psi"])
    fp_dim = len(records[0]["fp_mean"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(history_header(psi_dim, fp_dim))
        for r in records:
            w.writerow([r["iteration"], *map(_fmt, r["psi"]), _fmt(r["J"]),
                        *map(_fmt, r["fp_mean"]), *map(_fmt, r["fp_std"]), _fmt(r["kl"])])


def read_history(path):
    """Parse a history CSV into column arrays keyed by header name."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"history file {path} has no rows")
    header, data = rows[0], np.array(rows[1:], dtype=float)
    return {name: data[:, i] for i, name in enumerate(header)}


def run(cfg, callback=None):
    """Train every seed of ``cfg`` and write histories plus a manifest. Returns the run dir."""
    validate_config(cfg)
    out = resolve_output_dir(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for seed in cfg.seeds:
        env = make_env(cfg.environment, **cfg.env_params)
        est = build_estimator(cfg, seed)
        logger.info("running %s seed %d for %d iterations", cfg.label, seed, cfg.iterations)
        est.fit(env, callback=callback)
        hist = out / f"history_seed{seed}.csv"
        write_history(hist, est.history_)
        with open(out / f"timing_seed{seed}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "seconds"])
            for r in est.history_:
                w.writerow([r["iteration"], f"{r['seconds']:.6f}"])
        files.append(hist.name)
    manifest = {"label": cfg.label, "code_version": __version__, "config": cfg.to_dict(),
                "histories": files}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


# ---------------------------------------------------------------------------
# aggregate
# ---------------------------------------------------------------------------


def nearest_rank_quartiles(values):
    """``(Q1, median, Q3)`` by the nearest-rank rule."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("no values to summarise")
    n = len(v)
    return tuple(float(v[max(1, math.ceil(q * n)) - 1]) for q in (0.25, 0.5, 0.75))


def _psi_mean(env_name, psi_cols):
    if env_name == "cliff_walker" and len(psi_cols) == 2:
        return psi_cols[0] / (psi_cols[0] + psi_cols[1])
    return psi_cols[0]


def aggregate(run_dirs):
    """Summarise completed run directories per method label."""
    if not run_dirs:
        raise ValueError("aggregate needs at least one run directory")
    methods = {}
    for d in map(Path, run_dirs):
        mpath = d / "manifest.json"
        if not mpath.exists():
            raise FileNotFoundError(f"{d} is not a completed run (no manifest.json)")
        manifest = json.loads(mpath.read_text())
        cfg = manifest["config"]
        entry = methods.setdefault(manifest["label"], {
            "method": cfg["method"], "environment": cfg["environment"]["name"], "seeds": [],
            "_curves": [], "_psi": []})
        for fname in manifest["histories"]:
            h = read_history(d / fname)
            psi = [h[k] for k in sorted(k for k in h if k.startswith("psi_"))]
            entry["seeds"].append(fname)
            entry["_curves"].append(h["J"])
            entry["_psi"].append(_psi_mean(entry["environment"], psi))
    summary = {"methods": {}}
    for label in sorted(methods):
        e = methods.pop(label)
        curves, psis = e.pop("_curves"), e.pop("_psi")
        n_iter = min(len(c) for c in curves)
        C = np.array([c[:n_iter] for c in curves])
        P = np.array([p[:n_iter] for p in psis])
        finals = C[:, -1]
        q1, med, q3 = nearest_rank_quartiles(finals)
        per_iter = [nearest_rank_quartiles(C[:, t]) for t in range(n_iter)]
        e.update({
            "final_J": finals.tolist(),
            "q1": q1, "median": med, "q3": q3,
            "curve": {
                "iteration": list(range(1, n_iter + 1)),
                "q1": [p[0] for p in per_iter],
                "median": [p[1] for p in per_iter],
                "q3": [p[2] for p in per_iter],
            },
            "psi_mean_median": [nearest_rank_quartiles(P[:, t])[1] for t in range(n_iter)],
            "psi_mean_per_seed": P.tolist(),
        })
        summary["methods"][label] = e
    return summary


def write_summary(summary, path):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# plot
# ---------------------------------------------------------------------------


def plot(summary, out_dir):
    """Write ``learning_curves.svg`` and ``psi_schedule.svg``; returns the paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    with matplotlib.rc_context({"svg.hashsalt": "fpo", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for label, e in summary["methods"].items():
            c = e["curve"]
            ax.plot(c["iteration"], c["median"], label=label, gid=f"series-{label}")
            ax.fill_between(c["iteration"], c["q1"], c["q3"], alpha=0.15)
        ax.set_xlabel("iteration")
        ax.set_ylabel("expected return J (median across seeds)")
        ax.legend(loc="lower right")
        p = out / "learning_curves.svg"
        fig.savefig(p, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(p)

        fig, ax = plt.subplots(figsize=(7, 4.5))
        for label, e in summary["methods"].items():
            if not e["method"].startswith("fpo"):
                continue
            ax.plot(e["curve"]["iteration"], e["psi_mean_median"], label=label,
                    gid=f"series-{label}")
        ref = _prior_mean(summary)
        if ref is not None:
            ax.axhline(ref, color="k", linestyle="--", label="true distribution")
        ax.set_xlabel("iteration")
        ax.set_ylabel("mean of selected q_psi(theta)")
        ax.legend(loc="best")
        p = out / "psi_schedule.svg"
        fig.savefig(p, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(p)
    return paths


def _prior_mean(summary):
    envs = {e["environment"] for e in summary["methods"].values()}
    if envs == {"cliff_walker"}:
        return 2.0 / 3.0
    return None
