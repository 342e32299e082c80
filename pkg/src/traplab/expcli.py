"""Config-driven experiment runner.

A run reads one JSON document, dispatches independent work units to a process
pool, merges their rows by unit index and writes ``results.csv``,
``results.json``, the resolved ``config.json`` and a ``manifest.json`` holding
the config hash, code version, wall-clock time, seed paths and file digests.
Result files never contain timing, so a rerun of the manifest reproduces them
byte for byte whatever the worker count.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import jsonschema
import numpy as np

from . import __version__
from .randkit import SeedTree

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2, 3
WORKERS_ENV = "TRAPLAB_WORKERS"
PMF_TOL = 1e-12

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_PMF = {
    "type": "object",
    "minProperties": 1,
    "patternProperties": {"^[0-9]+$": {"type": "number", "minimum": 0}},
    "additionalProperties": False,
}
_BETA = {"anyOf": [_POS, {"const": "inf"}]}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["model", "experiment", "params", "budget", "seed"],
    "additionalProperties": False,
    "properties": {
        "model": {"enum": ["btm", "rwre1d", "gwtree", "perc", "iic"]},
        "experiment": {"type": "string"},
        "params": {"type": "object"},
        "budget": {
            "type": "object",
            "required": ["replicas"],
            "additionalProperties": False,
            "properties": {
                "steps": {"type": "integer", "minimum": 1},
                "replicas": {"type": "integer", "minimum": 1},
                "workers": {"type": "integer", "minimum": 1},
                "max_seconds": _POS,
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
    },
}


class ConfigError(ValueError):
    pass


# -- experiments -------------------------------------------------------------


@dataclass
class Experiment:
    params: dict  # JSON schema of the params block
    columns: tuple[str, ...]
    units: Callable[[dict], list]
    run: Callable[[dict, tuple, SeedTree], list]
    figure: Callable[[list], list]
    needs_steps: bool = False
    defaults: dict = field(default_factory=dict)


def _obj(required, **props):
    return {"type": "object", "required": list(required), "additionalProperties": False, "properties": props}


def _law(pmf: dict):
    from .gwtree.analytics import OffspringLaw

    return OffspringLaw({int(k): float(v) for k, v in pmf.items()})


def _beta(b):
    return math.inf if b == "inf" else float(b)


def _flags(rep) -> str:
    return ";".join(rep.flags)


def _gw_speed_units(cfg):
    return [(j, i) for j in range(len(cfg["params"]["pmfs"])) for i in range(len(cfg["params"]["betas"]))]


def _gw_speed_run(cfg, unit, seed):
    from .gwtree import tree_speed

    j, i = unit
    p, b = cfg["params"], cfg["budget"]
    beta = float(p["betas"][i])
    rep = tree_speed(_law(p["pmfs"][j]), beta, b["steps"], b["replicas"], seed)
    return [[p["labels"][j], beta, rep.estimate, rep.ci[0], rep.ci[1], b["steps"], _flags(rep)]]


def _gw_lattice_units(cfg):
    return [(i,) for i in range(len(cfg["params"]["lam"]))]


def _gw_lattice_run(cfg, unit, seed):
    from .estat import bootstrap_ci
    from .gwtree import lattice_diagnostic

    p, b = cfg["params"], cfg["budget"]
    lam = float(p["lam"][unit[0]])
    out = lattice_diagnostic(_law(p["pmf"]), float(p["beta"]), p["k_grid"], [lam], b["replicas"], seed)
    rows = []
    for k in p["k_grid"]:
        s = np.asarray(out["samples"][(lam, k)], dtype=float)
        rep = bootstrap_ci(s, np.median, n_boot=500)
        rows.append([lam, k, out["levels"][(lam, k)], rep.estimate, rep.ci[0], rep.ci[1], s.size])
    return rows


def _btm_aging_units(cfg):
    return [(i,) for i in range(len(cfg["params"]["ratios"]))]


def _btm_aging_run(cfg, unit, seed):
    from .trapmodel import aging_probability

    p, b = cfg["params"], cfg["budget"]
    r = float(p["ratios"][unit[0]])
    rep = aging_probability(float(p["alpha"]), _beta(p["beta"]), r, 1.0, float(p["t"]), b["replicas"], seed)
    return [[r, rep.estimate, rep.ci[0], rep.ci[1], rep.extra["arcsine"], _flags(rep)]]


def _single(cfg):
    return [(0,)]


def _btm_scaling_run(cfg, unit, seed):
    from .trapmodel import scaling_exponent_btm

    p, b = cfg["params"], cfg["budget"]
    rep = scaling_exponent_btm(float(p["alpha"]), _beta(p["beta"]), p["t_grid"], b["replicas"], seed)
    return [[float(p["alpha"]), rep.estimate, rep.ci[0], rep.ci[1], rep.extra["target"], _flags(rep)]]


def _rwre_speed_run(cfg, unit, seed):
    from .rwre1d import SiteLaw, rwre_speed

    p, b = cfg["params"], cfg["budget"]
    law = SiteLaw(tuple(p["omega"]), tuple(p["probs"]))
    rep = rwre_speed(law, b["steps"], b["replicas"], seed)
    return [[rep.estimate, rep.ci[0], rep.ci[1], b["steps"], _flags(rep)]]


def _perc_units(cfg):
    return [(i,) for i in range(len(cfg["params"]["lambdas"]))]


def _perc_speed_run(cfg, unit, seed):
    from .perc import speed_curve

    p, b = cfg["params"], cfg["budget"]
    lam = float(p["lambdas"][unit[0]])
    # speed_curve gives bias i the stream seed.child(i); a single-bias call uses child 0
    row = speed_curve(int(p["d"]), float(p["p"]), p["direction"], [lam], b["steps"], b["replicas"], seed,
                      transverse=p.get("transverse"))[0]
    return [[lam, row["v"], row["ci_lo"], row["ci_hi"], b["steps"], row["truncated"]]]


def _iic_aging_units(cfg):
    return [(i,) for i in range(len(cfg["params"]["pairs"]))]


def _iic_aging_run(cfg, unit, seed):
    from .critical import biased_walk_iic

    p, b = cfg["params"], cfg["budget"]
    a, bb = (float(x) for x in p["pairs"][unit[0]])
    res = biased_walk_iic(_law(p["pmf"]), float(p["beta"]), int(p["n"]), [(a, bb)], b["replicas"], seed)
    rep = res.aging[(a, bb)]
    return [[a, bb, rep.estimate, rep.ci[0], rep.ci[1], ";".join(res.flags + rep.flags)]]


def _iic_height_run(cfg, unit, seed):
    from .critical import critical_height_tail

    p, b = cfg["params"], cfg["budget"]
    r = critical_height_tail(_law(p["pmf"]), p["n_grid"], b["replicas"], seed)
    return [list(x) for x in zip(r["n"].tolist(), r["tail"].tolist(), r["stderr"].tolist(), r["scaled"].tolist(),
                                  r["scaled_lo"].tolist(), r["scaled_hi"].tolist())]


def _fig_speed(rows):
    return [(r["beta"], r["v"], r["series"], r["ci_lo"], r["ci_hi"]) for r in rows]


def _fig_lattice(rows):
    return [(r["k"], r["median"], f"lambda={r['lambda']}", r["ci_lo"], r["ci_hi"]) for r in rows]


def _fig_aging(rows):
    out = [(r["ratio"], r["empirical"], "empirical", r["ci_lo"], r["ci_hi"]) for r in rows]
    out += [(r["ratio"], r["arcsine"], "arcsine", r["arcsine"], r["arcsine"]) for r in rows]
    return out


def _fig_perc(rows):
    return [(r["lambda"], r["v"], "speed", r["ci_lo"], r["ci_hi"]) for r in rows]


def _fig_point(x, y, series):
    return lambda rows: [(r[x], r[y], series, r["ci_lo"], r["ci_hi"]) for r in rows]


def _fig_height(rows):
    return [(r["n"], r["scaled"], "n*tail", r["scaled_lo"], r["scaled_hi"]) for r in rows]


EXPERIMENTS: dict[tuple[str, str], Experiment] = {
    ("gwtree", "speed-curve"): Experiment(
        _obj(["betas"], pmf=_PMF, pmfs={"type": "array", "items": _PMF, "minItems": 1},
             labels={"type": "array", "items": {"type": "string"}},
             betas={"type": "array", "items": _POS, "minItems": 1}),
        ("series", "beta", "v", "ci_lo", "ci_hi", "n_steps", "flags"),
        _gw_speed_units, _gw_speed_run, _fig_speed, needs_steps=True,
    ),
    ("gwtree", "lattice"): Experiment(
        _obj(["pmf", "beta", "k_grid", "lam"], pmf=_PMF, beta=_POS,
             k_grid={"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
             lam={"type": "array", "items": _POS, "minItems": 1}),
        ("lambda", "k", "n", "median", "ci_lo", "ci_hi", "samples"),
        _gw_lattice_units, _gw_lattice_run, _fig_lattice,
    ),
    ("btm", "aging"): Experiment(
        _obj(["alpha", "t", "ratios"], alpha=_POS, beta=_BETA, t=_POS,
             ratios={"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}, "minItems": 1}),
        ("ratio", "empirical", "ci_lo", "ci_hi", "arcsine", "flags"),
        _btm_aging_units, _btm_aging_run, _fig_aging, defaults={"beta": "inf"},
    ),
    ("btm", "scaling"): Experiment(
        _obj(["alpha", "t_grid"], alpha=_POS, beta=_BETA,
             t_grid={"type": "array", "items": _POS, "minItems": 3}),
        ("alpha", "slope", "ci_lo", "ci_hi", "target", "flags"),
        _single, _btm_scaling_run, _fig_point("alpha", "slope", "slope"), defaults={"beta": "inf"},
    ),
    ("rwre1d", "speed"): Experiment(
        _obj(["omega", "probs"], omega={"type": "array", "items": _NUM, "minItems": 1},
             probs={"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}),
        ("v", "ci_lo", "ci_hi", "n_steps", "flags"),
        _single, _rwre_speed_run, lambda rows: [(r["n_steps"], r["v"], "speed", r["ci_lo"], r["ci_hi"]) for r in rows],
        needs_steps=True,
    ),
    ("perc", "speed-curve"): Experiment(
        _obj(["p", "lambdas"], d={"type": "integer", "minimum": 2}, p=_POS,
             direction={"type": "array", "items": _NUM, "minItems": 2},
             lambdas={"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
             transverse={"type": "integer", "minimum": 3}),
        ("lambda", "v", "ci_lo", "ci_hi", "n_steps", "truncated"),
        _perc_units, _perc_speed_run, _fig_perc, needs_steps=True, defaults={"d": 2, "direction": [1.0, 0.0]},
    ),
    ("iic", "aging"): Experiment(
        _obj(["pmf", "beta", "n", "pairs"], pmf=_PMF, beta=_POS, n={"type": "integer", "minimum": 1},
             pairs={"type": "array", "minItems": 1,
                    "items": {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2}}),
        ("a", "b", "estimate", "ci_lo", "ci_hi", "flags"),
        _iic_aging_units, _iic_aging_run, lambda rows: [(r["a"] / r["b"], r["estimate"], "aging", r["ci_lo"], r["ci_hi"]) for r in rows],
    ),
    ("iic", "height-tail"): Experiment(
        _obj(["pmf", "n_grid"], pmf=_PMF, n_grid={"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1}),
        ("n", "tail", "stderr", "scaled", "scaled_lo", "scaled_hi"),
        _single, _iic_height_run, _fig_height,
    ),
}

FIGURE_COLUMNS = ("x", "y", "series", "ci_lo", "ci_hi")


# -- config ------------------------------------------------------------------


def _check_pmf(pmf: dict, where: str) -> dict:
    s = math.fsum(float(v) for v in pmf.values())
    if abs(s - 1.0) > PMF_TOL:
        raise ConfigError(f"{where}: probabilities sum to {s!r}, not 1")
    return {str(int(k)): float(pmf[k]) for k in sorted(pmf, key=int)}


def resolve_config(raw: dict) -> dict:
    """Validate ``raw`` and return the fully resolved config."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"config: {e.message}") from None
    key = (raw["model"], raw["experiment"])
    if key not in EXPERIMENTS:
        known = ", ".join(f"{m}/{x}" for m, x in EXPERIMENTS)
        raise ConfigError(f"unknown experiment {key[0]}/{key[1]} (known: {known})")
    exp = EXPERIMENTS[key]
    cfg = copy.deepcopy(raw)
    params = {**exp.defaults, **cfg["params"]}
    try:
        jsonschema.validate(params, exp.params)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"params: {e.message}") from None
    if exp.needs_steps and "steps" not in cfg["budget"]:
        raise ConfigError("budget: 'steps' is required for this experiment")
    if "pmf" in params:
        params["pmf"] = _check_pmf(params["pmf"], "params.pmf")
    if key == ("gwtree", "speed-curve"):
        pmfs = params.pop("pmfs", None) or ([params.pop("pmf")] if "pmf" in params else None)
        if not pmfs:
            raise ConfigError("params: give 'pmf' or 'pmfs'")
        params.pop("pmf", None)
        params["pmfs"] = [_check_pmf(q, f"params.pmfs[{i}]") for i, q in enumerate(pmfs)]
        labels = params.get("labels") or [f"pmf{i}" for i in range(len(pmfs))]
        if len(labels) != len(pmfs):
            raise ConfigError("params: one label per pmf")
        params["labels"] = labels
    if key == ("rwre1d", "speed"):
        if len(params["omega"]) != len(params["probs"]):
            raise ConfigError("params: omega and probs differ in length")
        params["probs"] = [float(v) for v in params["probs"]]
        if abs(math.fsum(params["probs"]) - 1) > PMF_TOL:
            raise ConfigError("params.probs: probabilities do not sum to 1")
    cfg["params"] = params
    cfg.setdefault("output", "")
    return cfg


def config_hash(cfg: dict) -> str:
    """Hash of everything that determines results (not output dir or workers)."""
    core = {k: v for k, v in cfg.items() if k != "output"}
    core["budget"] = {k: v for k, v in cfg["budget"].items() if k not in ("workers", "max_seconds")}
    return hashlib.sha256(_canonical(core).encode()).hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


# -- running -----------------------------------------------------------------


def _run_unit(job):
    key, cfg, index, unit = job
    seed = SeedTree(cfg["seed"], (index,))
    return EXPERIMENTS[key].run(cfg, unit, seed)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def default_workers() -> int:
    v = os.environ.get(WORKERS_ENV, "").strip()
    if not v:
        return 1
    try:
        n = int(v)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {v!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {v!r}")
    return n


@dataclass
class RunResult:
    out_dir: Path
    manifest: dict
    partial: bool

    @property
    def exit_code(self) -> int:
        return EXIT_PARTIAL if self.partial else EXIT_OK


def run(cfg: dict, out_dir=None, workers: Optional[int] = None) -> RunResult:
    """Run a resolved config; returns the output directory and manifest."""
    key = (cfg["model"], cfg["experiment"])
    exp = EXPERIMENTS[key]
    h = config_hash(cfg)
    out = Path(out_dir or cfg.get("output") or f"runs/{h[:12]}")
    out.mkdir(parents=True, exist_ok=True)
    workers = workers or cfg["budget"].get("workers") or default_workers()
    limit = cfg["budget"].get("max_seconds")
    units = exp.units(cfg)
    jobs = [(key, cfg, i, u) for i, u in enumerate(units)]

    t0 = time.perf_counter()
    done: list = []
    if workers == 1:
        for job in jobs:
            if limit is not None and done and time.perf_counter() - t0 > limit:
                break
            done.append(_run_unit(job))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            # map yields in submission order, which fixes the merge order
            for res in pool.map(_run_unit, jobs):
                done.append(res)
                if limit is not None and time.perf_counter() - t0 > limit and len(done) < len(jobs):
                    pool.shutdown(wait=False, cancel_futures=True)
                    break
    wall = time.perf_counter() - t0

    rows = [r for res in done for r in res]
    flag_col = exp.columns.index("flags") if "flags" in exp.columns else None
    flagged = flag_col is not None and any("partial" in str(r[flag_col]) for r in rows)
    partial = len(done) < len(jobs) or flagged

    (out / "config.json").write_text(_dump(cfg))
    (out / "results.csv").write_text(_csv_text(exp.columns, rows))
    (out / "results.json").write_text(_dump({
        "model": cfg["model"],
        "experiment": cfg["experiment"],
        "config_hash": h,
        "columns": list(exp.columns),
        "rows": [[x.item() if isinstance(x, np.generic) else x for x in r] for r in rows],
        "units_done": len(done),
        "units_total": len(jobs),
        "partial": partial,
    }))
    manifest = {
        "config_hash": h,
        "version": __version__,
        "wall_clock_s": wall,
        "workers": workers,
        "config": cfg,
        # replica r of unit i draws from SeedTree(seed, (i, r, ...))
        "seed_paths": [[cfg["seed"], i] for i in range(len(done))],
        "digests": {name: _sha(out / name) for name in ("results.csv", "results.json")},
        "partial": partial,
    }
    (out / "manifest.json").write_text(_dump(manifest))
    return RunResult(out, manifest, partial)


def load_config(path) -> tuple[dict, Optional[dict]]:
    """Read a config or a manifest; returns (resolved config, manifest or None)."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read {path}: {e}") from None
    if isinstance(doc, dict) and "config_hash" in doc and "config" in doc:
        cfg = resolve_config(doc["config"])
        if config_hash(cfg) != doc["config_hash"]:
            raise ConfigError("manifest config does not match its hash")
        return cfg, doc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return resolve_config(doc), None


# -- figure ------------------------------------------------------------------


def figure(run_dir) -> Path:
    """Write ``figure.csv`` (x, y, series, ci_lo, ci_hi) for a finished run."""
    d = Path(run_dir)
    try:
        res = json.loads((d / "results.json").read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"no results in {d}: {e}") from None
    key = (res.get("model"), res.get("experiment"))
    if key not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {key}")
    cols = res.get("columns") or []
    need = set(EXPERIMENTS[key].columns)
    missing = need - set(cols)
    if missing:
        raise ConfigError(f"results lack columns: {', '.join(sorted(missing))}")
    rows = [dict(zip(cols, r)) for r in res["rows"]]
    try:
        tidy = EXPERIMENTS[key].figure(rows)
    except KeyError as e:
        raise ConfigError(f"results lack column {e}") from None
    path = d / "figure.csv"
    path.write_text(_csv_text(FIGURE_COLUMNS, tidy))
    return path


# -- analytics ---------------------------------------------------------------


def parse_pmf(tokens) -> dict[int, float]:
    """``["0:0.1", "2:0.9"]`` or ``["0:0.1,2:0.9"]`` to {0: 0.1, 2: 0.9}."""
    pmf: dict[int, float] = {}
    for tok in tokens:
        for part in filter(None, tok.split(",")):
            try:
                k, v = part.split(":")
                k, v = int(k), float(v)
            except ValueError:
                raise ConfigError(f"bad pmf atom {part!r}; expected k:p") from None
            if k < 0 or v < 0:
                raise ConfigError(f"bad pmf atom {part!r}")
            pmf[k] = pmf.get(k, 0.0) + v
    if not pmf:
        raise ConfigError("empty pmf")
    if abs(math.fsum(pmf.values()) - 1) > PMF_TOL:
        raise ConfigError("pmf does not sum to 1")
    return pmf


def analytics(pmf: dict, beta: Optional[float] = None) -> dict:
    from .gwtree.analytics import GWAnalytics, OffspringLaw

    law = OffspringLaw(pmf)
    out = {"m": float(law.mean)}
    if not law.supercritical:
        out["q"] = 1.0
        return out
    a = GWAnalytics.of(law)
    out.update(q=a.q, beta_c=a.beta_c, sigma2=a.sigma2,
               harris_g={k: float(v) for k, v in enumerate(a.g) if v > 0})
    out["harris_h"] = None if a.h is None else {k: float(v) for k, v in enumerate(a.h) if v > 0}
    if beta is not None:
        out["beta"] = beta
        out["alpha"] = a.alpha(beta) if beta > 1 else None
    return out


# -- selftest ----------------------------------------------------------------


def _selftest_checks():
    from .gwtree.analytics import GWAnalytics, OffspringLaw
    from .randkit import TailSpec, arcsine_cdf, normalizing_sequences
    from .rwre1d import SiteLaw, kks_alpha

    trappy = GWAnalytics.of(OffspringLaw({0: 0.1, 2: 0.9}))
    sparse = GWAnalytics.of(OffspringLaw({0: 0.25, 1: 1 / 3, 2: 5 / 12}))
    near = lambda x, y, tol=1e-12: abs(x - y) <= tol
    return [
        ("extinction 1/9", lambda: near(trappy.q, 1 / 9)),
        ("critical bias 5", lambda: near(trappy.beta_c, 5.0, 1e-9)),
        ("harris g", lambda: np.allclose(trappy.g, [0, 0.2, 0.8], atol=1e-12)),
        ("harris h", lambda: np.allclose(trappy.h, [0.9, 0, 0.1], atol=1e-12)),
        ("extinction 3/5", lambda: near(sparse.q, 0.6)),
        ("critical bias 6/5", lambda: near(sparse.beta_c, 1.2, 1e-9)),
        ("sigma2 binary", lambda: near(GWAnalytics.of(OffspringLaw({2: 1.0})).sigma2, 2.0)),
        ("sigma2 one-three", lambda: near(GWAnalytics.of(OffspringLaw({1: 0.5, 3: 0.5})).sigma2, 4 / 3)),
        ("kks golden", lambda: near(kks_alpha(SiteLaw.from_rho([2.0, 0.25], [0.5, 0.5])),
                                   math.log((1 + math.sqrt(5)) / 2) / math.log(2), 1e-9)),
        ("normalizing 1.5", lambda: np.allclose(normalizing_sequences(TailSpec(1.5, 1.0), 8), (4.0, 12.0))),
        ("arcsine half", lambda: near(float(arcsine_cdf(0.5, 0.5)), 0.5, 1e-10)),
    ]


def selftest(out=sys.stdout) -> bool:
    ok = True
    for name, check in _selftest_checks():
        try:
            good = bool(check())
        except Exception as e:  # report and keep going
            good = False
            name = f"{name} ({type(e).__name__}: {e})"
        ok &= good
        print(f"{'ok  ' if good else 'FAIL'} {name}", file=out)
    return ok


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="traplab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"traplab {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a config or re-run a manifest")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.add_argument("--workers", type=int, help=f"worker processes (default ${WORKERS_ENV} or 1)")
    f = sub.add_parser("figure", help="write plot-ready figure.csv for a run directory")
    f.add_argument("run_dir")
    a = sub.add_parser("analytics", help="exact quantities of an offspring law, atoms as k:p")
    a.add_argument("pmf", nargs="+")
    a.add_argument("--beta", type=float)
    sub.add_parser("selftest", help="check the exact example values")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        if args.cmd == "run":
            if args.workers is not None and args.workers < 1:
                raise ConfigError("--workers must be positive")
            cfg, manifest = load_config(args.config)
            res = run(cfg, args.out, args.workers)
            print(res.out_dir)
            if manifest is not None:
                same = res.manifest["digests"] == manifest["digests"]
                if not res.partial and not manifest.get("partial"):
                    print("reproduced" if same else "MISMATCH: result digests differ from the manifest")
                    if not same:
                        return EXIT_FAIL
            if res.partial:
                print("partial results (budget exhausted or capped replicas)", file=sys.stderr)
            return res.exit_code
        if args.cmd == "figure":
            print(figure(args.run_dir))
            return EXIT_OK
        if args.cmd == "analytics":
            print(_dump(analytics(parse_pmf(args.pmf), args.beta)), end="")
            return EXIT_OK
        return EXIT_OK if selftest() else EXIT_FAIL
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        # invalid model parameters surface from the simulators
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
