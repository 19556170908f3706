"""Config-driven experiment pipeline.

One YAML config fully determines a run: load -> split -> featurize ->
pick mix coefficients on validation -> grid-search solver hyperparameters
on validation -> refit the winner -> evaluate test scenarios -> write
reports, model artifact, and a run manifest. Reruns with the same config
and seed are byte-identical except for recorded wall times (the grid
trace and the model sidecar carry timings by design).
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import yaml

from . import alignment, data, evaluation, features, solvers
from .errors import ConfigError, SingularMatrixError, SolverError, StageError

log = logging.getLogger(__name__)

WORKERS_ENV = "ALIGNREC_WORKERS"

_SOLVERS = ("ease", "mslim", "itemknn")
_GRID_KEYS = {
    "ease": ("lambda0", "lambda1", "alpha"),
    "mslim": ("w1", "lambda1", "gamma1", "alpha"),
    "itemknn": ("alpha",),
}
_SELECT_K = 10


def _require(cfg, key, where):
    if key not in cfg:
        raise ConfigError(f"missing required key {where}.{key}" if where else
                          f"missing required key {key}")
    return cfg[key]


def load_config(path):
    """Parse and validate a YAML experiment config.

    Relative paths inside the file resolve against the file's directory.
    Raises ConfigError before any compute when something is off.
    """
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            cfg = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: not valid YAML: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    if "seed" not in cfg:
        raise ConfigError(f"{path}: a seed is required")
    cfg["seed"] = int(cfg["seed"])

    dat = _require(cfg, "data", "")
    dat["interactions"] = resolve(_require(dat, "interactions", "data"))
    if not os.path.exists(dat["interactions"]):
        raise ConfigError(f"interactions file not found: {dat['interactions']}")
    dat.setdefault("format", "csv")
    dat.setdefault("binarize_threshold", 0.5)

    spl = cfg.setdefault("split", {})
    protocol = spl.setdefault("protocol", "cold")
    if protocol not in ("cold", "warm"):
        raise ConfigError(f"split.protocol must be cold or warm, got {protocol!r}")
    spl.setdefault("cold_fraction", 0.20)
    spl.setdefault("fractions", [0.80, 0.10, 0.10])
    spl.setdefault("min_user_clicks", 20)
    spl.setdefault("negatives", 100)

    specs = []
    for i, a in enumerate(cfg.get("attributes", [])):
        for key in ("name", "kind"):
            if key not in a:
                raise ConfigError(f"attributes[{i}] is missing {key!r}")
        spec = features.AttributeSpec(
            name=a["name"], kind=a["kind"],
            path=resolve(_require(a, "path", f"attributes[{i}]")),
            vocab_size=int(a.get("vocab_size", 1000)),
        )
        if not os.path.exists(spec.path):
            raise ConfigError(f"attribute {spec.name!r}: file not found: {spec.path}")
        specs.append(spec)
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate attribute names: {names}")
    cfg["attributes"] = specs

    ali = cfg.setdefault("alignment", {})
    ali.setdefault("delta", 0.0)
    ali.setdefault("alpha", 1.0)
    ali.setdefault("beta", 0.0)
    ali.setdefault("percentile", 10.0)
    ali.setdefault("decay", "step_linear")
    n_attr = len(specs)
    mu_grid = []
    for i, point in enumerate(ali.get("mu_grid", [])):
        try:
            mu_grid.append(alignment.MixCoefficients.from_dict(point))
        except (KeyError, ValueError) as e:
            raise ConfigError(f"alignment.mu_grid[{i}]: {e}") from e
        if mu_grid[-1].n_attributes != n_attr:
            raise ConfigError(
                f"alignment.mu_grid[{i}] has {mu_grid[-1].n_attributes} "
                f"first-order coefficients for {n_attr} attributes"
            )
    if not mu_grid:
        if n_attr == 0:
            raise ConfigError("at least one attribute is required")
        mu_grid = [alignment.default_mix(n_attr)]
    ali["mu_grid"] = mu_grid

    sol = cfg.setdefault("solver", {})
    name = sol.setdefault("name", "ease")
    if name not in _SOLVERS:
        raise ConfigError(f"solver.name must be one of {_SOLVERS}, got {name!r}")
    grid = sol.setdefault("grid", {})
    if not isinstance(grid, dict):
        raise ConfigError("solver.grid must map parameter names to value lists")
    for key, values in grid.items():
        if key not in _GRID_KEYS[name]:
            raise ConfigError(
                f"solver.grid key {key!r} not valid for {name} "
                f"(valid: {_GRID_KEYS[name]})"
            )
        if not isinstance(values, list) or not values:
            raise ConfigError(f"solver.grid.{key} must be a nonempty list")

    ev = cfg.setdefault("evaluation", {})
    ev.setdefault("metrics", ["hr", "ndcg"])
    ev.setdefault("ks", [10])
    default_scenarios = ["cold", "warm", "all"] if protocol == "cold" else ["leave_one_out"]
    ev.setdefault("scenarios", default_scenarios)
    for s in ev["scenarios"]:
        if s not in evaluation.SCENARIOS:
            raise ConfigError(f"unknown scenario {s!r}")
        if (s == "leave_one_out") != (protocol == "warm"):
            raise ConfigError(f"scenario {s!r} does not match protocol {protocol!r}")
    ev.setdefault("resamples", 500)
    ev.setdefault("fraction", 0.20)

    cfg.setdefault("workers", 1)
    cfg.setdefault("output", None)
    cfg["_path"] = path
    return cfg


def build_grid(solver_cfg):
    """Cross-product of the declared value lists, in declaration order."""
    grid = solver_cfg.get("grid", {})
    if not grid:
        return [{}]
    keys = list(grid.keys())
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def grid_search(points, evaluate_point, workers=1):
    """Evaluate every grid point and pick the best on validation.

    evaluate_point(point) must return {"ndcg@10": ..., "hr@10": ...}.
    Selection maximizes (ndcg@10, hr@10) lexicographically; exact ties go
    to the earlier point. Points that raise a numerical error are recorded
    as failed and skipped; if everything fails, the errors are aggregated.
    """
    points = list(points)
    if not points:
        raise ConfigError("empty hyperparameter grid")

    def run_one(idx):
        t0 = time.perf_counter()
        row = {"index": idx, "params": points[idx], "wall_time_s": None,
               "status": "ok", "error": "", "metrics": {}}
        try:
            row["metrics"] = evaluate_point(points[idx])
        except (SolverError, SingularMatrixError, np.linalg.LinAlgError) as e:
            row["status"] = "failed"
            row["error"] = str(e)
        row["wall_time_s"] = time.perf_counter() - t0
        return row

    if workers <= 1:
        trace = [run_one(i) for i in range(len(points))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trace = list(pool.map(run_one, range(len(points))))

    best = None
    for row in trace:
        if row["status"] != "ok":
            continue
        key = (row["metrics"]["ndcg@10"], row["metrics"]["hr@10"])
        if best is None or key > best[0]:
            best = (key, row["index"])
    if best is None:
        details = "; ".join(f"point {r['index']} {r['params']}: {r['error']}" for r in trace)
        raise SolverError(f"every grid point failed: {details}")
    return points[best[1]], best[1], trace


def write_trace_csv(trace, path):
    param_keys = []
    for row in trace:
        for k in row["params"]:
            if k not in param_keys:
                param_keys.append(k)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index"] + param_keys + ["ndcg@10", "hr@10", "wall_time_s", "status", "error"])
        for row in trace:
            m = row["metrics"]
            w.writerow(
                [row["index"]]
                + [repr(row["params"].get(k, "")) for k in param_keys]
                + [repr(m.get("ndcg@10", "")), repr(m.get("hr@10", "")),
                   f"{row['wall_time_s']:.6f}", row["status"], row["error"]]
            )


class _Pipeline:
    """Shared state for one experiment run."""

    def __init__(self, cfg, seed=None, workers=None, output=None):
        self.cfg = cfg
        self.seed = cfg["seed"] if seed is None else int(seed)
        env = os.environ.get(WORKERS_ENV)
        if workers is not None:
            self.workers = int(workers)
        elif env is not None:
            self.workers = int(env)
        else:
            self.workers = int(cfg.get("workers") or 1)
        out = output or cfg.get("output")
        if not out:
            raise ConfigError("an output directory is required (--output or config output)")
        self.output = out
        self.protocol = cfg["split"]["protocol"]

    # stage wrappers -----------------------------------------------------
    def _stage(self, name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as e:
            raise StageError(name, self.cfg["_path"], e) from e

    def load(self):
        dat = self.cfg["data"]
        self.dataset = self._stage(
            "load", data.load_interactions, dat["interactions"],
            format=dat["format"], binarize_threshold=dat["binarize_threshold"],
        )
        return self.dataset

    def split(self):
        spl = self.cfg["split"]
        if self.protocol == "cold":
            self.split_ = self._stage(
                "split", data.make_cold_split, self.dataset,
                cold_fraction=spl["cold_fraction"],
                warm_fractions=tuple(spl["fractions"]), seed=self.seed,
            )
        else:
            self.split_ = self._stage(
                "split", data.make_warm_split, self.dataset,
                min_user_clicks=spl["min_user_clicks"],
                negatives=spl["negatives"], seed=self.seed,
            )
        return self.split_

    def featurize(self):
        def build():
            fs = features.build_feature_set(self.cfg["attributes"], self.dataset.item_index)
            delta = self.cfg["alignment"]["delta"]
            sims = [alignment.smoothed_cosine(b, delta) for b in fs.blocks]
            return fs, sims

        self.features, self.sims = self._stage("featurize", build)
        return self.features

    def _align_cfg(self, alpha):
        a = self.cfg["alignment"]
        return alignment.AlignmentConfig(
            delta=a["delta"], alpha=alpha, beta=a["beta"],
            percentile=a["percentile"], decay=a["decay"],
        )

    def fit_mix(self):
        grid = self.cfg["alignment"]["mu_grid"]

        def pick():
            if len(grid) == 1:
                return grid[0]
            if self.protocol == "cold":
                return alignment.fit_mix_coefficients(
                    self.sims, self.split_.train.X, self.split_, grid, k=_SELECT_K
                )
            return self._fit_mix_warm(grid)

        self.mu = self._stage("fit-mix", pick)
        self.G = self._stage("fit-mix", alignment.mix_similarities, self.sims, self.mu)
        return self.mu

    def _fit_mix_warm(self, grid):
        inner = self._inner_split()
        best = None
        for idx, mu in enumerate(grid):
            g = alignment.mix_similarities(self.sims, mu)
            scores = np.asarray(inner.train.X @ g)
            rep = evaluation.evaluate_scenario(
                scores, inner, "leave_one_out", ks=(_SELECT_K,), with_ci=False
            )
            key = (rep.metric("ndcg", _SELECT_K).mean, -mu.nnz)
            if best is None or key > best[0]:
                best = (key, idx, mu)
        return best[2]

    def _inner_split(self):
        if not hasattr(self, "_inner"):
            spl = self.cfg["split"]
            self._inner = data.make_warm_split(
                self.split_.train,
                min_user_clicks=max(1, spl["min_user_clicks"] - 1),
                negatives=spl["negatives"], seed=self.seed + 1,
            )
        return self._inner

    # solver fitting -----------------------------------------------------
    def _decay_for(self, X, acfg):
        # depends on beta/percentile/decay but not alpha: one vector per X
        if not hasattr(self, "_decay_cache"):
            self._decay_cache = {}
        key = id(X)
        if key not in self._decay_cache:
            self._decay_cache[key] = alignment.popularity_regularizer(X, acfg)
        return self._decay_cache[key]

    def _fit_point(self, X, point):
        name = self.cfg["solver"]["name"]
        alpha = point.get("alpha", self.cfg["alignment"]["alpha"])
        acfg = self._align_cfg(alpha)
        B = alignment.align(X, self.G, acfg, d=self._decay_for(X, acfg))
        if name == "itemknn":
            return solvers.ItemModel(
                theta=self.G, solver="itemknn",
                config={"alpha": alpha, "delta": acfg.delta},
                diagnostics={"n_items": int(X.shape[1]), "n_users": int(X.shape[0])},
            )
        if name == "ease":
            cfg = solvers.EaseConfig(
                lambda0=point.get("lambda0", 0.0),
                lambda1=point.get("lambda1", 1.0),
            )
            return solvers.fit_ease(X, cfg, F=self.features, B=B)
        cfg = solvers.MslimConfig(
            w1=point.get("w1", 0.5),
            lambda1=point.get("lambda1", 0.0),
            gamma1=point.get("gamma1", 0.0),
        )
        return solvers.fit_mslim(X, cfg, B=B, workers=1)

    def _validation_metrics(self, point):
        if self.protocol == "cold":
            model = self._fit_point(self.split_.train.X, point)
            scores = solvers.predict(model, self.split_.train.X)
            scenario = "cold" if len(self.split_.cold_val) else "all"
            rep = evaluation.evaluate_scenario(
                scores, self.split_, scenario, ks=(_SELECT_K,),
                use="val", with_ci=False,
            )
        else:
            inner = self._inner_split()
            model = self._fit_point(inner.train.X, point)
            scores = solvers.predict(model, inner.train.X)
            rep = evaluation.evaluate_scenario(
                scores, inner, "leave_one_out", ks=(_SELECT_K,), with_ci=False
            )
        return {
            "ndcg@10": rep.metric("ndcg", _SELECT_K).mean,
            "hr@10": rep.metric("hr", _SELECT_K).mean,
        }

    def search(self):
        points = build_grid(self.cfg["solver"])
        self.best_point, self.best_index, self.trace = self._stage(
            "grid-search", grid_search, points, self._validation_metrics,
            workers=self.workers,
        )
        return self.best_point

    def refit(self):
        def fit():
            model = self._fit_point(self.split_.train.X, self.best_point)
            model.item_ids = self.dataset.item_ids
            return model

        self.model = self._stage("refit", fit)
        return self.model

    def evaluate(self):
        ev = self.cfg["evaluation"]

        def run():
            scores = solvers.predict(self.model, self.split_.train.X)
            reports = {}
            for scenario in ev["scenarios"]:
                reports[scenario] = evaluation.evaluate_scenario(
                    scores, self.split_, scenario, ks=tuple(ev["ks"]),
                    metrics=tuple(ev["metrics"]), use="test", with_ci=True,
                    resamples=ev["resamples"], fraction=ev["fraction"],
                    seed=self.seed,
                )
            return reports

        self.reports = self._stage("evaluate", run)
        return self.reports


def _write_reports(reports, outdir):
    paths = {}
    for scenario, rep in reports.items():
        j = os.path.join(outdir, f"report_{scenario}.json")
        t = os.path.join(outdir, f"report_{scenario}.txt")
        with open(j, "w", encoding="utf-8") as fh:
            fh.write(rep.to_json())
        with open(t, "w", encoding="utf-8") as fh:
            fh.write(rep.to_text())
        paths[scenario] = j
    return paths


def _write_manifest(pipe, outdir, report_paths):
    manifest = {
        "config": os.path.abspath(pipe.cfg["_path"]),
        "protocol": pipe.protocol,
        "seed": pipe.seed,
        "solver": pipe.cfg["solver"]["name"],
        "mix": pipe.mu.to_dict(),
        "alignment": {k: pipe.cfg["alignment"][k]
                      for k in ("delta", "alpha", "beta", "percentile", "decay")},
        "selected": pipe.best_point,
        "selected_index": pipe.best_index,
        "grid_size": len(pipe.trace),
        "files": {
            "model": "model.bin",
            "trace": "grid_trace.csv",
            "splits": "splits",
            "reports": {s: os.path.basename(p) for s, p in report_paths.items()},
        },
    }
    with open(os.path.join(outdir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _mark_incomplete(outdir):
    os.makedirs(outdir, exist_ok=True)
    marker = os.path.join(outdir, "INCOMPLETE")
    with open(marker, "w", encoding="utf-8") as fh:
        fh.write("run in progress or failed; outputs may be partial\n")
    return marker


def _save_split(pipe, outdir):
    save = data.save_cold_split if pipe.protocol == "cold" else data.save_warm_split
    pipe._stage("persist-split", save, pipe.split_, os.path.join(outdir, "splits"))


def run_split(config_path, seed=None, output=None):
    """`split` verb: build and persist the split only."""
    cfg = load_config(config_path)
    pipe = _Pipeline(cfg, seed=seed, output=output)
    os.makedirs(pipe.output, exist_ok=True)
    pipe.load()
    pipe.split()
    _save_split(pipe, pipe.output)
    return os.path.join(pipe.output, "splits")


def run_featurize(config_path, output=None):
    """`featurize` verb: encode every attribute and persist the blocks."""
    cfg = load_config(config_path)
    pipe = _Pipeline(cfg, output=output)
    pipe.load()
    pipe.featurize()
    outdir = os.path.join(pipe.output, "features")
    os.makedirs(outdir, exist_ok=True)
    for block in pipe.features.blocks:
        pipe._stage("persist-features", features.save_block, block,
                    os.path.join(outdir, block.attribute))
    return outdir


def run_fit(config_path, seed=None, workers=None, output=None):
    """`fit` verb: split, featurize, tune, refit; no test evaluation."""
    cfg = load_config(config_path)
    pipe = _Pipeline(cfg, seed=seed, workers=workers, output=output)
    marker = _mark_incomplete(pipe.output)
    pipe.load()
    pipe.split()
    _save_split(pipe, pipe.output)
    pipe.featurize()
    pipe.fit_mix()
    pipe.search()
    write_trace_csv(pipe.trace, os.path.join(pipe.output, "grid_trace.csv"))
    pipe.refit()
    pipe._stage("persist-model", solvers.save_model, pipe.model,
                os.path.join(pipe.output, "model.bin"))
    _write_manifest(pipe, pipe.output, {})
    os.remove(marker)
    return pipe.output


def run_evaluate(config_path, output=None):
    """`evaluate` verb: score a persisted model on the persisted split."""
    cfg = load_config(config_path)
    pipe = _Pipeline(cfg, output=output)
    split_dir = os.path.join(pipe.output, "splits")
    model_path = os.path.join(pipe.output, "model.bin")
    pipe.split_ = pipe._stage("load-split", data.load_split, split_dir)
    pipe.model = pipe._stage("load-model", solvers.load_model, model_path)
    pipe.reports = None
    reports = pipe._stage("evaluate", _evaluate_loaded, pipe)
    return _write_reports(reports, pipe.output)


def _evaluate_loaded(pipe):
    ev = pipe.cfg["evaluation"]
    scores = solvers.predict(pipe.model, pipe.split_.train.X)
    reports = {}
    for scenario in ev["scenarios"]:
        reports[scenario] = evaluation.evaluate_scenario(
            scores, pipe.split_, scenario, ks=tuple(ev["ks"]),
            metrics=tuple(ev["metrics"]), use="test", with_ci=True,
            resamples=ev["resamples"], fraction=ev["fraction"], seed=pipe.seed,
        )
    return reports


def run_experiment(config_path, seed=None, workers=None, output=None):
    """End-to-end run; returns the output directory path.

    Writes splits/, model.bin(+.json), grid_trace.csv, report_*.json/.txt,
    and manifest.json. An INCOMPLETE marker exists while the run is in
    flight or after a failure.
    """
    cfg = load_config(config_path)
    pipe = _Pipeline(cfg, seed=seed, workers=workers, output=output)
    outdir = pipe.output
    marker = _mark_incomplete(outdir)

    pipe.load()
    pipe.split()
    _save_split(pipe, outdir)
    pipe.featurize()
    pipe.fit_mix()
    pipe.search()
    write_trace_csv(pipe.trace, os.path.join(outdir, "grid_trace.csv"))
    pipe.refit()
    pipe._stage("persist-model", solvers.save_model, pipe.model,
                os.path.join(outdir, "model.bin"))
    reports = pipe.evaluate()
    report_paths = _write_reports(reports, outdir)
    _write_manifest(pipe, outdir, report_paths)
    os.remove(marker)
    return outdir


def compare_reports(paths):
    """Human lift table across report JSON files.

    With exactly two reports the last row shows the percent change of the
    second over the first, per metric column.
    """
    rows = []
    for p in paths:
        with open(p, "r", encoding="utf-8") as fh:
            rows.append((p, json.load(fh)))
    if not rows:
        raise ValueError("no reports given")
    columns = [(m["name"], m["k"]) for m in rows[0][1]["metrics"]]
    width = max(len(p) for p, _ in rows + [("lift", None)]) + 2
    head = "report".ljust(width) + "".join(f"{n}@{k}".rjust(12) for n, k in columns)
    lines = [head, "-" * len(head)]

    def cell(rep, name, k):
        for m in rep["metrics"]:
            if m["name"] == name and m["k"] == k:
                return m["mean"]
        return None

    for p, rep in rows:
        vals = [cell(rep, n, k) for n, k in columns]
        lines.append(p.ljust(width) + "".join(
            f"{v:12.4f}" if v is not None else f"{'-':>12}" for v in vals
        ))
    if len(rows) == 2:
        cells = []
        for n, k in columns:
            a, b = cell(rows[0][1], n, k), cell(rows[1][1], n, k)
            if a in (None, 0) or b is None:
                cells.append(f"{'n/a':>12}")
            else:
                cells.append(f"{100.0 * (b - a) / a:+11.1f}%")
        lines.append("lift".ljust(width) + "".join(cells))
    return "\n".join(lines) + "\n"
