"""Command-line entry point: experiment specs, results files, plots and checks.

Subcommands::

    seqident run SPEC         simulate every (rule, truth) cell, write CSV + JSON + SVG
    seqident calibrate SPEC   calibrate thresholds and print them as a TOML snippet
    seqident plot CSV...      expected stopping time against m, one panel per file
    seqident verify [SPEC]    allocation property sweep and rule-reduction checks

SPEC is a TOML file or the name of a bundled spec (``fig1_homogeneous``,
``fig1_heterogeneous``).  Source indices in specs and results are 1-based.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .engine import (
    DEFAULT_CHUNK,
    DEFAULT_HORIZON,
    CalibrationError,
    CellSummary,
    calibrate_thresholds,
    run_experiment,
)
from .model import ConfigurationError, GroundTruth, ModelError, ProblemConfig, prefix_truths, split_means
from .rules import RuleError, RuleKind, Thresholds, compute_thresholds

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SCHEMA_VERSION = 1
DEFAULT_SEED = 0
FORMAT_TAG = "seqident-results"
HEADER = ("rule", "truth", "m", "metric", "value")
INT_METRICS = frozenset({"trials", "truncated", "fp_count", "fn_count"})

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_ENGINE = 0, 1, 2, 3


class SpecError(ValueError):
    """Unreadable or invalid experiment spec."""


# --------------------------------------------------------------------------
# experiment spec
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    config: ProblemConfig
    means: tuple[float, ...]
    variance: float
    truths: tuple[frozenset, ...]
    rules: tuple[str, ...]
    thresholds_mode: str = "analytic"
    explicit_thresholds: dict = field(default_factory=dict)  # rule -> Thresholds
    trials: int = 10_000
    seed: int = DEFAULT_SEED
    seed_defaulted: bool = False
    horizon: int = DEFAULT_HORIZON
    chunk_size: int = DEFAULT_CHUNK
    calibration_trials: int = 10_000
    calibration_seed: int | None = None
    calibration_grid: int = 200
    probe_horizon: int = 0
    probe_trials: int = 0
    output_dir: str = "results"

    @property
    def cal_seed(self) -> int:
        # distinct from the experiment seed so thresholds are not tuned on the reported trajectories
        return self.seed + 1 if self.calibration_seed is None else self.calibration_seed

    def resolved(self) -> dict:
        """Canonical description; enough to reproduce the run exactly."""
        cfg = self.config
        return {
            "name": self.name,
            "problem": {"num_sources": cfg.num_sources, "lower_bound": cfg.lower_bound,
                        "upper_bound": cfg.upper_bound, "budget": cfg.budget, "alpha": cfg.alpha,
                        "beta": cfg.beta, "r": cfg.r},
            "sources": {"means": list(self.means), "variance": self.variance},
            "overrides": [{"subset": sorted(i + 1 for i in a), "n_hat": nh, "n_check": nc}
                          for a, nh, nc in cfg.budget_overrides],
            "experiment": {
                "truths": [sorted(i + 1 for i in t) for t in self.truths],
                "rules": list(self.rules),
                "thresholds": self.thresholds_mode,
                "trials": self.trials, "seed": self.seed, "horizon": self.horizon,
                "chunk_size": self.chunk_size,
                "probe_horizon": self.probe_horizon, "probe_trials": self.probe_trials,
            },
            "calibration": {"trials": self.calibration_trials, "seed": self.cal_seed,
                            "grid": self.calibration_grid},
            "thresholds": {r: t.as_dict() for r, t in sorted(self.explicit_thresholds.items())},
        }

    def spec_hash(self) -> str:
        text = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def replace(self, **changes) -> "ExperimentSpec":
        changes = {k: v for k, v in changes.items() if v is not None}
        if "seed" in changes:
            changes["seed_defaulted"] = False
        return dataclasses.replace(self, **changes)


def bundled_specs() -> list[str]:
    root = resources.files("seqident") / "specs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def resolve_spec_path(ref: str) -> tuple[str, str]:
    """Return ``(label, text)`` for a spec path or a bundled spec name."""
    path = Path(ref)
    if path.is_file():
        return str(path), path.read_text()
    stem = path.name.split(".")[0]
    if stem in bundled_specs():
        res = resources.files("seqident") / "specs" / f"{stem}.toml"
        return f"bundled:{stem}", res.read_text()
    raise SpecError(f"spec not found: {ref} (bundled specs: {', '.join(bundled_specs())})")


class _Table:
    """Typed access to one TOML table, naming the field in every error."""

    def __init__(self, data: dict, section: str, allowed: set[str]):
        if not isinstance(data, dict):
            raise SpecError(f"[{section}] must be a table")
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise SpecError(f"[{section}] unknown field(s): {', '.join(unknown)}")
        self.data, self.section = data, section

    def get(self, key, kind, default=None, required=False):
        if key not in self.data:
            if required:
                raise SpecError(f"[{self.section}] missing required field '{key}'")
            return default
        v = self.data[key]
        where = f"[{self.section}] field '{key}'"
        if kind is float:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise SpecError(f"{where} must be a number (got {v!r})")
            return float(v)
        if kind is int:
            if isinstance(v, bool) or not (isinstance(v, int) or (isinstance(v, float) and v.is_integer())):
                raise SpecError(f"{where} must be an integer (got {v!r})")
            return int(v)
        if not isinstance(v, kind):
            raise SpecError(f"{where} must be of type {kind.__name__} (got {v!r})")
        return v


def _positive_int(v: int, where: str, allow_zero: bool = False) -> int:
    if v < 0 or (v == 0 and not allow_zero):
        raise SpecError(f"{where} must be {'non-negative' if allow_zero else 'positive'} (got {v})")
    return v


def _subset(items, M: int, where: str) -> frozenset:
    if not isinstance(items, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in items):
        raise SpecError(f"{where} must be a list of 1-based source indices (got {items!r})")
    if any(not 1 <= i <= M for i in items):
        raise SpecError(f"{where}: indices must lie in 1..{M} (got {items})")
    if len(set(items)) != len(items):
        raise SpecError(f"{where}: repeated index in {items}")
    return frozenset(i - 1 for i in items)


def _thresholds(table: dict, where: str) -> Thresholds:
    t = _Table(table, where, {"a", "b", "c", "d"})
    try:
        return Thresholds(c=t.get("c", float, required=True), a=t.get("a", float),
                          b=t.get("b", float), d=t.get("d", float))
    except ValueError as exc:
        raise SpecError(f"[{where}] {exc}") from None


def parse_spec(text: str, label: str = "<spec>") -> ExperimentSpec:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SpecError(f"{label}: parse error: {exc}") from None
    top = _Table(doc, "top level", {"name", "problem", "sources", "overrides", "experiment",
                                    "calibration", "thresholds", "output"})
    name = top.get("name", str, default=Path(label.split(":")[-1]).stem)

    p = _Table(doc.get("problem", {}), "problem",
               {"num_sources", "lower_bound", "upper_bound", "budget", "alpha", "beta", "r"})
    M = p.get("num_sources", int, required=True)
    lo = p.get("lower_bound", int, required=True)
    up = p.get("upper_bound", int, required=True)
    K = p.get("budget", float, required=True)
    alpha = p.get("alpha", float, required=True)
    beta = p.get("beta", float, required=True)
    r = p.get("r", float)

    s = _Table(doc.get("sources", {}), "sources", {"layout", "mean", "means", "factor", "variance"})
    layout = s.get("layout", str, default="means" if "means" in s.data else "homogeneous")
    var = s.get("variance", float, default=1.0)
    if layout == "homogeneous":
        means = [s.get("mean", float, required=True)] * max(M, 0)
    elif layout == "split":
        means = split_means(M, s.get("mean", float, required=True), s.get("factor", float, default=2.0))
    elif layout == "means":
        raw = s.get("means", list, required=True)
        if len(raw) != M or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw):
            raise SpecError(f"[sources] field 'means' must list {M} numbers (got {raw!r})")
        means = [float(v) for v in raw]
    else:
        raise SpecError(f"[sources] field 'layout' must be homogeneous, split or means (got {layout!r})")

    raw_over = doc.get("overrides", [])
    if not isinstance(raw_over, list):
        raise SpecError("[[overrides]] must be an array of tables")
    overrides = []
    for k, item in enumerate(raw_over):
        o = _Table(item, f"overrides[{k}]", {"subset", "n_hat", "n_check"})
        overrides.append((_subset(o.get("subset", list, required=True), M, f"[overrides[{k}]] subset"),
                          o.get("n_hat", float, required=True), o.get("n_check", float, required=True)))

    try:
        from .model import Gaussian, SourceModel

        srcs = tuple(SourceModel(i, Gaussian(0.0, var), Gaussian(mu, var)) for i, mu in enumerate(means))
        config = ProblemConfig(M, lo, up, K, alpha, beta, srcs, r=r, budget_overrides=tuple(overrides))
    except (ConfigurationError, ModelError) as exc:
        raise SpecError(f"{label}: {exc}") from None
    for a, _, _ in config.budget_overrides:
        if not config.admissible(a):
            raise SpecError(f"[[overrides]] subset {sorted(i + 1 for i in a)} is not admissible "
                            f"(need {lo} <= |A| <= {up})")

    e = _Table(doc.get("experiment", {}), "experiment",
               {"truths", "rules", "thresholds", "trials", "seed", "horizon", "chunk_size",
                "probe_horizon", "probe_trials"})
    raw_truths = e.get("truths", (str, list), default="prefix")
    if raw_truths == "prefix":
        truths = tuple(t.anomalous_set for t in prefix_truths(config))
    elif isinstance(raw_truths, list):
        truths = []
        for k, item in enumerate(raw_truths):
            a = _subset(item, M, f"[experiment] truths[{k}]")
            try:
                truths.append(GroundTruth.of(config, a).anomalous_set)
            except ConfigurationError:
                raise SpecError(f"[experiment] truths[{k}] = {item} is not admissible "
                                f"(need {lo} <= |A| <= {up})") from None
        truths = tuple(truths)
    else:
        raise SpecError(f"[experiment] field 'truths' must be \"prefix\" or a list of lists (got {raw_truths!r})")
    if not truths:
        raise SpecError("[experiment] no truths given")
    rules = e.get("rules", list, default=["ordering", "probabilistic"])
    for rname in rules:
        if rname not in {k.value for k in RuleKind}:
            raise SpecError(f"[experiment] unknown rule {rname!r} "
                            f"(choose from {', '.join(k.value for k in RuleKind)})")
    if not rules or len(set(rules)) != len(rules):
        raise SpecError("[experiment] 'rules' must be a non-empty list without repeats")
    mode = e.get("thresholds", str, default="analytic")
    if mode not in ("analytic", "calibrated", "explicit"):
        raise SpecError(f"[experiment] field 'thresholds' must be analytic, calibrated or explicit (got {mode!r})")
    seed = e.get("seed", int)
    trials = _positive_int(e.get("trials", int, default=10_000), "[experiment] trials")
    horizon = _positive_int(e.get("horizon", int, default=DEFAULT_HORIZON), "[experiment] horizon")
    chunk = _positive_int(e.get("chunk_size", int, default=DEFAULT_CHUNK), "[experiment] chunk_size")
    probe_h = _positive_int(e.get("probe_horizon", int, default=0), "[experiment] probe_horizon", True)
    probe_n = _positive_int(e.get("probe_trials", int, default=0), "[experiment] probe_trials", True)

    c = _Table(doc.get("calibration", {}), "calibration", {"trials", "seed", "grid"})
    cal_trials = _positive_int(c.get("trials", int, default=10_000), "[calibration] trials")
    cal_grid = _positive_int(c.get("grid", int, default=200), "[calibration] grid")

    explicit = {}
    raw_thr = doc.get("thresholds", {})
    if raw_thr:
        if all(isinstance(v, dict) for v in raw_thr.values()):
            for rname, tab in raw_thr.items():
                if rname not in rules:
                    raise SpecError(f"[thresholds.{rname}] does not name a rule of this experiment")
                explicit[rname] = _thresholds(tab, f"thresholds.{rname}")
        else:
            t = _thresholds(raw_thr, "thresholds")
            explicit = {rname: t for rname in rules}
    if mode == "explicit":
        missing = [rname for rname in rules if rname not in explicit]
        if missing:
            raise SpecError(f"explicit thresholds requested but [thresholds] does not cover {', '.join(missing)}")
        for rname, t in explicit.items():
            if t.known_count != config.known_count:
                raise SpecError(f"[thresholds] for {rname}: "
                                + ("give only c when l = u" if config.known_count else "give a, b, c and d when l < u"))

    out = _Table(doc.get("output", {}), "output", {"dir"})
    return ExperimentSpec(
        name=name, config=config, means=tuple(means), variance=var, truths=truths, rules=tuple(rules),
        thresholds_mode=mode, explicit_thresholds=explicit, trials=trials,
        seed=DEFAULT_SEED if seed is None else seed, seed_defaulted=seed is None, horizon=horizon,
        chunk_size=chunk, calibration_trials=cal_trials, calibration_seed=c.get("seed", int),
        calibration_grid=cal_grid, probe_horizon=probe_h, probe_trials=probe_n,
        output_dir=out.get("dir", str, default="results"),
    )


def load_spec(ref: str) -> ExperimentSpec:
    """Load and validate a spec from a path or a bundled spec name."""
    label, text = resolve_spec_path(ref)
    return parse_spec(text, label)


# --------------------------------------------------------------------------
# results file
# --------------------------------------------------------------------------

@dataclass
class ResultsFile:
    """Metadata header plus one row per (rule, truth, metric)."""

    metadata: dict[str, str]
    rows: list[tuple[str, tuple[int, ...], str, float]]

    def cells(self) -> dict:
        """``{(rule, truth): {metric: value}}`` in file order."""
        out: dict = {}
        for rule, truth, metric, value in self.rows:
            out.setdefault((rule, truth), {})[metric] = value
        return out

    def rules(self) -> list[str]:
        seen = []
        for rule, *_ in self.rows:
            if rule not in seen:
                seen.append(rule)
        return seen


def format_value(metric: str, value) -> str:
    if metric in INT_METRICS:
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".9g")


def parse_value(metric: str, text: str):
    return int(text) if metric in INT_METRICS else float(text)


def truth_label(truth) -> str:
    return " ".join(str(i) for i in sorted(truth))


def format_results(res: ResultsFile) -> str:
    buf = io.StringIO()
    buf.write(f"# {FORMAT_TAG}\n")
    for k, v in res.metadata.items():
        if "\n" in str(v):
            raise ValueError(f"metadata value for {k} spans lines")
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for rule, truth, metric, value in res.rows:
        w.writerow((rule, truth_label(truth), len(truth), metric, format_value(metric, value)))
    return buf.getvalue()


def write_results(path, res: ResultsFile) -> None:
    Path(path).write_text(format_results(res))


def read_results(path) -> ResultsFile:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != f"# {FORMAT_TAG}":
        raise ValueError(f"{path}: not a {FORMAT_TAG} file")
    meta, k = {}, 1
    while k < len(lines) and lines[k].startswith("#"):
        key, _, value = lines[k][2:].partition(": ")
        meta[key] = value
        k += 1
    version = int(meta.get("schema_version", "0"))
    if version != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema version {version} (expected {SCHEMA_VERSION})")
    reader = csv.reader(lines[k:])
    header = next(reader, None)
    if tuple(header or ()) != HEADER:
        raise ValueError(f"{path}: unexpected header {header}")
    rows = []
    for n, row in enumerate(reader, start=k + 2):
        if len(row) != len(HEADER):
            raise ValueError(f"{path}:{n}: expected {len(HEADER)} fields, got {len(row)}")
        rule, truth, m, metric, value = row
        t = tuple(int(i) for i in truth.split())
        if len(t) != int(m):
            raise ValueError(f"{path}:{n}: m={m} does not match truth {truth!r}")
        rows.append((rule, t, metric, parse_value(metric, value)))
    return ResultsFile(meta, rows)


def _thr_text(t: Thresholds) -> str:
    # repr keeps every bit so the thresholds can be reused exactly
    return ";".join(f"{k}={v!r}" for k, v in t.as_dict().items())


def build_results(spec: ExperimentSpec, report, thresholds: dict, calibration: dict) -> ResultsFile:
    meta = {
        "schema_version": str(SCHEMA_VERSION),
        "package_version": __version__,
        "spec_name": spec.name,
        "spec_hash": spec.spec_hash(),
        "seed": str(spec.seed) + (" (default)" if spec.seed_defaulted else ""),
        "trials": str(spec.trials),
        "horizon": str(spec.horizon),
        "chunk_size": str(spec.chunk_size),
        "thresholds_mode": spec.thresholds_mode,
    }
    for r in spec.rules:
        meta[f"thresholds.{r}"] = _thr_text(thresholds[r])
        if r in calibration:
            meta[f"calibration.{r}.scale"] = repr(calibration[r].scale)
    rows = []
    for r in spec.rules:
        for t in spec.truths:
            cell = report.cell(r, t)
            label = tuple(sorted(i + 1 for i in t))
            for metric, value in cell.metrics().items():
                rows.append((r, label, metric, value))
    return ResultsFile(meta, rows)


# --------------------------------------------------------------------------
# plotting
# --------------------------------------------------------------------------

def figure_table(results: list[tuple[str, ResultsFile]]) -> list[dict]:
    out = []
    for panel, res in results:
        for (rule, truth), m in res.cells().items():
            if "mean_T" not in m:
                continue
            out.append({"panel": panel, "rule": rule, "m": len(truth), "truth": truth_label(truth),
                        "mean_T": m["mean_T"], "se_T": m.get("se_T", math.nan)})
    return out


def render_figure(results: list[tuple[str, ResultsFile]], out_path) -> list[dict]:
    """Mean stopping time (with standard-error bars) against m; one panel per results file.

    Writes an SVG to ``out_path`` and the plotted values to ``<stem>_table.csv``.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    table = figure_table(results)
    if not table:
        raise ValueError("no mean stopping times to plot")
    plt.rcParams["svg.hashsalt"] = "seqident"
    n = len(results)
    fig, axes = plt.subplots(1, n, figsize=(5.0 * n, 4.0), squeeze=False)
    for ax, (panel, res) in zip(axes[0], results):
        rows = [r for r in table if r["panel"] == panel]
        for k, rule in enumerate(res.rules()):
            pts = sorted((r["m"], r["mean_T"], r["se_T"]) for r in rows if r["rule"] == rule)
            if not pts:
                continue
            m, y, se = (np.array(v, dtype=float) for v in zip(*pts))
            ax.errorbar(m, y, yerr=np.nan_to_num(se), marker="os^D"[k % 4], capsize=3, label=rule)
        top = max((r["mean_T"] + np.nan_to_num(r["se_T"]) for r in rows), default=1.0)
        ax.set_ylim(0.0, 1.08 * top)
        ax.set_xticks(sorted({r["m"] for r in rows}))
        ax.set_xlabel("number of anomalous sources m")
        ax.set_ylabel("expected stopping time")
        ax.set_title(panel)
        ax.grid(alpha=0.3)
        ax.legend(loc="lower center", frameon=False, ncol=2)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    with open(out_path.with_name(out_path.stem + "_table.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["panel", "rule", "m", "truth", "mean_T", "se_T"], lineterminator="\n")
        w.writeheader()
        for r in table:
            w.writerow({**r, "mean_T": format_value("mean_T", r["mean_T"]),
                        "se_T": format_value("se_T", r["se_T"])})
    return table


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _truths(spec: ExperimentSpec) -> list[GroundTruth]:
    return [GroundTruth(t) for t in spec.truths]


def calibrate_spec(spec: ExperimentSpec, workers: int | None = None, log=None) -> dict:
    """Calibrated thresholds per rule (a :class:`Calibration` each)."""
    out = {}
    for r in spec.rules:
        cal = calibrate_thresholds(spec.config, _truths(spec), r, trials=spec.calibration_trials,
                                   seed=spec.cal_seed, grid=spec.calibration_grid, horizon=spec.horizon,
                                   chunk_size=spec.chunk_size, workers=workers)
        out[r] = cal
        if log:
            log(f"calibrated {r}: scale {cal.scale:.4g}, worst FP {cal.fp_rate:.3g}, worst FN {cal.fn_rate:.3g}")
    return out


def run_spec(spec: ExperimentSpec, out_dir, workers: int | None = None, plot: bool = True,
             log=None) -> dict:
    """Execute a spec and write ``<name>.csv``, ``<name>.json`` and ``<name>.svg`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.time()
    calibration = {}
    if spec.thresholds_mode == "analytic":
        base = compute_thresholds(spec.config)
        thresholds = {r: base for r in spec.rules}
    elif spec.thresholds_mode == "explicit":
        thresholds = dict(spec.explicit_thresholds)
    else:
        calibration = calibrate_spec(spec, workers, log)
        thresholds = {r: c.thresholds for r, c in calibration.items()}
    report = run_experiment(spec.config, _truths(spec), list(spec.rules), spec.trials, spec.seed,
                            thresholds=thresholds, horizon=spec.horizon, chunk_size=spec.chunk_size,
                            workers=workers, probe_horizon=spec.probe_horizon, probe_trials=spec.probe_trials)
    results = build_results(spec, report, thresholds, calibration)
    csv_path = out_dir / f"{spec.name}.csv"
    write_results(csv_path, results)
    paths = {"csv": csv_path, "json": out_dir / f"{spec.name}.json"}
    if plot:
        paths["svg"] = out_dir / f"{spec.name}.svg"
        render_figure([(spec.name, results)], paths["svg"])
    sidecar = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "spec_hash": spec.spec_hash(),
        "seed": spec.seed,
        "seed_defaulted": spec.seed_defaulted,
        "wall_time_seconds": round(time.time() - start, 3),
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "spec": spec.resolved(),
        "thresholds": {r: t.as_dict() for r, t in thresholds.items()},
        "calibration": {r: {"scale": c.scale, "worst_fp": c.fp_rate, "worst_fn": c.fn_rate,
                            "per_truth": {truth_label(i + 1 for i in k): v for k, v in c.per_truth.items()}}
                        for r, c in calibration.items()},
        "truncated_trials": report.truncated,
        "results_csv": csv_path.name,
        "figure": paths["svg"].name if plot else None,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    paths["json"].write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return {"paths": paths, "report": report, "results": results, "thresholds": thresholds,
            "calibration": calibration}


def thresholds_toml(thresholds: dict) -> str:
    lines = []
    for r, t in thresholds.items():
        lines.append(f"[thresholds.{r}]")
        lines.extend(f"{k} = {v!r}" for k, v in t.as_dict().items())
        lines.append("")
    return "\n".join(lines)


def _err(msg: str) -> None:
    print(f"seqident: {msg}", file=sys.stderr)


def cmd_run(args) -> int:
    spec = load_spec(args.spec).replace(trials=args.trials, seed=args.seed, horizon=args.horizon)
    out_dir = args.out or spec.output_dir
    if spec.seed_defaulted:
        _err(f"no seed given; using default seed {spec.seed}")
    out = run_spec(spec, out_dir, workers=args.workers, plot=not args.no_plot, log=_err)
    report = out["report"]
    if report.truncated:
        _err(f"warning: {report.truncated} trial(s) reached the horizon {spec.horizon} without stopping; "
             "they are excluded from the means and counted in 'truncated'")
    for c in report.cells:
        print(f"{c.rule:>13}  m={len(c.truth)}  truth={truth_label(i + 1 for i in c.truth):<12} "
              f"E[T]={c.mean_T:9.3f} ± {c.se_T:.3f}  FP={c.fp_rate:.2e}  FN={c.fn_rate:.2e}  "
              f"obs/step={c.budget_ratio:.4f}")
    for k, p in out["paths"].items():
        print(f"wrote {p}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    spec = load_spec(args.spec).replace(calibration_trials=args.trials, calibration_seed=args.seed,
                                        horizon=args.horizon)
    cals = calibrate_spec(spec, workers=args.workers, log=_err)
    snippet = thresholds_toml({r: c.thresholds for r, c in cals.items()})
    print(snippet, end="")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        path = Path(args.out) / f"{spec.name}_thresholds.toml"
        path.write_text(snippet)
        _err(f"wrote {path}")
    return EXIT_OK


def cmd_plot(args) -> int:
    results = []
    for path in args.results:
        res = read_results(path)
        if not res.rows:
            raise ValueError(f"{path}: results file has no rows")
        results.append((res.metadata.get("spec_name", Path(path).stem), res))
    out = Path(args.out or Path(args.results[0]).with_suffix(".svg"))
    render_figure(results, out)
    print(f"wrote {out}")
    print(f"wrote {out.with_name(out.stem + '_table.csv')}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import checks

    spec = load_spec(args.spec)
    suites = checks.run_all(spec.config, random_configs=args.random_configs, states=args.states,
                            seed=args.seed if args.seed is not None else 0)
    failed = [s for s in suites if not s.ok]
    for s in suites:
        status = "PASS" if s.ok else "FAIL"
        print(f"{status}  {s.name}: {s.checks - s.failure_count}/{s.checks} checks passed")
    table = next((s.table for s in suites if s.table), None)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        if table:
            path = Path(args.out) / "two_level_g_sets.csv"
            with open(path, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(table[0]), lineterminator="\n")
                w.writeheader()
                w.writerows({**r, "g_hat": truth_label(r["g_hat"]), "g_check": truth_label(r["g_check"])}
                            for r in table)
            print(f"wrote {path}")
    if failed:
        dump = {s.name: {"failures": s.failure_count, "examples": s.failures} for s in failed}
        text = json.dumps(dump, indent=2, default=str)
        if args.out:
            path = Path(args.out) / "counterexamples.json"
            path.write_text(text + "\n")
            _err(f"counterexamples written to {path}")
        print(text, file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seqident", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, trials_help):
        p.add_argument("spec", help="spec file or bundled spec name")
        p.add_argument("--trials", type=int, help=trials_help)
        p.add_argument("--seed", type=int, help="master seed (overrides the spec)")
        p.add_argument("--horizon", type=int, help="step cap per trial (overrides the spec)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: $SEQIDENT_WORKERS or 1)")

    p = sub.add_parser("run", help="run an experiment spec")
    common(p, "trials per cell (overrides the spec)")
    p.add_argument("--no-plot", action="store_true", help="skip the SVG figure")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("calibrate", help="calibrate thresholds for a spec")
    common(p, "calibration trials per truth (overrides the spec)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("plot", help="plot mean stopping time against m")
    p.add_argument("results", nargs="+", help="results CSV file(s); one panel each")
    p.add_argument("--out", help="output SVG path (default: first results file with .svg)")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("verify", help="allocation invariants and rule-reduction checks")
    p.add_argument("spec", nargs="?", default="fig1_homogeneous", help="spec file or bundled name")
    p.add_argument("--random-configs", type=int, default=500)
    p.add_argument("--states", type=int, default=10_000, help="random states per reduction check")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="directory for the G-set table and counterexamples")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name in ("trials", "horizon", "workers", "random_configs", "states"):
        v = getattr(args, name, None)
        if v is not None and v <= 0:
            _err(f"--{name.replace('_', '-')} must be positive")
            return EXIT_USAGE
    try:
        return args.func(args)
    except SpecError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (CalibrationError, ConfigurationError, RuleError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_ENGINE
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
