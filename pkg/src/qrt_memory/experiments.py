"""Parameter sweeps behind the CLI: grid expansion, evaluation, convergence checks."""
from __future__ import annotations

import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import multitime as mt
from . import quantifiers as qf
from .config import ConfigError, axis_values, dump_config, parse_config
from .instruments import sequential_protocol
from .model import FockTruncationError, ModelParams, n_thermal
from .perturbation import epsilon_lambda2

WORKERS_ENV = "QRT_MEMORY_WORKERS"


class ConvergenceFailure(RuntimeError):
    """Raised by a run whose Fock-cutoff check did not pass."""

    def __init__(self, report: "ConvergenceReport"):
        super().__init__(report.message)
        self.report = report


# ---------------------------------------------------------------------------
# Result table
# ---------------------------------------------------------------------------


def format_number(x) -> str:
    """Shortest round-trip decimal, scientific notation below 1e-3 in magnitude."""
    x = float(x)
    if math.isfinite(x) and x != 0.0 and abs(x) < 1e-3:
        return f"{x:.16e}"
    return repr(x)


def _json_number(x: float):
    return x if math.isfinite(x) else repr(x)


@dataclass
class ResultTable:
    columns: list
    rows: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = list(self.columns)
        self.rows = [[float(x) for x in row] for row in self.rows]
        for k, row in enumerate(self.rows):
            if len(row) != len(self.columns):
                raise ValueError(f"row {k} has {len(row)} values for {len(self.columns)} columns")

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([row[j] for row in self.rows])

    def to_csv(self) -> str:
        lines = [",".join(self.columns)]
        lines += [",".join(format_number(x) for x in row) for row in self.rows]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = {"columns": self.columns,
               "rows": [[_json_number(x) for x in row] for row in self.rows],
               "metadata": self.metadata}
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ResultTable":
        doc = json.loads(text)
        return cls(doc["columns"], [[float(x) for x in row] for row in doc["rows"]], doc["metadata"])

    @classmethod
    def from_csv(cls, text: str) -> "ResultTable":
        lines = text.strip("\n").split("\n")
        return cls(lines[0].split(","), [[float(x) for x in ln.split(",")] for ln in lines[1:]])

    def render(self, fmt: str) -> str:
        if fmt == "csv":
            return self.to_csv()
        if fmt == "json":
            return self.to_json()
        raise ValueError(f"unknown output format {fmt!r}")

    def write(self, path, fmt: str = "csv") -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.render(fmt))


# ---------------------------------------------------------------------------
# Grid expansion and per-point evaluation
# ---------------------------------------------------------------------------

COLUMNS = {
    "landscape": (["t1", "t2"], ["eps_qrt"]),
    "perturbation-sweep": (["lambda"], ["eps_qrt", "eps_lambda2"]),
    "divisibility-heatmap": (["omega0", "gamma"], ["n_avg"]),
    "temperature-compare": (["beta", "n_beta", "n_max", "omega0", "gamma"], ["eps_avg"]),
    "three-time-compare": (["omega0", "gamma"], ["eps2_commuting", "eps3_commuting",
                                                 "eps2_noncommuting", "eps3_noncommuting"]),
}


def columns_for(cfg) -> tuple[list, list]:
    """``(coordinate columns, result columns)`` of a config's table."""
    if cfg.kind == "avg-heatmap":
        return ["omega0", "gamma"], list(cfg.quantities)
    key, res = COLUMNS[cfg.kind]
    return list(key), list(res)


def grid_points(cfg) -> list[ModelParams]:
    """Parameter points in row order (outer to inner: temperature, omega0, gamma)."""
    m = cfg.model
    if cfg.kind == "landscape":
        return [m.params()]
    if cfg.kind == "perturbation-sweep":
        return [m.params(lam=lam) for lam in axis_values(m.lam)]
    temps = [(m.beta, m.n_max)]
    if cfg.kind == "temperature-compare":
        temps = [(t.beta, t.n_max) for t in cfg.temperatures]
    return [m.params(beta=b, n_max=n, omega0=w, gamma=g)
            for (b, n), w, g in itertools.product(temps, axis_values(m.omega0), axis_values(m.gamma))]


def _protocol(cfg, axes=None):
    axes = cfg.protocol.axes if axes is None else axes
    times = cfg.protocol.times or [0.0] * len(axes)
    return sequential_protocol(cfg.protocol.initial_state, axes, times)


def _eval_landscape(cfg, p, diag):
    times, exact, qrt = mt.landscape_grid(_protocol(cfg), p, cfg.times.t_max, cfg.times.grid_n)
    eps = qf._distances(exact, qrt, 2, diag)
    n = cfg.times.grid_n
    return [[times[i], times[j], eps[i, j]] for i in range(n) for j in range(i, n)]


def _eval_avg(cfg, p, diag):
    num = cfg.numerics
    row = [p.omega0, p.gamma]
    for q in cfg.quantities:
        if q == "eps_avg":
            row.append(qf.avg_epsilon_qrt(cfg.t_f, _protocol(cfg), p, num.grid_n, diag))
        else:
            row.append(qf.avg_n_witness(cfg.t_f, p, num.grid_n,
                                        qf.fibonacci_sphere(num.sphere_samples), diag))
    return [row]


def _eval_divisibility(cfg, p, diag):
    num = cfg.numerics
    return [[p.omega0, p.gamma,
             qf.avg_n_witness(cfg.t_f, p, num.grid_n, qf.fibonacci_sphere(num.sphere_samples), diag)]]


def _eval_perturbation(cfg, p, diag):
    proto = _protocol(cfg)
    return [[p.lam, qf.epsilon_qrt(proto, p), epsilon_lambda2(proto, p, cfg.numerics.quadrature_n)]]


def _eval_temperature(cfg, p, diag):
    eps = qf.avg_epsilon_qrt(cfg.t_f, _protocol(cfg), p, cfg.numerics.grid_n, diag)
    return [[p.beta, n_thermal(p.eta, p.beta), p.n_max, p.omega0, p.gamma, eps]]


def _eval_three_time(cfg, p, diag):
    n, t_f = cfg.numerics.grid_n, cfg.t_f
    row = [p.omega0, p.gamma]
    for axes in (cfg.protocol.axes, cfg.noncommuting_axes):
        row.append(qf.avg_epsilon_qrt(t_f, _protocol(cfg, axes[:2]), p, n, diag))
        row.append(qf.avg_epsilon_qrt_3(t_f, _protocol(cfg, axes), p, n, diag))
    return [row]


_EVALUATORS = {
    "landscape": _eval_landscape,
    "avg-heatmap": _eval_avg,
    "divisibility-heatmap": _eval_divisibility,
    "perturbation-sweep": _eval_perturbation,
    "temperature-compare": _eval_temperature,
    "three-time-compare": _eval_three_time,
}


def evaluate_point(cfg, params: ModelParams):
    """Rows and diagnostics for one parameter point."""
    diag = mt.Diagnostics()
    rows = _EVALUATORS[cfg.kind](cfg, params, diag)
    return rows, diag


def _evaluate_task(task):
    cfg, params = task
    return evaluate_point(cfg, params)


def resolve_workers(flag: int | None = None) -> int:
    """Worker count: the flag if given, else the environment variable, else 1."""
    if flag is not None:
        value, source = flag, "--workers"
    else:
        raw = os.environ.get(WORKERS_ENV)
        if raw is None or raw.strip() == "":
            return 1
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV}={raw!r} is not an integer") from None
        source = WORKERS_ENV
    if value < 1:
        raise ConfigError(f"{source} must be >= 1, got {value}")
    return value


def map_points(cfg, points, workers: int = 1) -> list:
    """Evaluate points, results ordered by grid index whatever the worker count."""
    tasks = [(cfg, p) for p in points]
    if workers <= 1 or len(tasks) <= 1:
        return [_evaluate_task(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_evaluate_task, tasks, chunksize=chunk))


# ---------------------------------------------------------------------------
# Convergence in the Fock cutoff
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    passed: bool
    tol: float
    max_deviation: float
    points: list = field(default_factory=list)
    message: str = ""

    def as_dict(self) -> dict:
        return {"passed": self.passed, "tol": self.tol,
                "max_deviation": _json_number(self.max_deviation),
                "points": self.points, "message": self.message}


def _designated(points: list, k: int) -> list[int]:
    idx = np.linspace(0, len(points) - 1, min(k, len(points))).round().astype(int)
    return sorted(set(idx.tolist()))


def _deviation(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    both_nan = np.isnan(a) & np.isnan(b)
    if (np.isnan(a) ^ np.isnan(b)).any():
        return math.inf
    d = np.abs(a - b)[~both_nan]
    return float(d.max()) if d.size else 0.0


def check_convergence(cfg, workers: int = 1, indices: list[int] | None = None) -> ConvergenceReport:
    """Rerun a designated subset of grid points at ``n_max + 2`` and compare result columns."""
    spec = cfg.numerics.convergence
    points = grid_points(cfg)
    indices = _designated(points, spec.points) if indices is None else indices
    key_cols, res_cols = columns_for(cfg)
    res = slice(len(key_cols), None)
    entries, worst, failures = [], 0.0, []
    for k in indices:
        p = points[k]
        entry = {"index": k, "beta": _json_number(p.beta), "n_max": p.n_max,
                 "omega0": p.omega0, "gamma": p.gamma, "lambda": p.lam}
        try:
            (lo, _), (hi, _) = map_points(cfg, [p, p.with_(n_max=p.n_max + 2)], workers)
        except FockTruncationError as exc:
            entry.update(deviation="inf", error=str(exc))
            failures.append(f"point {k}: {exc}")
            worst = math.inf
            entries.append(entry)
            continue
        dev = _deviation([r[res] for r in lo], [r[res] for r in hi])
        entry["deviation"] = _json_number(dev)
        entries.append(entry)
        worst = max(worst, dev)
        if not dev < spec.tol:
            failures.append(f"point {k} (beta={p.beta:g}, n_max={p.n_max}): deviation {dev:.3e} "
                            f"exceeds {spec.tol:g} when n_max -> {p.n_max + 2}")
    passed = not failures
    msg = (f"converged: max deviation {worst:.3e} < {spec.tol:g} over {len(indices)} point(s)"
           if passed else "; ".join(failures))
    return ConvergenceReport(passed, spec.tol, worst, entries, msg)


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------


def run_experiment(cfg, workers: int = 1, check: bool | None = None) -> ResultTable:
    """Evaluate the whole grid of a config.

    The Fock-cutoff check runs when enabled in the config (or forced by ``check``)
    and raises :class:`ConvergenceFailure` if it does not pass. Truncation errors
    of the thermal mode state propagate as ``FockTruncationError``.
    """
    results = map_points(cfg, grid_points(cfg), workers)
    diag = mt.Diagnostics()
    rows = []
    for r, d in results:
        rows.extend(r)
        diag.merge(d)
    report = None
    if cfg.numerics.convergence.enabled if check is None else check:
        report = check_convergence(cfg, workers)
        if not report.passed:
            raise ConvergenceFailure(report)
    key_cols, res_cols = columns_for(cfg)
    metadata = {
        "config": dump_config(cfg),
        "code_version": __version__,
        "convergence": None if report is None else report.as_dict(),
        "clipped": diag.clipped,
        "conditioning_flags": diag.conditioning_flags,
    }
    return ResultTable(key_cols + res_cols, rows, metadata)


def _run_kind(kind):
    def runner(cfg, workers: int = 1, check: bool | None = None) -> ResultTable:
        if cfg.kind != kind:
            raise ConfigError(f"expected a {kind!r} config, got {cfg.kind!r}")
        return run_experiment(cfg, workers, check)
    runner.__name__ = "run_" + kind.replace("-", "_")
    runner.__doc__ = f"Run a ``{kind}`` config; see :func:`run_experiment`."
    return runner


run_landscape = _run_kind("landscape")
run_avg_heatmap = _run_kind("avg-heatmap")
run_divisibility_heatmap = _run_kind("divisibility-heatmap")
run_perturbation_sweep = _run_kind("perturbation-sweep")
run_temperature_compare = _run_kind("temperature-compare")
run_three_time_compare = _run_kind("three-time-compare")


def config_from_table(table: ResultTable):
    """Re-validate the resolved config stored in a table's metadata."""
    return parse_config(table.metadata["config"], "<metadata>")
