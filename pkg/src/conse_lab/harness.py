"""Seeded sweeps over (policy, alpha, epsilon, n), slope fits, Pareto tables, CSV and SVG output.

A sweep expands its config into cells in a fixed order and runs every
replication of every cell on its own generator, seeded by a splitmix64 hash
of ``(base_seed, cell, replication)``.  Cells run on a thread pool (the
compiled allocation loop releases the GIL); results are reassembled in
canonical order so the CSV does not depend on the worker count.

Config files are TOML with a flat table whose keys are exactly the
:class:`SweepConfig` field names::

    policies = ["conse", "dp_conse"]
    instance = "mixed_gap"
    instance_params = {}
    d = 1
    beta = 1.0
    L = 1.0
    n_values = [8192, 16384, 32768]
    alpha_values = [0.0, 0.3333333333333333]
    epsilon_values = [1.0]
    replications = 30
    base_seed = 20240611
    output_csv = "sweep.csv"
    output_svg = ""
    thin = "final"
    record_timing = false
"""

from __future__ import annotations

import csv
import dataclasses
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .env import EnvironmentSpec, InvalidParameter, build_instance
from .metrics import mise, simple_regret
from .policies import POLICY_NAMES, THIN_LEVELS, max_alpha, run_policy

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CSV_COLUMNS = ("run_id", "seed", "policy", "instance", "d", "beta", "L", "alpha", "epsilon", "n",
               "cum_regret", "mise", "simple_regret", "degenerate_bin_count", "wallclock_ms")
DEFAULT_N_VALUES = tuple(2**k for k in range(13, 20))
DEBUG_ENV = "CONSE_LAB_DEBUG"
_MASK64 = (1 << 64) - 1


# --- seeding -------------------------------------------------------------------

def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(base_seed: int, cell: int, replication: int) -> int:
    h = splitmix64(base_seed & _MASK64)
    h = splitmix64(h ^ cell)
    return splitmix64(h ^ (replication * 0x632BE59BD9B4E019 & _MASK64))


# --- configuration ---------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    policies: tuple = ("conse",)
    instance: str = "mixed_gap"
    instance_params: dict = field(default_factory=dict)
    d: int = 1
    beta: float = 1.0
    L: float = 1.0
    n_values: tuple = DEFAULT_N_VALUES
    alpha_values: tuple = (0.0,)
    epsilon_values: tuple = (1.0,)
    replications: int = 1
    base_seed: int = 0
    output_csv: str = ""
    output_svg: str = ""
    thin: str = "final"
    record_timing: bool = False

    def __post_init__(self):
        for name in ("policies", "n_values", "alpha_values", "epsilon_values"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for p in self.policies:
            if p not in POLICY_NAMES:
                raise InvalidParameter("policies", f"unknown policy {p!r}")
        ns = self.n_values
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise InvalidParameter("n_values", f"must be strictly increasing, got {list(ns)}")
        if self.replications < 1:
            raise InvalidParameter("replications", f"must be at least 1, got {self.replications}")
        if self.thin not in THIN_LEVELS:
            raise InvalidParameter("thin", f"must be one of {THIN_LEVELS}, got {self.thin!r}")

    def replace(self, **changes) -> SweepConfig:
        return dataclasses.replace(self, **changes)


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(SweepConfig)}


def load_config(path) -> SweepConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise InvalidParameter("config", f"{path}: {exc}") from exc
    unknown = sorted(set(raw) - _CONFIG_FIELDS)
    if unknown:
        raise InvalidParameter(unknown[0], f"unknown config key in {path}")
    return SweepConfig(**raw)


@dataclass(frozen=True)
class Cell:
    policy: str
    instance: str
    instance_params: tuple
    d: int
    beta: float
    L: float
    n: int
    alpha: float | None = None
    epsilon: float | None = None

    def build_spec(self) -> EnvironmentSpec:
        return build_instance(self.instance, self.d, self.beta, self.L, self.n,
                              **dict(self.instance_params))


def expand_cells(config: SweepConfig) -> list[Cell]:
    """Cells in canonical order: policy, then alpha, then epsilon, then n.

    ``rct`` takes no alpha or epsilon; ``regret_min`` pins alpha; only
    ``dp_conse`` iterates over epsilon.
    """
    common = dict(instance=config.instance,
                  instance_params=tuple(sorted(config.instance_params.items())),
                  d=config.d, beta=config.beta, L=config.L)
    cells = []
    for policy in config.policies:
        if policy == "rct":
            combos = [(None, None)]
        elif policy == "regret_min":
            combos = [(max_alpha(config.beta, config.d), None)]
        elif policy == "conse":
            combos = [(a, None) for a in config.alpha_values]
        else:
            combos = [(a, e) for a in config.alpha_values for e in config.epsilon_values]
        for alpha, eps in combos:
            for n in config.n_values:
                cells.append(Cell(policy=policy, n=n, alpha=alpha, epsilon=eps, **common))
    return cells


# --- records ------------------------------------------------------------------------

@dataclass(frozen=True)
class RunRecord:
    run_id: str
    seed: int
    policy: str
    instance: str
    d: int
    beta: float
    L: float
    alpha: float | None
    epsilon: float | None
    n: int
    cum_regret: float
    mise: float
    simple_regret: float
    degenerate_bin_count: int
    wallclock_ms: float


def run_single(cell: Cell, seed: int, run_id: str = "", thin: str = "final",
               record_timing: bool = False, spec: EnvironmentSpec | None = None,
               return_trace: bool = False):
    """One replication of ``cell`` on ``default_rng(seed)``.

    ``wallclock_ms`` is 0 unless ``record_timing`` (timings would break the
    byte-identical CSV guarantee).
    """
    if spec is None:
        spec = cell.build_spec()
    start = time.perf_counter()
    trace = run_policy(cell.policy, cell.n, spec, np.random.default_rng(seed),
                       alpha=cell.alpha, epsilon=cell.epsilon, thin=thin)
    record = RunRecord(
        run_id=run_id, seed=seed, policy=cell.policy, instance=cell.instance,
        d=cell.d, beta=cell.beta, L=cell.L, alpha=cell.alpha, epsilon=cell.epsilon, n=cell.n,
        cum_regret=trace.cumulative_regret,
        mise=mise(trace.estimate, spec),
        simple_regret=simple_regret(trace.deployment, spec),
        degenerate_bin_count=trace.estimate.degenerate_count,
        wallclock_ms=(time.perf_counter() - start) * 1e3 if record_timing else 0.0,
    )
    return (record, trace) if return_trace else record


@dataclass
class SweepResult:
    records: list
    failures: list  # dicts: cell, replication, run_id, param, message


def run_sweep(config: SweepConfig, threads: int | None = None, debug: bool | None = None) -> SweepResult:
    """Run every cell x replication; output order is canonical regardless of ``threads``.

    A cell whose instance cannot be built, or a run that raises, is recorded
    in ``failures`` and the sweep carries on.  With ``debug`` (or the
    ``CONSE_LAB_DEBUG`` environment variable) every derived seed is checked
    for reuse.
    """
    if debug is None:
        debug = bool(os.environ.get(DEBUG_ENV))
    cells = expand_cells(config)
    reps = config.replications
    jobs = [(c, r) for c in range(len(cells)) for r in range(reps)]
    seeds = {job: derive_seed(config.base_seed, *job) for job in jobs}
    if debug:
        seen: dict = {}
        for job, s in seeds.items():
            if s in seen:
                raise AssertionError(f"random stream reused by {job} and {seen[s]}")
            seen[s] = job

    specs: dict = {}
    failures: list = []
    for c, cell in enumerate(cells):
        try:
            specs[c] = cell.build_spec()
        except (InvalidParameter, ValueError) as exc:
            failures.extend(_failure(c, r, exc) for r in range(reps))

    def job(c_r):
        c, r = c_r
        try:
            return run_single(cells[c], seeds[c_r], run_id=f"{c}-{r}", thin=config.thin,
                              record_timing=config.record_timing, spec=specs[c])
        except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
            return _failure(c, r, exc)

    todo = [j for j in jobs if j[0] in specs]
    if threads is None or threads <= 1:
        results = [job(j) for j in todo]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, todo))
    records = [res for res in results if isinstance(res, RunRecord)]
    failures.extend(res for res in results if isinstance(res, dict))
    failures.sort(key=lambda f: (f["cell"], f["replication"]))
    return SweepResult(records=records, failures=failures)


def _failure(c, r, exc):
    return dict(cell=c, replication=r, run_id=f"{c}-{r}", param=getattr(exc, "param", None),
                message=str(exc))


# --- CSV ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(records, path) -> None:
    """Write records to ``path``, or to an open text stream."""
    if hasattr(path, "write"):
        _write_rows(records, path)
        return
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            _write_rows(records, fh)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def _write_rows(records, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in records:
        w.writerow([_fmt(getattr(rec, col)) for col in CSV_COLUMNS])


_INT_COLS = {"seed", "d", "n", "degenerate_bin_count"}
_STR_COLS = {"run_id", "policy", "instance"}
_OPT_COLS = {"alpha", "epsilon"}


def read_csv(path) -> list[RunRecord]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    out = []
    for row in rows:
        kw = {}
        for col in CSV_COLUMNS:
            v = row[col]
            if col in _STR_COLS:
                kw[col] = v
            elif col in _INT_COLS:
                kw[col] = int(v)
            elif col in _OPT_COLS:
                kw[col] = float(v) if v != "" else None
            else:
                kw[col] = float(v)
        out.append(RunRecord(**kw))
    return out


# --- analysis -------------------------------------------------------------------------

@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    residual: float  # root-mean-square residual in log space
    n_points: int


def median_by_n(points) -> tuple[np.ndarray, np.ndarray]:
    """Group (n, value) pairs by n and take medians; sorted by n."""
    groups: dict = {}
    for n, v in points:
        groups.setdefault(n, []).append(v)
    ns = np.array(sorted(groups), dtype=float)
    meds = np.array([np.median(groups[n]) for n in sorted(groups)])
    return ns, meds


def fit_loglog_slope(points) -> SlopeFit:
    """OLS of ln(median value) on ln n."""
    ns, meds = median_by_n(points)
    if len(ns) < 3:
        raise ValueError(f"need at least 3 distinct n values, got {len(ns)}")
    for n, m in zip(ns, meds):
        if not m > 0:
            raise ValueError(f"median value at n={int(n)} is {m}, must be positive")
    x, y = np.log(ns), np.log(meds)
    res = stats.linregress(x, y)
    resid = y - (res.intercept + res.slope * x)
    return SlopeFit(float(res.slope), float(res.intercept), float(np.sqrt(np.mean(resid**2))), len(ns))


def select(records, **match) -> list[RunRecord]:
    """Records whose fields equal ``match`` (floats compared with isclose)."""
    out = []
    for rec in records:
        ok = True
        for k, v in match.items():
            got = getattr(rec, k)
            if isinstance(v, float) and got is not None:
                ok = math.isclose(got, v, rel_tol=1e-9, abs_tol=1e-12)
            else:
                ok = got == v
            if not ok:
                break
        if ok:
            out.append(rec)
    return out


@dataclass
class ParetoResult:
    triples: list            # (alpha, median regret, median mise), sorted by alpha
    diagnostics: list        # one dict per adjacent alpha pair; empty for a single alpha


def _median_se(values) -> float:
    """Standard error of the median, from the MAD (normal approximation)."""
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return 0.0
    mad = 1.4826 * np.median(np.abs(v - np.median(v)))
    return 1.2533 * mad / math.sqrt(len(v))


def pareto_points(records, n: int, policy: str | None = None, z: float = 2.0) -> ParetoResult:
    """Median regret and MISE per alpha at horizon ``n``.

    Diagnostics flag a regret increase or a MISE decrease between
    neighbouring alphas that exceeds ``z`` combined median standard errors.
    """
    chosen = [r for r in records if r.n == n and r.alpha is not None
              and (policy is None or r.policy == policy)]
    by_alpha: dict = {}
    for r in chosen:
        by_alpha.setdefault(r.alpha, []).append(r)
    alphas = sorted(by_alpha)
    triples, spread = [], []
    for a in alphas:
        reg = [r.cum_regret for r in by_alpha[a]]
        err = [r.mise for r in by_alpha[a]]
        triples.append((a, float(np.median(reg)), float(np.median(err))))
        spread.append((_median_se(reg), _median_se(err)))
    diags = []
    for i in range(len(alphas) - 1):
        (a0, r0, m0), (a1, r1, m1) = triples[i], triples[i + 1]
        tol_r = z * math.hypot(spread[i][0], spread[i + 1][0])
        tol_m = z * math.hypot(spread[i][1], spread[i + 1][1])
        diags.append(dict(alpha_lo=a0, alpha_hi=a1,
                          regret_nonincreasing=r1 <= r0 + tol_r,
                          mise_nondecreasing=m1 >= m0 - tol_m))
    return ParetoResult(triples=triples, diagnostics=diags)


def series_by_group(records, x: str = "n", y: str = "mise") -> dict:
    """Median ``y`` against ``x`` for each (policy, alpha, epsilon) group."""
    groups: dict = {}
    for r in records:
        key = (r.policy, r.alpha, r.epsilon)
        groups.setdefault(key, []).append((getattr(r, x), getattr(r, y)))
    out = {}
    for (pol, a, e), pts in sorted(groups.items(), key=lambda kv: tuple(_sort_key(k) for k in kv[0])):
        label = pol + (f" a={a:.4g}" if a is not None else "") + (f" eps={e:g}" if e is not None else "")
        xs, ys = median_by_n(pts)
        out[label] = (xs, ys)
    return out


def _sort_key(v):
    return (v is None, v if v is not None else 0)


def render_svg_plot(series: dict, path, loglog: bool = True, xlabel: str = "n",
                    ylabel: str = "", title: str = "") -> None:
    """Line plot of ``{label: (x, y)}``; log-log series carry their fitted slope.

    SVG output is deterministic (fixed hash salt, no date metadata).
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    with matplotlib.rc_context({"svg.hashsalt": "conse-lab", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.4, 4.8))
        for label, (xs, ys) in series.items():
            xs, ys = np.asarray(xs, float), np.asarray(ys, float)
            text = label
            if loglog and len(xs) >= 2 and np.all(xs > 0) and np.all(ys > 0):
                slope = np.polyfit(np.log(xs), np.log(ys), 1)[0]
                text = f"{label} (slope {slope:.3f})"
            ax.plot(xs, ys, marker="o", label=text)
        if loglog:
            ax.set_xscale("log")
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if series:
            ax.legend(fontsize="small")
        try:
            fig.savefig(path, format="svg", metadata={"Date": None})
        except OSError as exc:
            raise OSError(f"{path}: {exc.strerror or exc}") from exc
        finally:
            plt.close(fig)
