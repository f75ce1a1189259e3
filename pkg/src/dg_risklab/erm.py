"""Pooling ERM vs. domain-informed ERM over exactly solvable classes.

Training data follow the two-stage process: ``N`` domains are drawn from
``P_D`` (never shown to the learners), each reveals its metadata ``m_i`` and
``n_i`` labelled pairs from ``P_{XY|D}``. Both learners minimize the
domain-weighted empirical 0-1 risk, every sample carrying weight
``1 / (N * n_i)``; the pooling learner sees only ``x``.

Fitting works on a :class:`WeightedSample`. A training set yields the
empirical one; a joint table yields the population one (one row per cell of
positive mass, weighted by its probability), so the same routine returns
empirical minimizers and exact restricted-class optima.

Population risk is always evaluated exactly against the generating
distribution.
"""

from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .bayes import BOUND_TOL, risks, solve_bayes
from .distribution import FactoredDistribution, JointTable, build_joint
from .errors import BoundViolation, ValidationError
from .specfile import emit_spec

MODES = ("pool", "dg")
MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


# --- seeding -----------------------------------------------------------------


def splitmix64(state: int) -> int:
    """The SplitMix64 output function applied to a 64-bit state."""
    z = state & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trial_seed(master_seed: int, trial: int) -> int:
    """Seed of trial ``trial``: output ``trial + 1`` of a SplitMix64 stream seeded with ``master_seed``."""
    return splitmix64((master_seed + (trial + 1) * GOLDEN_GAMMA) & MASK64)


def distribution_id(f: FactoredDistribution) -> str:
    return hashlib.sha256(emit_spec(f).encode()).hexdigest()[:16]


# --- training data -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Per-domain records: metadata index ``m[i]`` and samples ``(x, y)`` of record ``i``.

    Samples are stored flat; ``record[s]`` is the record of sample ``s``.
    ``x`` holds indices into the support's ``x_values``, ``y`` 0-based classes.
    """

    m: np.ndarray
    n: np.ndarray
    record: np.ndarray
    x: np.ndarray
    y: np.ndarray
    seed: int
    distribution_id: str
    n_m: int
    n_x: int
    n_y: int
    _domains: np.ndarray = field(repr=False, default=None)

    @property
    def N(self) -> int:
        return int(self.m.size)

    def weights(self) -> np.ndarray:
        return 1.0 / (self.N * self.n[self.record])

    def weighted(self) -> "WeightedSample":
        return WeightedSample(self.x, self.y, self.m[self.record], self.weights(),
                              self.n_x, self.n_y, self.n_m)


@dataclass(frozen=True, eq=False)
class WeightedSample:
    x: np.ndarray
    y: np.ndarray
    m: np.ndarray
    w: np.ndarray
    n_x: int
    n_y: int
    n_m: int

    @classmethod
    def from_joint(cls, j: JointTable) -> "WeightedSample":
        p_xym = j.p.sum(axis=3)
        x, y, m = np.nonzero(p_xym > 0)
        nx, k, nm, _ = j.p.shape
        return cls(x, y, m, p_xym[x, y, m], nx, k, nm)


def _draw(rng, cdf_rows, which):
    """Inverse-CDF draws: one index per entry of ``which`` from row ``cdf_rows[which]``."""
    cdf_rows = cdf_rows / cdf_rows[:, -1:]
    cdf_rows[:, -1] = 1.0
    u = rng.random(which.size)
    out = np.empty(which.size, dtype=np.int64)
    for r in np.unique(which):
        sel = which == r
        out[sel] = np.searchsorted(cdf_rows[r], u[sel], side="right")
    return np.minimum(out, cdf_rows.shape[1] - 1)


def _sizes(rng, N, n):
    if isinstance(n, (tuple, list)):
        lo, hi = int(n[0]), int(n[1])
        if not 1 <= lo <= hi:
            raise ValidationError(f"per-domain size range {n} invalid")
        return rng.integers(lo, hi + 1, size=N)
    if int(n) < 1:
        raise ValidationError("per-domain size must be >= 1")
    return np.full(N, int(n), dtype=np.int64)


def sample_training_set(f: FactoredDistribution, N: int, n, seed: int) -> TrainingSet:
    """Draw ``N`` domains and their samples. ``n`` is an int or an inclusive ``(lo, hi)`` range."""
    if int(N) < 1:
        raise ValidationError("N must be >= 1")
    N = int(N)
    nx, k, nm, nd = f.support.shape
    rng = np.random.default_rng(seed)
    domains = _draw(rng, np.cumsum(f.p_d)[None, :], np.zeros(N, dtype=np.int64))
    m = _draw(rng, np.cumsum(f.p_m_given_d, axis=1), domains)
    sizes = _sizes(rng, N, n)
    record = np.repeat(np.arange(N), sizes)
    cells = _draw(rng, np.cumsum(f.p_xy_given_d.reshape(nd, nx * k), axis=1), domains[record])
    return TrainingSet(m=m, n=sizes, record=record, x=cells // k, y=cells % k, seed=seed,
                       distribution_id=distribution_id(f), n_m=nm, n_x=nx, n_y=k,
                       _domains=domains)


# --- classifiers ------------------------------------------------------------------


def _check_mode(mode):
    if mode not in MODES:
        raise ValidationError(f"mode must be 'pool' or 'dg', got {mode!r}")


def _argmax_low(rows, tol=kernels.TOL):
    return np.argmax(rows >= rows.max(axis=-1, keepdims=True) - tol, axis=-1)


@dataclass(frozen=True, eq=False)
class TabularClassifier:
    mode: str
    table: np.ndarray  # (n_x,) for pool, (n_x, n_m) for dg; -1 marks unseen cells
    fallback: int

    def predict_table(self, n_x: int, n_m: int, x_values=None) -> np.ndarray:
        t = np.where(self.table >= 0, self.table, self.fallback)
        return np.broadcast_to(t[:, None], (n_x, n_m)).copy() if self.mode == "pool" else t.copy()


def _fit_tabular(ws: WeightedSample, mode: str) -> TabularClassifier:
    _check_mode(mode)
    overall = kernels.weighted_counts(np.zeros(ws.x.size, dtype=np.int64), ws.y, ws.w, 1, ws.n_y)[0]
    fallback = int(_argmax_low(overall))
    if mode == "pool":
        cell, n_cells = ws.x, ws.n_x
    else:
        cell, n_cells = ws.x * ws.n_m + ws.m, ws.n_x * ws.n_m
    counts = kernels.weighted_counts(cell.astype(np.int64), ws.y.astype(np.int64), ws.w, n_cells, ws.n_y)
    seen = np.bincount(cell, minlength=n_cells) > 0
    table = np.where(seen, _argmax_low(counts), -1)
    if mode == "dg":
        table = table.reshape(ws.n_x, ws.n_m)
    return TabularClassifier(mode, table, fallback)


def fit_tabular(ts: TrainingSet, mode: str) -> TabularClassifier:
    """Per-cell domain-weighted majority label; unseen cells get the global weighted majority."""
    return _fit_tabular(ts.weighted(), mode)


@dataclass(frozen=True, eq=False)
class ThresholdClassifier:
    """One ``(threshold, orientation)`` per context; ``+1`` predicts class 2 for ``x > t``."""

    mode: str
    thresholds: np.ndarray
    orientations: np.ndarray

    def predict(self, x_real: np.ndarray, m: np.ndarray) -> np.ndarray:
        ctx = np.zeros_like(m) if self.mode == "pool" else m
        above = x_real > self.thresholds[ctx]
        return np.where(self.orientations[ctx] > 0, above, ~above).astype(np.int64)

    def predict_table(self, n_x: int, n_m: int, x_values) -> np.ndarray:
        xs = np.broadcast_to(np.asarray(x_values, dtype=np.float64)[:, None], (n_x, n_m))
        ms = np.broadcast_to(np.arange(n_m)[None, :], (n_x, n_m))
        return self.predict(xs.ravel(), ms.ravel()).reshape(n_x, n_m)


def _grouped(xr, labels, w, k):
    """Distinct sorted x and per-class weights at each of them."""
    ux, inv = np.unique(xr, return_inverse=True)
    counts = kernels.weighted_counts(inv.astype(np.int64), labels.astype(np.int64), w, ux.size, k)
    return ux, counts


def _fit_threshold(ws: WeightedSample, x_values, mode: str) -> ThresholdClassifier:
    _check_mode(mode)
    x_values = np.asarray(x_values)
    if x_values.ndim != 1 or not np.issubdtype(x_values.dtype, np.number):
        raise ValidationError("threshold classifiers need real scalar x values")
    x_values = x_values.astype(np.float64)
    n_ctx = 1 if mode == "pool" else ws.n_m
    ctx = np.zeros(ws.x.size, dtype=np.int64) if mode == "pool" else ws.m
    # class 1, class 2, anything else
    lab3 = np.minimum(ws.y, 2)
    thresholds = np.empty(n_ctx)
    orient = np.ones(n_ctx, dtype=np.int64)
    for c in range(n_ctx):
        sel = ctx == c
        if not np.any(sel):
            thresholds[c] = -np.inf
            continue
        ux, counts = _grouped(x_values[ws.x[sel]], lab3[sel], ws.w[sel], 3)
        s, o, _ = kernels.threshold_scan(np.ascontiguousarray(counts[:, 0]),
                                         np.ascontiguousarray(counts[:, 1]),
                                         np.ascontiguousarray(counts[:, 2]))
        s = int(s)
        if s == 0:
            thresholds[c] = -np.inf
        elif s == ux.size:
            thresholds[c] = np.inf
        else:
            thresholds[c] = 0.5 * (ux[s - 1] + ux[s])
        orient[c] = int(o)
    return ThresholdClassifier(mode, thresholds, orient)


def fit_threshold(ts: TrainingSet, x_values, mode: str) -> ThresholdClassifier:
    """Exact 0-1 ERM over threshold rules: one rule (pool) or one per metadata value (dg).

    Candidates are ``-inf``, midpoints between consecutive distinct sample x
    and ``+inf``, each with both orientations; ties go to the smallest
    threshold, then to orientation ``+1``.
    """
    return _fit_threshold(ts.weighted(), x_values, mode)


@dataclass(frozen=True)
class HistogramFamily:
    """Equal-width bins over ``x_range``; capacity ``k`` is the bin count.

    ``leaf="constant"`` puts one label in each bin (per metadata value for
    dg); ``leaf="stump"`` puts a threshold rule with a label on each side.
    Either way a pool classifier is the dg classifier that ignores m, and
    doubling k refines every bin, so classes with k in {1, 2, 4, ...} nest.
    """

    k: int
    x_range: tuple[float, float]
    leaf: str = "stump"

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValidationError("HistogramFamily.k must be an integer >= 1")
        if not self.x_range[0] < self.x_range[1]:
            raise ValidationError(f"HistogramFamily.x_range invalid: {self.x_range}")
        if self.leaf not in ("constant", "stump"):
            raise ValidationError("HistogramFamily.leaf must be 'constant' or 'stump'")

    def bin_of(self, x_real: np.ndarray) -> np.ndarray:
        lo, hi = self.x_range
        u = (np.asarray(x_real, dtype=np.float64) - lo) / (hi - lo)
        return np.clip(np.floor(u * self.k).astype(np.int64), 0, self.k - 1)


@dataclass(frozen=True, eq=False)
class HistogramClassifier:
    family: HistogramFamily
    mode: str
    thresholds: np.ndarray  # (n_ctx, k)
    left: np.ndarray
    right: np.ndarray

    def predict(self, x_real, m):
        x_real = np.asarray(x_real, dtype=np.float64)
        ctx = np.zeros(x_real.size, dtype=np.int64) if self.mode == "pool" else np.asarray(m)
        b = self.family.bin_of(x_real)
        t = self.thresholds[ctx, b]
        return np.where(x_real > t, self.right[ctx, b], self.left[ctx, b])

    def predict_table(self, n_x: int, n_m: int, x_values) -> np.ndarray:
        xs = np.broadcast_to(np.asarray(x_values, dtype=np.float64)[:, None], (n_x, n_m))
        ms = np.broadcast_to(np.arange(n_m)[None, :], (n_x, n_m))
        return self.predict(xs.ravel(), ms.ravel()).reshape(n_x, n_m)


def _fit_histogram(ws: WeightedSample, x_values, family: HistogramFamily, mode: str) -> HistogramClassifier:
    _check_mode(mode)
    x_values = np.asarray(x_values, dtype=np.float64)
    n_ctx = 1 if mode == "pool" else ws.n_m
    ctx = np.zeros(ws.x.size, dtype=np.int64) if mode == "pool" else ws.m
    k = family.k
    thr = np.full((n_ctx, k), np.inf)
    left = np.zeros((n_ctx, k), dtype=np.int64)
    right = np.zeros((n_ctx, k), dtype=np.int64)
    overall = kernels.weighted_counts(np.zeros(ws.x.size, dtype=np.int64), ws.y, ws.w, 1, ws.n_y)[0]
    fallback = int(_argmax_low(overall))
    for c in range(n_ctx):
        sel = ctx == c
        left[c] = fallback
        right[c] = fallback
        if not np.any(sel):
            continue
        ux, counts = _grouped(x_values[ws.x[sel]], ws.y[sel], ws.w[sel], ws.n_y)
        bins = family.bin_of(ux)
        bin_start = np.searchsorted(bins, np.arange(k + 1), side="left").astype(np.int64)
        if family.leaf == "constant":
            per_bin = np.zeros((k, ws.n_y))
            np.add.at(per_bin, bins, counts)
            filled = bin_start[1:] > bin_start[:-1]
            labels = np.where(filled, _argmax_low(per_bin), fallback)
            left[c] = labels
            right[c] = labels
            thr[c] = -np.inf
            continue
        split, lab_l, lab_r, _ = kernels.stump_scan(np.ascontiguousarray(counts), bin_start)
        for b in range(k):
            lo, hi = bin_start[b], bin_start[b + 1]
            if hi == lo:
                continue
            s = int(split[b])
            left[c, b] = lab_l[b]
            right[c, b] = lab_r[b]
            thr[c, b] = -np.inf if s == 0 else 0.5 * (ux[lo + s - 1] + ux[lo + s]) if s < hi - lo else np.inf
    return HistogramClassifier(family, mode, thr, left, right)


def fit_histogram(ts: TrainingSet, x_values, family: HistogramFamily, mode: str) -> HistogramClassifier:
    return _fit_histogram(ts.weighted(), x_values, family, mode)


# --- risk evaluation ----------------------------------------------------------------


def population_risk(clf, j: JointTable) -> float:
    """Exact risk ``P(clf(X, M) != Y)`` under the joint table."""
    nx, k, nm, _ = j.p.shape
    pred = clf.predict_table(nx, nm, j.support.x_array)
    p_xym = j.p.sum(axis=3)
    hit = p_xym[np.arange(nx)[:, None], pred, np.arange(nm)[None, :]]
    return float(max(0.0, 1.0 - hit.sum()))


def empirical_risk(clf, ws: WeightedSample, x_values) -> float:
    """Weighted 0-1 risk of ``clf`` on the sample (weights need not sum to 1)."""
    pred = clf.predict_table(ws.n_x, ws.n_m, x_values)[ws.x, ws.m]
    return float(np.sum(ws.w * (pred != ws.y)) / np.sum(ws.w))


# --- capacity sweep ----------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    k: int
    r_pool: float
    r_dg: float

    @property
    def gap(self) -> float:
        return self.r_pool - self.r_dg


def default_x_range(f: FactoredDistribution) -> tuple[float, float]:
    xs = f.support.x_array
    lo, hi = float(xs.min()), float(xs.max())
    return (lo, hi) if hi > lo else (lo - 0.5, lo + 0.5)


def capacity_sweep(f: FactoredDistribution, ks: Sequence[int], leaf: str = "stump",
                   x_range=None, ts: TrainingSet | None = None) -> list[SweepRow]:
    """Restricted-class risks of pooling and domain-informed histograms for each capacity.

    Without ``ts`` the classes' exact optima are computed from the
    distribution. With ``ts`` the classifiers are fitted on it and their
    exact population risks reported. In exact mode the pool risk may never
    fall below the dg risk; :class:`BoundViolation` is raised if it does.
    """
    ks = [int(k) for k in ks]
    if any(b <= a for a, b in zip(ks, ks[1:])) or not ks:
        raise ValidationError("ks must be a nonempty, strictly increasing list")
    x_range = tuple(x_range) if x_range is not None else default_x_range(f)
    j = build_joint(f)
    ws = ts.weighted() if ts is not None else WeightedSample.from_joint(j)
    xs = f.support.x_array
    rows = []
    for k in ks:
        fam = HistogramFamily(k, x_range, leaf)
        r_pool = population_risk(_fit_histogram(ws, xs, fam, "pool"), j)
        r_dg = population_risk(_fit_histogram(ws, xs, fam, "dg"), j)
        if ts is None and r_pool < r_dg - BOUND_TOL:
            raise BoundViolation(f"k={k}: restricted pool risk {r_pool!r} < dg risk {r_dg!r}")
        rows.append(SweepRow(k, r_pool, r_dg))
    return rows


def restricted_threshold_risks(f: FactoredDistribution) -> tuple[float, float]:
    """Exact optimal risks over the pooled and per-metadata threshold classes."""
    j = build_joint(f)
    ws = WeightedSample.from_joint(j)
    xs = f.support.x_array
    return (population_risk(_fit_threshold(ws, xs, "pool"), j),
            population_risk(_fit_threshold(ws, xs, "dg"), j))


# --- experiments -------------------------------------------------------------------


FAMILIES = ("tabular", "threshold", "histogram")


@dataclass(frozen=True)
class ExperimentConfig:
    generator: str
    generator_params: dict = field(default_factory=dict)
    family: str = "tabular"
    N: int = 100
    n: int | tuple[int, int] = 10
    trials: int = 20
    seed: int = 0
    k: int = 8
    leaf: str = "stump"
    x_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if int(self.trials) < 1:
            raise ValidationError("trials must be >= 1")
        if int(self.N) < 1:
            raise ValidationError("N must be >= 1")
        if isinstance(self.n, (tuple, list)):
            if len(self.n) != 2 or not 1 <= int(self.n[0]) <= int(self.n[1]):
                raise ValidationError(f"n range invalid: {self.n}")
        elif int(self.n) < 1:
            raise ValidationError("n must be >= 1")
        if int(self.seed) < 0:
            raise ValidationError("seed must be >= 0")


@dataclass(frozen=True)
class TrialResult:
    trial: int
    seed: int
    train_risk_pool: float
    train_risk_dg: float
    risk_pool: float
    risk_dg: float


@dataclass(frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    trials: list[TrialResult]
    r_pool: float
    r_dg: float

    def aggregate(self) -> dict[str, tuple[float, float]]:
        """Mean and standard error across trials of every per-trial risk."""
        out = {}
        for name in ("train_risk_pool", "train_risk_dg", "risk_pool", "risk_dg"):
            v = np.array([getattr(t, name) for t in self.trials])
            se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
            out[name] = (float(v.mean()), se)
        return out


def _fit(ws, xs, cfg: ExperimentConfig, mode):
    if cfg.family == "tabular":
        return _fit_tabular(ws, mode)
    if cfg.family == "threshold":
        return _fit_threshold(ws, xs, mode)
    x_range = cfg.x_range
    if x_range is None:
        x_range = (float(xs.min()), float(xs.max())) if xs.max() > xs.min() else (xs[0] - .5, xs[0] + .5)
    return _fit_histogram(ws, xs, HistogramFamily(cfg.k, tuple(x_range), cfg.leaf), mode)


def run_trial(f: FactoredDistribution, cfg: ExperimentConfig, trial: int) -> TrialResult:
    seed = trial_seed(int(cfg.seed), trial)
    ts = sample_training_set(f, cfg.N, cfg.n, seed)
    j = build_joint(f)
    ws = ts.weighted()
    xs = f.support.x_array
    pool = _fit(ws, xs, cfg, "pool")
    dg = _fit(ws, xs, cfg, "dg")
    return TrialResult(trial, seed, empirical_risk(pool, ws, xs), empirical_risk(dg, ws, xs),
                       population_risk(pool, j), population_risk(dg, j))


def _run_trial_args(args):
    return run_trial(*args)


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("DG_RISKLAB_JOBS", "1")))
    except ValueError:
        raise ValidationError("DG_RISKLAB_JOBS must be an integer") from None


def run_experiment(cfg: ExperimentConfig, f: FactoredDistribution | None = None,
                   jobs: int | None = None) -> ExperimentResult:
    """Sample, fit both learners and score them exactly, once per trial.

    Trial ``t`` uses seed ``trial_seed(cfg.seed, t)``, so results do not
    depend on ``jobs``.
    """
    from .registry import build_generator

    if f is None:
        f = build_generator(cfg.generator, cfg.generator_params)
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    args = [(f, cfg, t) for t in range(int(cfg.trials))]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_trial_args, args))
    else:
        results = [run_trial(*a) for a in args]
    results.sort(key=lambda r: r.trial)
    rep = risks(build_joint(f), solve_bayes(build_joint(f)))
    return ExperimentResult(cfg, results, rep.r_pool, rep.r_dg)


def config_echo(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    if isinstance(d["n"], tuple):
        d["n"] = list(d["n"])
    return d
