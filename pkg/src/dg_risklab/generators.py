"""Named constructions and random instance families.

Continuous examples are discretized here on uniform grids; the exact layer
only ever sees finite supports.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .bayes import pd_class_certificate, solve_bayes
from .distribution import FactoredDistribution, Support, build_joint
from .errors import InfeasibleError, ValidationError

MAX_SIZES = (8, 4, 4, 6)


def _normalize(a, axis=-1):
    return a / a.sum(axis=axis, keepdims=True)


def _positive_uniform(rng, shape):
    # draws in (0, 1]
    return 1.0 - rng.random(shape)


def _check_sizes(sizes, limit=MAX_SIZES):
    nx, k, nm, nd = (int(s) for s in sizes)
    if min(nx, nm, nd) < 1 or k < 2:
        raise ValidationError(f"sizes {sizes}: need |X|,|M|,|D| >= 1 and K >= 2")
    if limit is not None and any(s > l for s, l in zip((nx, k, nm, nd), limit)):
        raise ValidationError(f"sizes {sizes} exceed the limits {limit}")
    return nx, k, nm, nd


def _symbols(prefix, n):
    return tuple(f"{prefix}{i + 1}" for i in range(n))


def _support(nx, k, nm, nd, x_values=None):
    xs = tuple(float(i) for i in range(nx)) if x_values is None else tuple(x_values)
    return Support(xs, k, _symbols("m", nm), _symbols("d", nd))


def make_random(sizes, seed: int) -> FactoredDistribution:
    """Every factor row is an independently drawn, normalized positive uniform vector."""
    nx, k, nm, nd = _check_sizes(sizes)
    rng = np.random.default_rng(seed)
    p_d = _normalize(_positive_uniform(rng, nd))
    p_md = _normalize(_positive_uniform(rng, (nd, nm)))
    p_xy = _positive_uniform(rng, (nd, nx * k))
    p_xy = _normalize(p_xy).reshape(nd, nx, k)
    return FactoredDistribution(_support(nx, k, nm, nd), p_d, p_md, p_xy,
                                name=f"random{tuple(sizes)}@{seed}")


def random_sizes(rng: np.random.Generator, limit=MAX_SIZES, min_m=1) -> tuple[int, int, int, int]:
    nx, k, nm, nd = limit
    return (int(rng.integers(1, nx + 1)), int(rng.integers(2, k + 1)),
            int(rng.integers(min_m, nm + 1)), int(rng.integers(1, nd + 1)))


def make_pd1(constant_m: bool = False) -> FactoredDistribution:
    """One feature point, two equiprobable domains with opposite posteriors.

    ``P(Y=1 | x1, d1) = 0.9`` and ``P(Y=1 | x1, d2) = 0.1``. Metadata equals the
    domain, or is a single uninformative symbol with ``constant_m``.
    """
    support = Support((0.0,), 2, ("m1",) if constant_m else ("m1", "m2"), ("d1", "d2"))
    p_md = [[1.0], [1.0]] if constant_m else [[1.0, 0.0], [0.0, 1.0]]
    p_xy = [[[0.9, 0.1]], [[0.1, 0.9]]]
    return FactoredDistribution(support, [0.5, 0.5], p_md, p_xy,
                                name="pd1-constant-m" if constant_m else "pd1")


# --- disjoint supports, shared threshold rule -------------------


@dataclass(frozen=True)
class Example1Config:
    p: float = 0.7
    grid_n: int = 200

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValidationError(f"Example1Config.p must lie in (0, 1), got {self.p}")
        if int(self.grid_n) != self.grid_n or self.grid_n < 2:
            raise ValidationError(f"Example1Config.grid_n must be an integer >= 2, got {self.grid_n}")


@dataclass(frozen=True)
class Example1Analytic:
    r_pool_G: float
    r_dg_F: float
    r_pool_star: float
    r_dg_star: float


def example1_analytic(p: float) -> Example1Analytic:
    """Closed-form risks; ``min(p, 1-p) / 2`` is evaluated on the decimal ``p`` and rounded once."""
    q = Fraction(repr(float(p)))
    return Example1Analytic(float(min(q, 1 - q) / 2), 0.0, 0.0, 0.0)


def make_example1(c: Example1Config) -> tuple[FactoredDistribution, Example1Analytic]:
    """M = D in {1, 2}, P(M=1) = p; X|M=1 on a grid over [0, 2] labelled by x >= 1,
    X|M=2 on a grid over [4, 6] labelled by x >= 5.

    Each unit interval carries ``grid_n`` steps, endpoints included, so each
    domain has ``2 * grid_n + 1`` equiprobable points. A point exactly at a
    threshold takes the label of the right limit (class 2).
    """
    n = int(c.grid_n)
    steps = np.arange(2 * n + 1)
    grid = steps / n
    xs = np.concatenate([grid, 4.0 + grid])
    npts = steps.size
    p_xy = np.zeros((2, 2 * npts, 2))
    right = steps >= n
    for d in range(2):
        rows = slice(d * npts, (d + 1) * npts)
        block = np.zeros((npts, 2))
        block[~right, 0] = 1.0 / npts
        block[right, 1] = 1.0 / npts
        p_xy[d, rows] = block
    support = Support(tuple(xs), 2, ("1", "2"), ("1", "2"))
    f = FactoredDistribution(support, [c.p, 1.0 - c.p], np.eye(2), p_xy,
                             name=f"example1(p={c.p!r},grid_n={n})")
    return f, example1_analytic(c.p)


# --- agree / disagree posterior curves ---------------------------


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


CURVE_FAMILIES = {
    # name -> callable(x, **params)
    "logistic": lambda x, scale=1.0, shift=0.0: _sigmoid(scale * (x - shift)),
}

FIGURE1_DEFAULT_CURVES = {
    "agree": (("logistic", {"scale": 1.0, "shift": 0.0}), ("logistic", {"scale": 2.0, "shift": 0.0})),
    "disagree": (("logistic", {"scale": 1.0, "shift": 1.0}), ("logistic", {"scale": 1.0, "shift": -1.0})),
}


@dataclass(frozen=True)
class Figure1Config:
    scenario: str = "disagree"
    grid: tuple[float, float, int] = (-3.0, 3.0, 121)
    curves: tuple | None = field(default=None)

    def __post_init__(self):
        if self.scenario not in FIGURE1_DEFAULT_CURVES:
            raise ValidationError(f"Figure1Config.scenario must be 'agree' or 'disagree', got {self.scenario!r}")
        x_min, x_max, n = self.grid
        if not x_min < x_max or int(n) != n or n < 2:
            raise ValidationError(f"Figure1Config.grid invalid: {self.grid}")
        curves = self.curves or FIGURE1_DEFAULT_CURVES[self.scenario]
        if len(curves) != 2 or any(c[0] not in CURVE_FAMILIES for c in curves):
            raise ValidationError(f"Figure1Config.curves: need two curves from {sorted(CURVE_FAMILIES)}")
        object.__setattr__(self, "curves", tuple(curves))

    def x_grid(self) -> np.ndarray:
        x_min, x_max, n = self.grid
        n = int(n)
        # x_min + i * step keeps the midpoint of a symmetric grid at exactly 0
        return x_min + (x_max - x_min) * (np.arange(n) / (n - 1))


def make_figure1(c: Figure1Config) -> tuple[FactoredDistribution, np.ndarray]:
    """Two equiprobable domains (M = D), X uniform on the grid, ``P(Y=2|x,m) = eta_m(x)``.

    Returns the distribution and curve rows ``(x, eta1, eta2, eta_pooled)``.
    """
    xs = c.x_grid()
    etas = []
    for name, params in c.curves:
        eta = np.asarray(CURVE_FAMILIES[name](xs, **params), dtype=np.float64)
        if np.any((eta < 0) | (eta > 1)):
            raise ValidationError(f"curve {name}{params} leaves [0, 1] on the grid")
        etas.append(eta)
    n = xs.size
    p_xy = np.empty((2, n, 2))
    for d, eta in enumerate(etas):
        p_xy[d, :, 0] = (1.0 - eta) / n
        p_xy[d, :, 1] = eta / n
    support = Support(tuple(xs), 2, ("1", "2"), ("1", "2"))
    f = FactoredDistribution(support, [0.5, 0.5], np.eye(2), p_xy, name=f"figure1-{c.scenario}")
    pooled = 0.5 * (etas[0] + etas[1])
    curves = np.column_stack([xs, etas[0], etas[1], pooled])
    return f, curves


# --- posterior-drift class members -----------------------------------------


def max_disagreement(k: int, nm: int) -> float:
    """Largest ``1 - sum pi_k^2`` reachable with uniform P(M|X) and labels cycling over m."""
    counts = np.bincount(np.arange(nm) % k, minlength=k) / nm
    return float(1.0 - np.sum(counts ** 2))


def pd_feasible(gamma: float, epsilon: float, k: int, nm: int) -> bool:
    return 0.0 < gamma <= 1.0 and 0.0 < epsilon <= max_disagreement(k, nm) + 1e-12


def _balanced_labels(weights, k, rng):
    """Assign labels to metadata values so that label masses are as even as possible."""
    order = np.argsort(-weights, kind="stable")
    load = np.zeros(k)
    labels = np.empty(weights.size, dtype=np.int64)
    offset = rng.permutation(k)
    for m in order:
        # least-loaded label, rotated by a random offset to vary the pattern
        c = offset[int(np.argmin(load[offset]))]
        labels[m] = c
        load[c] += weights[m]
    return labels


def _disagreement(p_x_m, labels, k):
    p_x = p_x_m.sum(axis=1)
    w = p_x_m / p_x[:, None]
    pi = np.stack([(w * (labels == c)).sum(axis=1) for c in range(k)], axis=1)
    per_x = 1.0 - (pi ** 2).sum(axis=1)
    return per_x, float(np.sum(p_x * per_x))


def make_pd_member(gamma: float, epsilon: float, sizes, seed: int,
                   max_retries: int = 64) -> FactoredDistribution:
    """A certified member of the posterior-drift class at (gamma, epsilon).

    Domains are grouped onto metadata values by ``m = d mod |M|`` (so
    ``|D| >= |M|`` is required) and share the posterior ``P(Y|x,d)`` within a
    group; the top class of every (x, m) cell carries mass at least
    ``(1 + gamma) / 2``, which forces the margin. Labels start random, then
    cells with the least cross-metadata conflict are rebalanced until the
    disagreement target is met. Attempts blend the domain weights and feature
    marginals toward uniform with growing strength; the second half of the
    attempts uses the fully uniform blend.
    """
    if not (0.0 < gamma <= 1.0 and 0.0 < epsilon <= 1.0):
        raise ValidationError("make_pd_member: need 0 < gamma <= 1 and 0 < epsilon <= 1")
    nx, k, nm, nd = _check_sizes(sizes)
    if nd < nm:
        raise ValidationError("make_pd_member: need |D| >= |M|")
    rng = np.random.default_rng(seed)
    group = np.arange(nd) % nm
    group_size = np.bincount(group, minlength=nm)
    uniform_d = 1.0 / (nm * group_size[group])  # makes P(M) uniform
    support = _support(nx, k, nm, nd)
    p_md = np.zeros((nd, nm))
    p_md[np.arange(nd), group] = 1.0
    q_floor = (1.0 + gamma) / 2.0

    for attempt in range(max_retries):
        lam = 0.0 if attempt >= max_retries // 2 else 0.5 ** attempt
        p_d = _normalize((1 - lam) * uniform_d + lam * _normalize(_positive_uniform(rng, nd)))
        shared_x = _normalize(_positive_uniform(rng, nx))
        p_x_d = _normalize((1 - lam) * shared_x[None, :] + lam * _normalize(_positive_uniform(rng, (nd, nx))))

        p_x_m = np.zeros((nx, nm))
        for d in range(nd):
            p_x_m[:, group[d]] += p_d[d] * p_x_d[d]
        labels = rng.integers(0, k, size=(nx, nm))
        per_x, eps = _disagreement(p_x_m, labels, k)
        if eps < epsilon:
            for x in np.argsort(per_x, kind="stable"):
                labels[x] = _balanced_labels(p_x_m[x] / p_x_m[x].sum(), k, rng)
                per_x, eps = _disagreement(p_x_m, labels, k)
                if eps >= epsilon:
                    break

        top = q_floor + (1.0 - q_floor) * rng.uniform(0.05, 1.0, size=(nx, nm))
        top = np.where(gamma >= 1.0, 1.0, top)
        rest = _positive_uniform(rng, (nx, nm, k))
        rest[np.arange(nx)[:, None], np.arange(nm)[None, :], labels] = 0.0
        rest_sum = rest.sum(axis=2, keepdims=True)
        rest = np.divide(rest, rest_sum, out=np.zeros_like(rest), where=rest_sum > 0)
        post = rest * (1.0 - top)[:, :, None]
        post[np.arange(nx)[:, None], np.arange(nm)[None, :], labels] = top

        p_xy = p_x_d[:, :, None] * post[:, group, :].transpose(1, 0, 2)
        p_xy = p_xy / p_xy.sum(axis=(1, 2), keepdims=True)
        f = FactoredDistribution(support, p_d, p_md, p_xy,
                                 name=f"pd_member(gamma={gamma!r},epsilon={epsilon!r})@{seed}")
        j = build_joint(f)
        if pd_class_certificate(j, solve_bayes(j), gamma, epsilon).member:
            return f
    raise InfeasibleError(
        f"no member of the posterior-drift class at gamma={gamma}, epsilon={epsilon} "
        f"for sizes {tuple(sizes)} after {max_retries} attempts"
    )


# --- covariate shift --------------------------------------------------------


def make_covariate_shift(sizes, seed: int, disjoint: bool = False) -> FactoredDistribution:
    """Shared ``P(Y|x)`` across domains, domain-specific ``P(x|d)``.

    With ``disjoint=True`` the feature points are dealt out to domains so that
    no two domains share an x (requires ``|X| >= |D|``).
    """
    nx, k, nm, nd = _check_sizes(sizes, limit=None)
    rng = np.random.default_rng(seed)
    shared_post = _normalize(_positive_uniform(rng, (nx, k)))
    p_x_d = _positive_uniform(rng, (nd, nx))
    if disjoint:
        if nx < nd:
            raise ValidationError("make_covariate_shift: disjoint supports need |X| >= |D|")
        owner = rng.permutation(np.arange(nx) % nd)
        p_x_d = np.where(owner[None, :] == np.arange(nd)[:, None], p_x_d, 0.0)
    p_x_d = _normalize(p_x_d)
    p_xy = p_x_d[:, :, None] * shared_post[None, :, :]
    p_xy = p_xy / p_xy.sum(axis=(1, 2), keepdims=True)
    p_d = _normalize(_positive_uniform(rng, nd))
    p_md = _normalize(_positive_uniform(rng, (nd, nm)))
    return FactoredDistribution(_support(nx, k, nm, nd), p_d, p_md, p_xy,
                                name=f"covariate_shift{tuple(sizes)}@{seed}"
                                + ("-disjoint" if disjoint else ""))


# --- metadata refinement ----------------------------------------------------


def refine_metadata(f: FactoredDistribution, m_index: int, seed: int) -> FactoredDistribution:
    """Split metadata value ``m_index`` in two, dividing ``P(m|d)`` by a random share per d.

    Merging the two new symbols recovers ``f`` exactly, so the refined
    metadata is at least as informative.
    """
    s = f.support
    rng = np.random.default_rng(seed)
    share = rng.random(len(s.d_values))
    col = f.p_m_given_d[:, m_index]
    p_md = np.column_stack([
        f.p_m_given_d[:, :m_index],
        col * share,
        col * (1.0 - share),
        f.p_m_given_d[:, m_index + 1:],
    ])
    base = s.m_values[m_index]
    new_m = s.m_values[:m_index] + (f"{base}a", f"{base}b") + s.m_values[m_index + 1:]
    support = Support(s.x_values, s.y_count, new_m, s.d_values)
    return FactoredDistribution(support, f.p_d, p_md, f.p_xy_given_d, name=f"{f.name}+refined")
