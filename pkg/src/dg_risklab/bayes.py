"""Bayes classifiers, Bayes risks and the risk-gap bounds.

Three information settings are compared: predicting from ``x`` alone
(pooling), from ``(x, m)`` (domain-informed) and from ``(x, d)`` (full
domain knowledge). Everything is an exact finite sum over cells of positive
mass; cells of zero mass have undefined classifiers (label ``-1``, margin
``nan``) and never enter an expectation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .distribution import JointTable
from .errors import BoundViolation, ConsistencyError

TIE_TOL = 1e-12
BOUND_TOL = 1e-12
UNDEFINED = -1


def argmax_low(post: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    """Argmax over the last axis; values within ``tol`` of the max tie, lowest index wins."""
    top = post.max(axis=-1, keepdims=True)
    return np.argmax(post >= top - tol, axis=-1)


def margin(post: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    """Largest minus second-largest posterior value; exactly 0 on ties."""
    s = np.sort(post, axis=-1)
    gap = s[..., -1] - s[..., -2]
    return np.where(gap <= tol, 0.0, gap)


def _solve(mass_xy: np.ndarray):
    """Classifier and margin tables from a (..., K) table of joint masses."""
    total = mass_xy.sum(axis=-1)
    defined = total > 0
    post = np.divide(mass_xy, total[..., None], out=np.zeros_like(mass_xy),
                     where=defined[..., None])
    labels = np.where(defined, argmax_low(post), UNDEFINED)
    margins = np.where(defined, margin(post), np.nan)
    return labels, margins, post


@dataclass(frozen=True, eq=False)
class BayesSolution:
    """Lookup tables of the three Bayes classifiers (0-based class indices).

    ``f_pool[x]``, ``f_dg[x, m]`` and ``f_full[x, d]`` hold ``-1`` on cells of
    zero mass; ``margin_xm`` and ``margin_xd`` hold ``nan`` there.
    """

    f_pool: np.ndarray
    f_dg: np.ndarray
    f_full: np.ndarray
    margin_xm: np.ndarray
    margin_xd: np.ndarray
    post_x: np.ndarray
    post_xm: np.ndarray
    post_xd: np.ndarray

    def labels(self) -> dict[str, np.ndarray]:
        """The classifiers with classes reported as 1..K (0 where undefined)."""
        return {"f_pool": self.f_pool + 1, "f_dg": self.f_dg + 1, "f_full": self.f_full + 1}


def solve_bayes(j: JointTable) -> BayesSolution:
    p = j.p
    f_pool, _, post_x = _solve(p.sum(axis=(2, 3)))
    f_dg, margin_xm, post_xm = _solve(p.sum(axis=3).transpose(0, 2, 1))
    f_full, margin_xd, post_xd = _solve(p.sum(axis=2).transpose(0, 2, 1))
    return BayesSolution(f_pool, f_dg, f_full, margin_xm, margin_xd, post_x, post_xm, post_xd)


@dataclass(frozen=True)
class RiskReport:
    r_pool: float
    r_dg: float
    r_full: float
    gap_pool_dg: float
    gap_dg_full: float
    thm1_lower: float
    thm1_upper: float
    thm3_lower: float
    thm3_upper: float
    disagreement_prob_pool_dg: float
    disagreement_prob_full_dg: float
    epsilon_hat: float
    gamma_min: float

    def to_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _bayes_risk(mass: np.ndarray) -> float:
    # E[1 - max_k P(Y=k | context)] = sum over contexts of (P(context) - max_k P(context, k))
    return float(np.sum(mass.sum(axis=-1) - mass.max(axis=-1)))


def thm1_bounds(j: JointTable, b: BayesSolution) -> tuple[float, float]:
    """Margin-weighted and plain disagreement mass between ``f_pool`` and ``f_dg``."""
    p_xm = j.p.sum(axis=(1, 3))
    live = p_xm > 0
    differ = live & (b.f_pool[:, None] != b.f_dg)
    lower = float(np.sum(np.where(differ, p_xm * np.nan_to_num(b.margin_xm), 0.0)))
    upper = float(np.sum(p_xm[differ]))
    return lower, upper


def thm3_bounds(j: JointTable, b: BayesSolution) -> tuple[float, float]:
    """Same as :func:`thm1_bounds` for ``f_full`` vs ``f_dg``, margins of ``P(Y|x,d)``."""
    p_xmd = j.p.sum(axis=1)
    live = p_xmd > 0
    differ = live & (b.f_full[:, None, :] != b.f_dg[:, :, None])
    weights = np.nan_to_num(b.margin_xd)[:, None, :]
    lower = float(np.sum(np.where(differ, p_xmd * weights, 0.0)))
    upper = float(np.sum(p_xmd[differ]))
    return lower, upper


def epsilon_direct(j: JointTable, b: BayesSolution) -> float:
    """``P(f_dg(X,M) != f_dg(X,M'))`` with ``M, M'`` iid from ``P(M|X)``, by double sum."""
    p_xm = j.p.sum(axis=(1, 3))
    p_x = p_xm.sum(axis=1)
    total = 0.0
    for x in np.nonzero(p_x > 0)[0]:
        w = p_xm[x] / p_x[x]
        differ = b.f_dg[x][:, None] != b.f_dg[x][None, :]
        total += p_x[x] * float(np.sum(np.outer(w, w)[differ]))
    return float(total)


def epsilon_identity(j: JointTable, b: BayesSolution) -> float:
    """The same probability as ``E_X[1 - sum_k pi_k(X)^2]``, ``pi_k(x) = P(f_dg(x,M)=k | x)``."""
    k = j.p.shape[1]
    p_xm = j.p.sum(axis=(1, 3))
    p_x = p_xm.sum(axis=1)
    live = p_x > 0
    w = np.divide(p_xm, p_x[:, None], out=np.zeros_like(p_xm), where=live[:, None])
    onehot = b.f_dg[:, :, None] == np.arange(k)[None, None, :]
    pi = np.einsum("xm,xmk->xk", w, onehot.astype(np.float64))
    return float(np.sum(p_x[live] * (1.0 - np.sum(pi[live] ** 2, axis=1))))


def epsilon_disagreement(j: JointTable, b: BayesSolution, tol: float = 1e-12) -> float:
    direct = epsilon_direct(j, b)
    identity = epsilon_identity(j, b)
    if abs(direct - identity) > tol:
        raise ConsistencyError(
            f"disagreement probability: direct sum {direct!r} != identity {identity!r}"
        )
    return direct


def gamma_min(j: JointTable, b: BayesSolution) -> float:
    """Smallest margin over (x, m) cells of positive mass."""
    live = j.p.sum(axis=(1, 3)) > 0
    return float(np.min(b.margin_xm[live]))


def zero_mass_xm_cells(j: JointTable) -> int:
    """Number of (x, m) cells with zero mass; their margin is undefined and not counted."""
    return int(np.sum(j.p.sum(axis=(1, 3)) == 0))


def risks(j: JointTable, b: BayesSolution) -> RiskReport:
    p = j.p
    r_pool = _bayes_risk(p.sum(axis=(2, 3)))
    r_dg = _bayes_risk(p.sum(axis=3).transpose(0, 2, 1))
    r_full = _bayes_risk(p.sum(axis=2).transpose(0, 2, 1))
    t1 = thm1_bounds(j, b)
    t3 = thm3_bounds(j, b)
    return RiskReport(
        r_pool=r_pool,
        r_dg=r_dg,
        r_full=r_full,
        gap_pool_dg=r_pool - r_dg,
        gap_dg_full=r_dg - r_full,
        thm1_lower=t1[0],
        thm1_upper=t1[1],
        thm3_lower=t3[0],
        thm3_upper=t3[1],
        disagreement_prob_pool_dg=t1[1],
        disagreement_prob_full_dg=t3[1],
        epsilon_hat=epsilon_disagreement(j, b),
        gamma_min=gamma_min(j, b),
    )


def analyze(j: JointTable) -> tuple[BayesSolution, RiskReport]:
    b = solve_bayes(j)
    return b, risks(j, b)


@dataclass(frozen=True)
class Slacks:
    """Signed slack of every inequality; negative beyond ``-BOUND_TOL`` is a violation."""

    hierarchy_pool_dg: float
    hierarchy_dg_full: float
    thm1_lower: float
    thm1_upper: float
    thm3_lower: float
    thm3_upper: float
    margin_guarantee: float

    def worst(self) -> float:
        return min(asdict(self).values())

    def violated(self, tol: float = BOUND_TOL) -> list[str]:
        return [k for k, v in asdict(self).items() if v < -tol]


def slacks(r: RiskReport) -> Slacks:
    return Slacks(
        hierarchy_pool_dg=r.r_pool - r.r_dg,
        hierarchy_dg_full=r.r_dg - r.r_full,
        thm1_lower=r.gap_pool_dg - r.thm1_lower,
        thm1_upper=r.thm1_upper - r.gap_pool_dg,
        thm3_lower=r.gap_dg_full - r.thm3_lower,
        thm3_upper=r.thm3_upper - r.gap_dg_full,
        margin_guarantee=r.gap_pool_dg - r.gamma_min * r.epsilon_hat / 2.0,
    )


@dataclass(frozen=True)
class PosteriorDriftCertificate:
    member: bool
    margin_ok: bool
    disagreement_ok: bool
    gamma: float
    epsilon: float
    gamma_min: float
    epsilon_hat: float
    guaranteed_gain: float
    gap_pool_dg: float


def pd_class_certificate(
    j: JointTable, b: BayesSolution, gamma: float, epsilon: float, tol: float = BOUND_TOL
) -> PosteriorDriftCertificate:
    """Membership in the posterior-drift class and the implied ``gap >= gamma * epsilon / 2``.

    Raises :class:`BoundViolation` if the instance is a member but the gap
    falls short of the guarantee.
    """
    if not (0.0 <= gamma <= 1.0 and 0.0 <= epsilon <= 1.0):
        raise ValueError("gamma and epsilon must lie in [0, 1]")
    r = risks(j, b)
    margin_ok = r.gamma_min >= gamma - tol
    disagreement_ok = r.epsilon_hat >= epsilon - tol
    cert = PosteriorDriftCertificate(
        member=margin_ok and disagreement_ok,
        margin_ok=margin_ok,
        disagreement_ok=disagreement_ok,
        gamma=gamma,
        epsilon=epsilon,
        gamma_min=r.gamma_min,
        epsilon_hat=r.epsilon_hat,
        guaranteed_gain=gamma * epsilon / 2.0,
        gap_pool_dg=r.gap_pool_dg,
    )
    if cert.member and r.gap_pool_dg < cert.guaranteed_gain - tol:
        raise BoundViolation(
            f"posterior-drift member with gap {r.gap_pool_dg!r} < gamma*epsilon/2 = "
            f"{cert.guaranteed_gain!r}"
        )
    return cert


@dataclass(frozen=True)
class CovariateShiftCertificate:
    covariate_shift: bool
    risk_difference: float


def covariate_shift_certificate(
    j: JointTable, b: BayesSolution, tol: float = BOUND_TOL
) -> CovariateShiftCertificate:
    """Whether ``f_dg(x, m)`` ignores ``m`` on positive-mass cells.

    When it does, pooled and domain-informed Bayes risks must coincide;
    :class:`BoundViolation` is raised otherwise.
    """
    live = j.p.sum(axis=(1, 3)) > 0
    constant = True
    for x in range(live.shape[0]):
        labels = b.f_dg[x][live[x]]
        if labels.size and np.any(labels != labels[0]):
            constant = False
            break
    r = risks(j, b)
    diff = r.r_pool - r.r_dg
    if constant and abs(diff) > tol:
        raise BoundViolation(f"covariate shift but r_pool - r_dg = {diff!r}")
    return CovariateShiftCertificate(constant, diff)


def classifiers_agree(j: JointTable, b: BayesSolution) -> bool:
    """``f_pool(x) == f_dg(x, m)`` on every (x, m) of positive mass."""
    live = j.p.sum(axis=(1, 3)) > 0
    return bool(np.all((b.f_pool[:, None] == b.f_dg)[live]))


def with_faulty_margins(b: BayesSolution) -> BayesSolution:
    """Negative control: every defined margin replaced by 1."""
    return replace(
        b,
        margin_xm=np.where(np.isnan(b.margin_xm), np.nan, 1.0),
        margin_xd=np.where(np.isnan(b.margin_xd), np.nan, 1.0),
    )
