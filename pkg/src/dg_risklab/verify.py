"""Property suite over seeded instances: every bound checked with explicit slack."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bayes
from .distribution import build_joint, check_conditional_independence
from .errors import BoundViolation
from .generators import (
    MAX_SIZES,
    make_covariate_shift,
    make_pd_member,
    make_random,
    pd_feasible,
    random_sizes,
    refine_metadata,
)
from .specfile import emit_spec


@dataclass
class CheckStats:
    count: int = 0
    worst_slack: float = float("inf")
    failures: int = 0

    def record(self, slack: float, tol: float = bayes.BOUND_TOL) -> bool:
        self.count += 1
        self.worst_slack = min(self.worst_slack, float(slack))
        ok = slack >= -tol
        if not ok:
            self.failures += 1
        return ok


@dataclass
class Failure:
    check: str
    instance: str
    slack: float
    spec: str


@dataclass
class VerifyReport:
    checks: dict[str, CheckStats] = field(default_factory=dict)
    failures: list[Failure] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def stat(self, name: str) -> CheckStats:
        return self.checks.setdefault(name, CheckStats())

    def check(self, name, slack, f, tol=bayes.BOUND_TOL):
        if not self.stat(name).record(slack, tol):
            self.failures.append(Failure(name, f.name, float(slack), emit_spec(f)))


def _instance_checks(rep: VerifyReport, f, fault: str | None):
    j = build_joint(f)
    b = bayes.solve_bayes(j)
    if fault == "margin":
        b = bayes.with_faulty_margins(b)
    r = bayes.risks(j, b)
    s = bayes.slacks(r)
    rep.check("conditional_independence", -check_conditional_independence(j).max_violation, f,
              tol=1e-10)
    rep.check("hierarchy", min(s.hierarchy_pool_dg, s.hierarchy_dg_full), f)
    rep.check("thm1_sandwich", min(s.thm1_lower, s.thm1_upper), f)
    rep.check("thm3_sandwich", min(s.thm3_lower, s.thm3_upper), f)
    rep.check("margin_guarantee", s.margin_guarantee, f)
    direct, ident = bayes.epsilon_direct(j, b), bayes.epsilon_identity(j, b)
    rep.check("epsilon_identity", -abs(direct - ident), f)
    if bayes.classifiers_agree(j, b):
        rep.check("zero_gap_when_agree", -abs(r.gap_pool_dg), f)
    return j, b, r


def run_verification(n_instances: int = 1000, max_sizes=MAX_SIZES, seed: int = 0,
                     pd_members: int = 200, pd_params=((0.5, 0.3),),
                     covariate_instances: int = 200, refinements: int = 100,
                     fault: str | None = None) -> VerifyReport:
    """Run every bound on random, posterior-drift, covariate-shift and refined instances.

    ``fault="margin"`` replaces every margin by 1 before the bounds are
    evaluated; it exists to prove the suite can fail.
    """
    if n_instances < 1:
        raise ValueError("n_instances must be >= 1")
    rep = VerifyReport()
    rng = np.random.default_rng(seed)

    for i in range(n_instances):
        f = make_random(random_sizes(rng, max_sizes), seed * 1_000_003 + i)
        _instance_checks(rep, f, fault)

    for gamma, epsilon in pd_params:
        i = made = 0
        while made < pd_members:
            sizes = random_sizes(rng, max_sizes, min_m=2)
            sizes = sizes[:3] + (max(sizes[3], sizes[2]),)
            i += 1
            if not pd_feasible(gamma, epsilon, sizes[1], sizes[2]):
                continue
            f = make_pd_member(gamma, epsilon, sizes, seed * 7919 + i)
            j, b, _ = _instance_checks(rep, f, fault)
            try:
                cert = bayes.pd_class_certificate(j, b, gamma, epsilon)
                rep.check(f"pd_class_guarantee({gamma},{epsilon})",
                          cert.gap_pool_dg - cert.guaranteed_gain if cert.member else -1.0, f)
            except BoundViolation:
                rep.check(f"pd_class_guarantee({gamma},{epsilon})", -1.0, f)
            made += 1

    for i in range(covariate_instances):
        f = make_covariate_shift(random_sizes(rng, max_sizes), seed * 104_729 + i)
        j, b, r = _instance_checks(rep, f, fault)
        try:
            cert = bayes.covariate_shift_certificate(j, b)
            slack = -abs(cert.risk_difference) if cert.covariate_shift else -1.0
        except BoundViolation:
            slack = -1.0
        rep.check("covariate_shift_equality", slack, f)
        rep.check("covariate_shift_thm1_upper", -r.thm1_upper, f)

    for i in range(refinements):
        f = make_random(random_sizes(rng, max_sizes), seed * 15_485_863 + i)
        m_index = int(rng.integers(len(f.support.m_values)))
        g = refine_metadata(f, m_index, seed + i)
        r0 = bayes.risks(build_joint(f), bayes.solve_bayes(build_joint(f)))
        r1 = bayes.risks(build_joint(g), bayes.solve_bayes(build_joint(g)))
        rep.check("refinement_monotone", r0.r_dg - r1.r_dg, g)

    return rep


def format_report(rep: VerifyReport) -> str:
    lines = [f"{'check':34s} {'count':>6s} {'fail':>5s} {'worst slack':>14s}"]
    for name, st in rep.checks.items():
        lines.append(f"{name:34s} {st.count:6d} {st.failures:5d} {st.worst_slack:14.6e}")
    lines.append("PASS" if rep.passed else f"FAIL ({len(rep.failures)} violations)")
    return "\n".join(lines)
