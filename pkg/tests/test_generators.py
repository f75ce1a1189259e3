import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dg_risklab import bayes
from dg_risklab.distribution import build_joint, check_conditional_independence
from dg_risklab.erm import restricted_threshold_risks
from dg_risklab.errors import InfeasibleError, ValidationError
from dg_risklab.generators import (
    Example1Config,
    Figure1Config,
    make_covariate_shift,
    make_example1,
    make_figure1,
    make_pd_member,
    make_random,
    max_disagreement,
    pd_feasible,
    random_sizes,
    refine_metadata,
)
from dg_risklab.specfile import emit_spec

from . import oracles

sizes_st = st.tuples(st.integers(1, 8), st.integers(2, 4), st.integers(1, 4), st.integers(1, 6))
seed_st = st.integers(0, 2**32 - 1)


def certify(f, gamma, epsilon):
    j = build_joint(f)
    return bayes.pd_class_certificate(j, bayes.solve_bayes(j), gamma, epsilon)


class TestRandom:
    def test_deterministic(self):
        assert emit_spec(make_random((8, 4, 4, 6), 3)) == emit_spec(make_random((8, 4, 4, 6), 3))
        assert emit_spec(make_random((8, 4, 4, 6), 3)) != emit_spec(make_random((8, 4, 4, 6), 4))

    def test_size_limits(self):
        with pytest.raises(ValidationError):
            make_random((9, 2, 2, 2), 0)
        with pytest.raises(ValidationError):
            make_random((3, 1, 2, 2), 0)

    def test_entries_strictly_positive(self):
        f = make_random((4, 3, 2, 3), 8)
        assert (f.p_xy_given_d > 0).all() and (f.p_m_given_d > 0).all() and (f.p_d > 0).all()

    def test_thousand_seeds_validate_and_respect_hierarchy(self):
        rng = np.random.default_rng(0)
        for seed in range(1000):
            f = make_random(random_sizes(rng), seed)
            j = build_joint(f)
            assert check_conditional_independence(j).holds
            r = bayes.risks(j, bayes.solve_bayes(j))
            assert r.r_pool >= r.r_dg - 1e-12
            assert r.r_dg >= r.r_full - 1e-12


class TestExample1:
    @pytest.mark.parametrize("p, expected", [(0.5, 0.25), (0.6, 0.2), (0.7, 0.15), (0.9, 0.05)])
    def test_analytic_record(self, p, expected):
        _, a = make_example1(Example1Config(p, 50))
        assert a.r_pool_G == expected
        assert a.r_dg_F == a.r_pool_star == a.r_dg_star == 0.0

    def test_layout(self):
        f, _ = make_example1(Example1Config(0.7, 4))
        xs = f.support.x_array
        assert xs.size == 18
        assert xs[0] == 0.0 and xs[8] == 2.0 and xs[9] == 4.0 and xs[-1] == 6.0
        np.testing.assert_allclose(f.p_d, [0.7, 0.3], rtol=0, atol=1e-15)
        np.testing.assert_array_equal(f.p_m_given_d, np.eye(2))
        # the threshold points x = 1 and x = 5 take class 2
        assert f.p_xy_given_d[0, 4].tolist() == [0.0, 1 / 9]
        assert f.p_xy_given_d[1, 13].tolist() == [0.0, 1 / 9]
        assert f.p_xy_given_d[0, 3].tolist() == [1 / 9, 0.0]

    @pytest.mark.parametrize("p", [0.5, 0.6, 0.7, 0.9])
    def test_grid_restricted_risk_near_closed_form(self, p):
        f, a = make_example1(Example1Config(p, 200))
        pool, dg = restricted_threshold_risks(f)
        assert abs(pool - a.r_pool_G) <= 1 / (2 * 200)
        assert dg <= 1e-12

    def test_bayes_risks_vanish(self):
        for p in (0.55, 0.8):
            f, _ = make_example1(Example1Config(p, 30))
            j = build_joint(f)
            r = bayes.risks(j, bayes.solve_bayes(j))
            assert r.r_pool == r.r_dg == 0.0

    @pytest.mark.parametrize("kwargs", [dict(p=1.0), dict(p=0.0), dict(grid_n=1), dict(grid_n=2.5)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            Example1Config(**kwargs)


class TestFigure1:
    def test_disagree_pooled_midpoint(self):
        _, curves = make_figure1(Figure1Config("disagree"))
        mid = curves[60]
        assert mid[0] == 0.0
        assert abs(mid[3] - 0.5) <= 1e-15
        sig = lambda z: 1 / (1 + np.exp(-z))
        assert abs(mid[3] - (sig(-1.0) + sig(1.0)) / 2) <= 1e-15

    def test_curves_are_posteriors(self):
        for scenario in ("agree", "disagree"):
            f, curves = make_figure1(Figure1Config(scenario))
            j = build_joint(f)
            b = bayes.solve_bayes(j)
            np.testing.assert_allclose(b.post_xm[:, 0, 1], curves[:, 1], atol=1e-14)
            np.testing.assert_allclose(b.post_xm[:, 1, 1], curves[:, 2], atol=1e-14)
            np.testing.assert_allclose(b.post_x[:, 1], curves[:, 3], atol=1e-14)

    def test_disagree_region_is_between_crossings(self):
        f, curves = make_figure1(Figure1Config("disagree"))
        b = bayes.solve_bayes(build_joint(f))
        differs = (b.f_dg != b.f_pool[:, None]).any(axis=1)
        xs = curves[differs, 0]
        assert xs.min() >= -1.0 and xs.max() <= 1.0

    def test_invalid_scenario(self):
        with pytest.raises(ValidationError):
            Figure1Config("sideways")


class TestPosteriorDriftMembers:
    def test_pd1_shape(self):
        f = make_pd_member(0.8, 0.5, (1, 2, 2, 2), 0)
        c = certify(f, 0.8, 0.5)
        assert c.member and c.gap_pool_dg >= 0.2 - 1e-12

    def test_saturated_margin(self):
        f = make_pd_member(1.0, 0.3, (4, 2, 3, 3), 5)
        j = build_joint(f)
        b = bayes.solve_bayes(j)
        assert np.nanmin(b.margin_xm) == 1.0
        ref = oracles.bayes(oracles.joint(f))
        assert abs(bayes.epsilon_disagreement(j, b) - ref["epsilon"]) <= 1e-14

    @pytest.mark.parametrize("gamma, epsilon", [(0.8, 0.5), (0.5, 0.3), (0.3, 0.1)])
    def test_members_certified(self, gamma, epsilon):
        rng = np.random.default_rng(1)
        made = 0
        for seed in range(200):
            sizes = random_sizes(rng, min_m=2)
            sizes = sizes[:3] + (max(sizes[2], sizes[3]),)
            if not pd_feasible(gamma, epsilon, sizes[1], sizes[2]):
                continue
            c = certify(make_pd_member(gamma, epsilon, sizes, seed), gamma, epsilon)
            assert c.member
            assert c.gap_pool_dg >= gamma * epsilon / 2 - 1e-12
            made += 1
        assert made >= 50

    def test_infeasible(self):
        assert max_disagreement(2, 2) == 0.5
        assert not pd_feasible(0.5, 0.6, 2, 2)
        with pytest.raises(InfeasibleError):
            make_pd_member(0.5, 0.6, (3, 2, 2, 2), 0, max_retries=4)

    def test_needs_enough_domains(self):
        with pytest.raises(ValidationError):
            make_pd_member(0.5, 0.3, (3, 2, 3, 2), 0)


class TestCovariateShift:
    @settings(max_examples=60, deadline=None)
    @given(sizes_st, seed_st)
    def test_certificate_and_zero_upper_bound(self, sizes, seed):
        j = build_joint(make_covariate_shift(sizes, seed))
        b = bayes.solve_bayes(j)
        c = bayes.covariate_shift_certificate(j, b)
        r = bayes.risks(j, b)
        assert c.covariate_shift
        assert abs(r.r_pool - r.r_dg) <= 1e-12
        assert r.thm1_upper == 0.0

    def test_shared_posterior(self):
        f = make_covariate_shift((5, 3, 2, 4), 0)
        post = f.p_xy_given_d / f.p_xy_given_d.sum(axis=2, keepdims=True)
        np.testing.assert_allclose(post, np.broadcast_to(post[0], post.shape), atol=1e-15)

    def test_disjoint_supports(self):
        f = make_covariate_shift((6, 2, 2, 3), 4, disjoint=True)
        mass = f.p_xy_given_d.sum(axis=2) > 0
        assert (mass.sum(axis=0) == 1).all()
        j = build_joint(f)
        assert bayes.covariate_shift_certificate(j, bayes.solve_bayes(j)).covariate_shift


class TestRefinement:
    def test_merging_recovers_original(self):
        f = make_random((4, 3, 3, 3), 0)
        g = refine_metadata(f, 1, 7)
        merged = np.column_stack([g.p_m_given_d[:, 0], g.p_m_given_d[:, 1] + g.p_m_given_d[:, 2],
                                  g.p_m_given_d[:, 3]])
        np.testing.assert_allclose(merged, f.p_m_given_d, atol=1e-15)
        assert check_conditional_independence(build_joint(g)).holds
