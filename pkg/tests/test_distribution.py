import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dg_risklab.distribution import (
    FactoredDistribution,
    JointTable,
    Support,
    build_joint,
    check_conditional_independence,
    marginal,
    posterior,
)
from dg_risklab.errors import SpecParseError, UnsupportedEventError, ValidationError
from dg_risklab.generators import (
    Example1Config,
    make_covariate_shift,
    make_example1,
    make_pd1,
    make_pd_member,
    make_random,
)
from dg_risklab.specfile import emit_spec, parse_spec

from . import oracles

sizes_st = st.tuples(st.integers(1, 8), st.integers(2, 4), st.integers(1, 4), st.integers(1, 6))
seed_st = st.integers(0, 2**32 - 1)


def point_mass():
    s = Support((0.0, 1.0), 2, ("m1",), ("d1",))
    xy = np.zeros((1, 2, 2))
    xy[0, 1, 0] = 1.0
    return FactoredDistribution(s, np.array([1.0]), np.array([[1.0]]), xy)


class TestSupport:
    def test_valid(self):
        s = Support((0.0, 1.0, 2.0), 3, ("a", "b"), ("d1",))
        assert s.shape == (3, 3, 2, 1)

    @pytest.mark.parametrize("kwargs", [
        dict(x_values=(), y_count=2, m_values=("a",), d_values=("d",)),
        dict(x_values=(0.0,), y_count=1, m_values=("a",), d_values=("d",)),
        dict(x_values=(0.0, 0.0), y_count=2, m_values=("a",), d_values=("d",)),
        dict(x_values=(0.0,), y_count=2, m_values=("a", "a"), d_values=("d",)),
        dict(x_values=(0.0,), y_count=2, m_values=("a",), d_values=()),
        dict(x_values=(0.0,), y_count=2, m_values=("a,b",), d_values=("d",)),
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(ValidationError):
            Support(**kwargs)


class TestFactoredValidation:
    def test_bad_p_d_names_factor(self):
        f = make_pd1()
        with pytest.raises(ValidationError, match="p_d"):
            FactoredDistribution(f.support, np.array([0.6, 0.5]), f.p_m_given_d, f.p_xy_given_d)

    def test_bad_metadata_row_names_index(self):
        f = make_pd1()
        bad = np.array([[1.0, 0.0], [0.2, 0.7]])
        with pytest.raises(ValidationError, match=r"p_m_given_d.*d2|d2.*p_m_given_d"):
            FactoredDistribution(f.support, f.p_d, bad, f.p_xy_given_d)

    def test_negative_entry(self):
        f = make_pd1()
        xy = f.p_xy_given_d.copy()
        xy[0, 0] = [1.1, -0.1]
        with pytest.raises(ValidationError, match="p_xy_given_d"):
            FactoredDistribution(f.support, f.p_d, f.p_m_given_d, xy)

    def test_shape_mismatch(self):
        f = make_pd1()
        with pytest.raises(ValidationError):
            FactoredDistribution(f.support, f.p_d, f.p_m_given_d, np.ones((2, 2, 2)) / 4)

    def test_arrays_are_readonly(self):
        f = make_pd1()
        with pytest.raises(ValueError):
            f.p_d[0] = 1.0


class TestBuildJoint:
    def test_point_mass_has_one_cell(self):
        j = build_joint(point_mass())
        assert np.count_nonzero(j.p) == 1
        assert j.p[1, 0, 0, 0] == 1.0

    def test_two_domain_mixture_halves_the_table(self):
        f = make_pd1()
        j = build_joint(f)
        for d in range(2):
            np.testing.assert_array_equal(j.p[:, :, d, d], 0.5 * f.p_xy_given_d[d])
        assert j.p[:, :, 0, 1].sum() == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_loop_oracle(self, seed):
        f = make_random((3, 2, 2, 2), seed)
        j = build_joint(f)
        ref = oracles.joint(f)
        np.testing.assert_allclose(j.p, np.array(ref), rtol=0, atol=1e-15)
        assert abs(j.p.sum() - 1.0) <= 1e-12
        pooled = sum(f.p_d[d] * f.p_xy_given_d[d] for d in range(2))
        np.testing.assert_allclose(marginal(j, "XY"), pooled, atol=1e-14)

    def test_from_array_is_unverified(self):
        j = build_joint(make_pd1())
        assert j.verified
        assert not JointTable.from_array(j.support, j.p).verified


class TestConditionalIndependence:
    @pytest.mark.parametrize("make", [make_pd1, point_mass,
                                      lambda: make_random((4, 3, 3, 4), 11)])
    def test_factored_joints_pass(self, make):
        check = check_conditional_independence(build_joint(make()))
        assert check.holds
        assert check.max_violation <= 1e-15

    def test_single_domain(self):
        check = check_conditional_independence(build_joint(make_random((5, 2, 3, 1), 3)))
        assert check.holds

    @pytest.mark.parametrize("seed", range(10))
    def test_detects_perturbation(self, seed):
        j = build_joint(make_random((3, 2, 2, 2), seed))
        p = j.p.copy()
        # move mass between y labels in one (x, m, d) slice so P(x,y|m,d) depends on m
        p[0, 0, 0, 0] += 0.05
        p[0, 1, 0, 0] = max(p[0, 1, 0, 0] - 0.05, 0.0)
        p /= p.sum()
        check = check_conditional_independence(JointTable.from_array(j.support, p))
        assert not check.holds
        assert check.max_violation > 1e-3

    @settings(max_examples=50, deadline=None)
    @given(sizes_st, seed_st)
    def test_random_instances(self, sizes, seed):
        assert check_conditional_independence(build_joint(make_random(sizes, seed)), 1e-10).holds


class TestMarginal:
    def test_keep_d_recovers_p_d(self):
        f = make_random((4, 3, 2, 5), 2)
        np.testing.assert_allclose(marginal(build_joint(f), "D"), f.p_d, atol=1e-15)

    def test_keep_xy_is_pooled(self):
        f = make_pd1()
        np.testing.assert_allclose(marginal(build_joint(f), "XY"), [[0.5, 0.5]], atol=1e-15)

    @pytest.mark.parametrize("keep", ["XM", "Y", "XYD", "MD", "XYMD"])
    def test_matches_loop_oracle(self, keep):
        f = make_random((5, 3, 3, 4), 21)
        got = marginal(build_joint(f), keep)
        ref = oracles.marginal(oracles.joint(f), keep)
        for idx, v in ref.items():
            assert abs(got[idx] - v) <= 1e-14
        assert abs(got.sum() - 1.0) <= 1e-12

    def test_order_of_letters_is_irrelevant(self):
        j = build_joint(make_random((3, 2, 2, 2), 0))
        np.testing.assert_array_equal(marginal(j, "MX"), marginal(j, "XM"))

    def test_empty_keep(self):
        with pytest.raises(ValidationError):
            marginal(build_joint(make_pd1()), "")

    @settings(max_examples=40, deadline=None)
    @given(sizes_st, seed_st)
    def test_iterated_marginal(self, sizes, seed):
        j = build_joint(make_random(sizes, seed))
        np.testing.assert_allclose(marginal(j, "XY").sum(axis=1), marginal(j, "X"), atol=1e-14)


class TestPosterior:
    def test_deterministic_label(self):
        f, _ = make_example1(Example1Config(0.7, 10))
        j = build_joint(f)
        assert posterior(j, {"X": 0}).tolist() == [1.0, 0.0]
        assert posterior(j, {"X": 15}).tolist() == [0.0, 1.0]

    def test_pd1_cell(self):
        j = build_joint(make_pd1())
        # direct ratio P(x1, y=1, m1) / P(x1, m1)
        assert abs(posterior(j, {"X": 0, "M": 0})[0] - 0.45 / 0.5) <= 1e-15

    def test_zero_mass_event_raises(self):
        j = build_joint(point_mass())
        with pytest.raises(UnsupportedEventError):
            posterior(j, {"X": 0})

    def test_unknown_axis(self):
        with pytest.raises(ValidationError):
            posterior(build_joint(make_pd1()), {"Y": 0})

    @settings(max_examples=40, deadline=None)
    @given(sizes_st, seed_st)
    def test_metadata_adds_nothing_given_domain(self, sizes, seed):
        f = make_random(sizes, seed)
        j = build_joint(f)
        for x in range(sizes[0]):
            for d in range(sizes[3]):
                a = posterior(j, {"X": x, "D": d})
                assert abs(a.sum() - 1.0) <= 1e-12
                for m in range(sizes[2]):
                    np.testing.assert_allclose(posterior(j, {"X": x, "M": m, "D": d}), a, atol=1e-12)


class TestSpecFile:
    @pytest.mark.parametrize("make", [
        make_pd1,
        lambda: make_random((3, 2, 2, 2), 5),
        lambda: make_random((8, 4, 4, 6), 99),
        lambda: make_example1(Example1Config(0.7, 20))[0],
        lambda: make_pd_member(0.5, 0.3, (4, 2, 2, 3), 1),
        lambda: make_covariate_shift((5, 3, 2, 3), 2),
    ])
    def test_round_trip_is_bit_identical(self, make):
        f = make()
        g = parse_spec(emit_spec(f))
        assert f.same_as(g)
        assert emit_spec(g) == emit_spec(f)

    @settings(max_examples=40, deadline=None)
    @given(sizes_st, seed_st)
    def test_round_trip_random(self, sizes, seed):
        f = make_random(sizes, seed)
        assert parse_spec(emit_spec(f)).same_as(f)

    def test_row_summing_to_099_names_the_row(self):
        text = emit_spec(make_pd1()).replace("d2: 0.0, 1.0", "d2: 0.0, 0.99")
        with pytest.raises(SpecParseError) as exc:
            parse_spec(text)
        assert exc.value.section == "p_m_given_d"
        assert exc.value.row == 2
        assert "p_m_given_d" in str(exc.value) and "row 2" in str(exc.value)

    @pytest.mark.parametrize("edit, section", [
        (lambda t: t.replace("y_count = 2", "y_count = two"), "support"),
        (lambda t: t.replace("0.5, 0.5", "0.5, 0.5, 0.0"), "p_d"),
        (lambda t: t.replace("0.9, 0.1", "0.9 0.1"), "p_xy_given_d"),
        (lambda t: t.replace("[p_d]", "[p_dd]"), "p_d"),
    ])
    def test_malformed_sections(self, edit, section):
        with pytest.raises(SpecParseError) as exc:
            parse_spec(edit(emit_spec(make_pd1())))
        assert exc.value.section == section

    def test_missing_section(self):
        text = emit_spec(make_pd1()).split("[p_xy_given_d]")[0]
        with pytest.raises(SpecParseError, match="p_xy_given_d"):
            parse_spec(text)

    def test_example1_spec_validates(self):
        f, _ = make_example1(Example1Config(0.7, 200))
        g = parse_spec(emit_spec(f))
        assert check_conditional_independence(build_joint(g)).holds
