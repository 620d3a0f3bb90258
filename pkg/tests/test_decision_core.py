import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import LOGISTIC_HALF, LOGIT_HALF, rdu_oracle
from rducop.decision_core import (
    IDENTITY,
    DeformationFunction,
    DeformationKind,
    DomainError,
    NegativeProbability,
    ProbabilityMassInvalid,
    UtilityFunction,
    deform,
    expected_utility,
    load_lottery,
    make_lottery,
    parse_phi,
    rdu,
)

LOGISTIC = DeformationFunction.logistic(10, 1.3)
LOGIT = DeformationFunction.logit(10)
SHIPPED = [IDENTITY, LOGISTIC, LOGIT, DeformationFunction.custom([0, 0.5, 1], [0, 0.2, 1])]


@st.composite
def lotteries(draw, max_size=10):
    n = draw(st.integers(1, max_size))
    xs = draw(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=n, max_size=n))
    ws = draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n))
    total = math.fsum(ws)
    return make_lottery([(x, w / total) for x, w in zip(xs, ws)])


@st.composite
def phis(draw):
    choice = draw(st.sampled_from(["identity", "logistic", "logit", "custom"]))
    if choice == "identity":
        return IDENTITY
    if choice == "logistic":
        return DeformationFunction.logistic(draw(st.floats(0.5, 30)), draw(st.floats(0.0, 2.0)))
    if choice == "logit":
        return DeformationFunction.logit(draw(st.floats(0.5, 30)))
    ys = sorted(draw(st.lists(st.floats(0, 1), min_size=3, max_size=3)))
    return DeformationFunction.custom([0, 0.3, 0.7, 1], [0.0] + ys)


class TestMakeLottery:
    def test_sorts(self):
        assert make_lottery([(5, 0.5), (1, 0.5)]).entries == ((1.0, 0.5), (5.0, 0.5))

    def test_merges_equal_consequences(self):
        assert make_lottery([(3, 0.4), (3, 0.6)]).entries == ((3.0, 1.0),)

    def test_three_way_sort(self):
        assert make_lottery([(2, 0.5), (7, 0.3), (0, 0.2)]).entries == ((0.0, 0.2), (2.0, 0.5), (7.0, 0.3))

    def test_drops_zero_mass(self):
        assert make_lottery([(1, 0.0), (2, 1.0)]).entries == ((2.0, 1.0),)

    def test_renormalizes_within_tolerance(self):
        l = make_lottery([(0, 0.5), (1, 0.5000005)])
        assert math.fsum(l.probabilities) == pytest.approx(1.0, abs=1e-15)

    def test_negative_probability(self):
        with pytest.raises(NegativeProbability):
            make_lottery([(0, -0.1), (1, 1.1)])

    def test_mass_outside_tolerance(self):
        with pytest.raises(ProbabilityMassInvalid):
            make_lottery([(0, 0.5), (1, 0.49)])

    @given(st.lists(st.tuples(st.integers(-20, 20), st.integers(1, 9)), min_size=1, max_size=8), st.randoms())
    def test_permutation_invariance(self, raw, rnd):
        total = sum(w for _, w in raw)
        pairs = [(x, w / total) for x, w in raw]
        shuffled = list(pairs)
        rnd.shuffle(shuffled)
        a, b = make_lottery(pairs), make_lottery(shuffled)
        assert [x for x, _ in a.entries] == [x for x, _ in b.entries]
        assert np.allclose(a.probabilities, b.probabilities, rtol=0, atol=1e-15)
        assert rdu(a, phi=LOGISTIC) == pytest.approx(rdu(b, phi=LOGISTIC), abs=1e-12)

    @given(lotteries())
    def test_canonical_invariants(self, l):
        xs = l.consequences
        assert all(b > a for a, b in zip(xs, xs[1:]))
        assert all(p > 0 for p in l.probabilities)
        assert abs(math.fsum(l.probabilities) - 1) <= 1e-9


class TestDeform:
    def test_identity(self):
        assert deform(IDENTITY, 0.37) == 0.37

    def test_logistic_half(self):
        assert deform(LOGISTIC, 0.5) == pytest.approx(LOGISTIC_HALF, abs=1e-15)

    def test_logit_half(self):
        assert deform(LOGIT, 0.5) == pytest.approx(LOGIT_HALF, abs=1e-15)

    def test_logit_zero_is_zero(self):
        assert deform(LOGIT, 0.0) == 0.0

    def test_logit_clamped_near_zero(self):
        # the raw formula is negative below about 9.1e-5
        assert deform(LOGIT, 1e-6) == 0.0
        assert deform(LOGIT, 1e-3) > 0.0

    def test_endpoints_not_renormalized(self):
        assert deform(LOGISTIC, 0.0) == pytest.approx(1 / (1 + math.exp(13)), rel=1e-12)
        assert deform(LOGISTIC, 1.0) == pytest.approx(1 / (1 + math.exp(-7)), rel=1e-12)
        assert deform(LOGIT, 1.0) == 1.0

    @pytest.mark.parametrize("p", [-1e-9, 1.0000001, 2.0, float("nan")])
    def test_domain_error(self, p):
        with pytest.raises(DomainError):
            deform(LOGISTIC, p)

    @pytest.mark.parametrize("phi", SHIPPED, ids=lambda f: f.describe())
    def test_monotone_and_bounded_on_grid(self, phi):
        grid = np.linspace(0, 1, 10_001)
        vals = np.array([deform(phi, float(p)) for p in grid])
        assert (vals >= 0).all() and (vals <= 1).all()
        assert (np.diff(vals) >= 0).all()

    def test_custom_interpolates(self):
        phi = DeformationFunction.custom([0, 0.5, 1], [0, 0.2, 1])
        assert deform(phi, 0.25) == pytest.approx(0.1)
        assert deform(phi, 0.75) == pytest.approx(0.6)

    @pytest.mark.parametrize("xs,ys", [([0, 1], [0.5, 0.2]), ([0.1, 1], [0, 1]), ([0, 0.5], [0, 1]), ([0], [0])])
    def test_custom_rejects_bad_tables(self, xs, ys):
        with pytest.raises(ValueError):
            DeformationFunction.custom(xs, ys)

    def test_nonpositive_lambda_rejected(self):
        with pytest.raises(ValueError):
            DeformationFunction.logistic(0.0)

    def test_huge_lambda_does_not_overflow(self):
        assert deform(DeformationFunction.logistic(1e6, 1.3), 0.0) == 0.0


class TestParsePhi:
    @pytest.mark.parametrize("spec,expected", [
        ("identity", IDENTITY),
        ("logistic", LOGISTIC),
        ("logistic:5", DeformationFunction.logistic(5, 1.3)),
        ("logistic:5:1.1", DeformationFunction.logistic(5, 1.1)),
        ("logit:7", DeformationFunction.logit(7)),
        ("custom:0/0,0.5/0.1,1/1", DeformationFunction.custom([0, 0.5, 1], [0, 0.1, 1])),
    ])
    def test_round_trip(self, spec, expected):
        phi = parse_phi(spec)
        assert phi == expected
        assert parse_phi(phi.describe()) == phi
        assert DeformationFunction.from_json(phi.to_json()) == phi

    @pytest.mark.parametrize("spec", ["", "cubic", "logistic:a", "logit:1:2", "identity:3", "custom:0/0"])
    def test_rejects(self, spec):
        with pytest.raises(ValueError):
            parse_phi(spec)


class TestRdu:
    def test_degenerate(self):
        for phi in SHIPPED:
            assert rdu(make_lottery([(7, 1.0)]), phi=phi) == 7

    def test_identity_is_mean(self):
        assert rdu(make_lottery([(0, 0.5), (10, 0.5)])) == 5

    def test_logistic_closed_form(self):
        value = rdu(make_lottery([(0, 0.5), (10, 0.5)]), phi=LOGISTIC)
        assert value == pytest.approx(10 * LOGISTIC_HALF, abs=1e-12)

    def test_logit_closed_form(self):
        value = rdu(make_lottery([(0, 0.5), (10, 0.5)]), phi=LOGIT)
        assert value == pytest.approx(10 * LOGIT_HALF, abs=1e-12)

    def test_expected_utility_examples(self):
        assert expected_utility(make_lottery([(0, 0.5), (10, 0.5)])) == 5
        assert expected_utility(make_lottery([(3, 1.0)])) == 3
        assert expected_utility(make_lottery([(1, 0.2), (2, 0.3), (10, 0.5)])) == pytest.approx(5.8, abs=1e-12)

    def test_custom_utility_must_be_monotone(self):
        with pytest.raises(ValueError):
            rdu(make_lottery([(0, 0.5), (1, 0.5)]), UtilityFunction("neg", lambda x: -x))

    @given(lotteries(), phis())
    def test_matches_decision_weight_oracle(self, l, phi):
        assert rdu(l, phi=phi) == pytest.approx(rdu_oracle(l.entries, phi), abs=1e-9)

    @given(lotteries())
    def test_eu_reduction(self, l):
        assert abs(rdu(l) - expected_utility(l)) < 1e-12 * max(1.0, max(abs(x) for x in l.consequences))

    @given(lotteries(), phis())
    def test_bounds(self, l, phi):
        v = rdu(l, phi=phi)
        assert l.consequences[0] - 1e-9 <= v <= l.consequences[-1] + 1e-9

    @given(lotteries(), phis(), st.floats(-100, 100))
    def test_translation(self, l, phi, c):
        shifted = make_lottery([(x + c, p) for x, p in l.entries])
        if len(shifted) != len(l):  # float rounding merged two consequences
            return
        assert rdu(shifted, phi=phi) == pytest.approx(rdu(l, phi=phi) + c, abs=1e-9)

    @given(lotteries(), phis(), st.floats(0.01, 100))
    def test_positive_scaling(self, l, phi, a):
        scaled = make_lottery([(x * a, p) for x, p in l.entries])
        if len(scaled) != len(l):
            return
        assert rdu(scaled, phi=phi) == pytest.approx(a * rdu(l, phi=phi), rel=1e-9, abs=1e-9)

    @given(lotteries(), st.lists(st.floats(0, 1), min_size=4, max_size=4), st.lists(st.floats(0, 1), min_size=4, max_size=4))
    def test_pointwise_larger_phi_gives_larger_rdu(self, l, a, b):
        ys_a = sorted(a)
        ys_b = [max(u, v) for u, v in zip(ys_a, sorted(b))]
        xs = [0, 0.2, 0.6, 0.9]
        phi_a = DeformationFunction.custom(xs + [1], ys_a + [1])
        phi_b = DeformationFunction.custom(xs + [1], ys_b + [1])
        assert rdu(l, phi=phi_a) <= rdu(l, phi=phi_b) + 1e-9


def test_load_lottery(tmp_path):
    f = tmp_path / "l.json"
    f.write_text('[{"x": 10, "p": 0.5}, {"x": 0, "p": 0.5}]')
    assert load_lottery(f).entries == ((0.0, 0.5), (10.0, 0.5))
    f.write_text('{"x": 1}')
    with pytest.raises(ValueError):
        load_lottery(f)
    f.write_text('[{"x": 1}]')
    with pytest.raises(ValueError):
        load_lottery(f)


def test_deformation_is_hashable_and_immutable():
    assert len({LOGISTIC, DeformationFunction.logistic(10, 1.3), LOGIT}) == 2
    with pytest.raises(Exception):
        LOGISTIC.lam = 3
    assert LOGISTIC.kind is DeformationKind.LOGISTIC_PESSIMISTIC


def test_random_lotteries_against_oracle():
    r = random.Random(11)
    for _ in range(200):
        n = r.randint(1, 10)
        raw = [(r.randint(-50, 50), r.random() + 1e-3) for _ in range(n)]
        total = sum(p for _, p in raw)
        l = make_lottery([(x, p / total) for x, p in raw])
        for phi in SHIPPED:
            assert rdu(l, phi=phi) == pytest.approx(rdu_oracle(l.entries, phi), abs=1e-9)
