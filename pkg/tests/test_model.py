import numpy as np
import pytest

from anomseg.errors import ConfigError
from anomseg.model import (
    DiscreteUniform,
    ForwardRecurrence,
    Geometric,
    HiddenState,
    NegativeBinomial,
    ProcessParams,
    SegmentType,
    ShiftedPoisson,
    first_segment_law,
    initial_prob,
    length_distribution_from_dict,
    log_survival_table,
    transition_prob,
)
from oracles import nbinom_pmf_reference

N, A = SegmentType.NORMAL, SegmentType.ABNORMAL

DISTRIBUTIONS = [
    Geometric(0.3),
    Geometric(0.0007),
    NegativeBinomial(10, 0.1),
    NegativeBinomial(15, 0.3),
    NegativeBinomial(2.5, 0.4),
    DiscreteUniform(1, 200),
    DiscreteUniform(3, 7),
    ShiftedPoisson(30.0),
]


def test_geometric_first_trial():
    assert Geometric(0.5).pmf(1) == pytest.approx(0.5)


def test_uniform_pmf_value():
    assert DiscreteUniform(1, 200).pmf(7) == pytest.approx(1.0 / 200.0)


def test_nbinom_matches_reference_formula_and_normalizes():
    dist = NegativeBinomial(10, 0.1)
    cap = dist.truncation_point()
    lengths = np.arange(1, cap + 1)
    ref = np.array([nbinom_pmf_reference(int(l), 10, 0.1) for l in lengths])
    assert np.allclose(dist.pmf(lengths), ref, rtol=1e-10)
    assert ref.sum() == pytest.approx(1.0, abs=1e-11)
    assert dist.pmf(10) == pytest.approx(nbinom_pmf_reference(10, 10, 0.1), rel=1e-12)


@pytest.mark.parametrize("dist", DISTRIBUTIONS)
def test_pmf_normalizes_and_cdf_consistent(dist):
    cap = dist.truncation_point()
    lengths = np.arange(1, cap + 1)
    pmf = dist.pmf(lengths)
    assert np.all(pmf >= 0.0)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-11)
    cdf = dist.cdf(lengths)
    assert np.all(np.diff(cdf) >= -1e-15)
    assert np.allclose(cdf, np.cumsum(pmf), atol=1e-12)
    assert dist.cdf(0) == 0.0
    assert dist.mean > 0 and np.isfinite(dist.mean)


@pytest.mark.parametrize("dist", DISTRIBUTIONS)
def test_log_sf_matches_cdf(dist):
    lengths = np.arange(0, min(dist.truncation_point(), 500) + 1)
    assert np.allclose(np.exp(dist.log_sf(lengths)), 1.0 - dist.cdf(lengths), atol=1e-12)


def test_non_positive_length_rejected():
    with pytest.raises(ValueError):
        Geometric(0.5).pmf(0)
    with pytest.raises(ValueError):
        NegativeBinomial(10, 0.1).log_pmf(-3)


def test_invalid_parameters_rejected():
    with pytest.raises(ConfigError):
        Geometric(0.0)
    with pytest.raises(ConfigError):
        NegativeBinomial(-1, 0.5)
    with pytest.raises(ConfigError):
        DiscreteUniform(5, 2)
    with pytest.raises(ConfigError):
        ShiftedPoisson(0.0)


def test_from_dict_round_trip():
    for dist in DISTRIBUTIONS:
        again = length_distribution_from_dict(dist.to_dict())
        assert again == dist
    with pytest.raises(ConfigError):
        length_distribution_from_dict({"type": "nbinom", "r": 10})
    with pytest.raises(ConfigError):
        length_distribution_from_dict({"type": "nbinom", "r": 10, "p": 0.1, "bogus": 1})
    with pytest.raises(ConfigError):
        length_distribution_from_dict({"type": "zeta", "s": 2})


def test_geometric_is_its_own_first_segment_law():
    dist = Geometric(0.37)
    first = first_segment_law(dist)
    assert first is dist
    lengths = np.arange(1, 60)
    explicit = ForwardRecurrence(dist)
    assert np.allclose(explicit.pmf(lengths), dist.pmf(lengths), rtol=1e-12)


def test_first_segment_uniform_1_3():
    # E = 2; pmf0(l) = (1 - G(l-1)) / E with G(0)=0, G(1)=1/3, G(2)=2/3.
    first = ForwardRecurrence(DiscreteUniform(1, 3))
    assert first.pmf(1) == pytest.approx(0.5)
    assert first.pmf(2) == pytest.approx(1.0 / 3.0)
    assert first.pmf(3) == pytest.approx(1.0 / 6.0)
    assert first.pmf(np.array([4, 5])) == pytest.approx([0.0, 0.0])
    assert first.mean == pytest.approx(5.0 / 3.0)


@pytest.mark.parametrize("dist", DISTRIBUTIONS)
def test_first_segment_pmf_sums_to_one(dist):
    first = first_segment_law(dist)
    cap = first.truncation_point(1e-12)
    total = first.pmf(np.arange(1, cap + 1)).sum()
    assert total == pytest.approx(1.0, abs=1e-10)


PROCESS_GRID = [
    ProcessParams(Geometric(0.3), Geometric(0.6), 0.5),
    ProcessParams(NegativeBinomial(10, 0.1), NegativeBinomial(15, 0.3), 0.5),
    ProcessParams(DiscreteUniform(1, 5), DiscreteUniform(2, 4), 0.8),
    ProcessParams(ShiftedPoisson(4.0), DiscreteUniform(1, 3), 1.0),
]


@pytest.mark.parametrize("params", PROCESS_GRID)
def test_transition_rows_sum_to_one(params):
    for t in range(1, 51):
        for c in range(t):
            for b in (N, A):
                state = HiddenState(c, b)
                total = transition_prob(state, HiddenState(c, b), t, params)
                total += transition_prob(state, HiddenState(t, N), t, params)
                total += transition_prob(state, HiddenState(t, A), t, params)
                assert total == pytest.approx(1.0, abs=1e-12), (params, t, c, b)


def test_geometric_constant_hazard():
    params = ProcessParams(Geometric(0.25), Geometric(0.5), 0.5)
    for t, c in [(1, 0), (5, 2), (40, 0), (40, 39)]:
        state = HiddenState(c, N)
        assert transition_prob(state, HiddenState(c, N), t, params) == pytest.approx(0.75)
        assert transition_prob(state, HiddenState(t, A), t, params) == pytest.approx(0.25)


def test_abnormal_birth_splits_by_pi():
    params = ProcessParams(Geometric(0.2), Geometric(0.4), 0.7)
    state = HiddenState(3, A)
    hazard = 0.4
    assert transition_prob(state, HiddenState(8, N), 8, params) == pytest.approx(0.7 * hazard)
    assert transition_prob(state, HiddenState(8, A), 8, params) == pytest.approx(0.3 * hazard)
    # a normal segment can only be followed by an abnormal one
    assert transition_prob(HiddenState(3, N), HiddenState(8, N), 8, params) == 0.0


def test_impossible_targets_are_zero():
    params = PROCESS_GRID[0]
    state = HiddenState(2, N)
    assert transition_prob(state, HiddenState(4, A), 7, params) == 0.0
    assert transition_prob(state, HiddenState(2, A), 7, params) == 0.0


def test_uniform_hazard_is_exactly_one_at_upper_bound():
    params = ProcessParams(DiscreteUniform(2, 6), Geometric(0.5), 0.5)
    state = HiddenState(1, N)
    # elapsed length 6 = upper bound: the segment must end, no division by zero
    assert transition_prob(state, HiddenState(7, A), 7, params) == 1.0
    assert transition_prob(state, HiddenState(1, N), 7, params) == 0.0


def test_initial_prob_examples():
    params = ProcessParams(Geometric(0.1), Geometric(0.1), 1.0)
    assert initial_prob(N, params) == pytest.approx(0.5)
    params = ProcessParams(Geometric(0.1), Geometric(0.1), 0.5)
    assert initial_prob(N, params) == pytest.approx(1.0 / 3.0)
    assert initial_prob(A, params) == pytest.approx(2.0 / 3.0)


def test_initial_prob_matches_long_run_fraction():
    # Independent check: simulate the alternating process directly.
    params = ProcessParams(NegativeBinomial(10, 0.1), DiscreteUniform(1, 40), 0.6)
    rng = np.random.default_rng(7)
    target = 1_000_000
    normal_time = total = 0
    b = N if rng.uniform() < initial_prob(N, params) else A
    while total < target:
        length = params.length_law(b).sample(rng)
        if b == N:
            normal_time += length
        total += length
        if b == N:
            b = A
        else:
            b = N if rng.uniform() < params.pi_normal else A
    frac = normal_time / total
    # Monte Carlo error: segments are ~O(total / mean cycle) independent draws.
    assert abs(frac - initial_prob(N, params)) < 0.01


def test_log_survival_table_matches_scalar():
    dist = NegativeBinomial(5, 0.2)
    table = log_survival_table(dist, 100)
    assert table.shape == (101,)
    assert table[0] == 0.0
    assert np.allclose(table, dist.log_sf(np.arange(101)))
    first = first_segment_law(dist)
    table0 = log_survival_table(first, 100)
    assert table0[0] == pytest.approx(0.0, abs=1e-12)


def test_process_params_validation_and_round_trip():
    with pytest.raises(ConfigError):
        ProcessParams(Geometric(0.5), Geometric(0.5), 0.0)
    params = PROCESS_GRID[1]
    assert ProcessParams.from_dict(params.to_dict()) == params
    with pytest.raises(ConfigError):
        ProcessParams.from_dict({**params.to_dict(), "unknown": 3})
