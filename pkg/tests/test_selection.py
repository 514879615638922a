import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mtmbsp.errors import ValidationError
from mtmbsp.gibbs import ChainConfig, Hyperparameters, PosteriorSamples
from mtmbsp.model import Dataset, schema_from_sequence
from mtmbsp.selection import (
    EXCLUDE_BAND,
    STRICT_MAX,
    CredibleSummary,
    one_step_fit,
    rank_topK,
    screen_candidates,
    select_active,
    selection_sets,
    two_step_fit,
)

CFG = ChainConfig(iterations=400, burn_in=150)


def summary_from(lower, median, upper):
    return CredibleSummary(np.array(lower, float), np.array(median, float), np.array(upper, float))


@st.composite
def summaries(draw, p=st.integers(1, 25), q=st.integers(1, 3)):
    p, q = draw(p), draw(q)
    vals = draw(st.lists(st.floats(-3, 3, allow_nan=False), min_size=3 * p * q, max_size=3 * p * q))
    a = np.sort(np.array(vals).reshape(p, q, 3), axis=2)
    return CredibleSummary(a[..., 0], a[..., 1], a[..., 2])


def test_credible_summary_validation():
    with pytest.raises(ValidationError):
        summary_from([[0.2]], [[0.1]], [[0.3]])
    s = summary_from([0.0, 1.0], [0.5, 1.5], [1.0, 2.0])
    assert s.shape == (2, 1)


def test_select_active_examples():
    s = summary_from([[0.1, -0.3], [-0.2, -0.2], [-1.0, -0.1]],
                     [[0.3, 0.0], [0.0, 0.0], [-0.5, 0.0]],
                     [[0.5, 0.3], [0.3, 0.3], [-0.05, 0.2]])
    assert select_active(s).tolist() == [0, 2]


def test_screen_literal_examples():
    s = summary_from([[-0.01], [-0.5], [-0.01]], [[0.3], [0.0], [0.0]], [[0.7], [0.6], [0.01]])
    kept = screen_candidates(s, 0.02)
    # slack keeps a barely-negative lower bound; the literal rule also keeps tight null intervals
    assert kept.tolist() == [0, 2]
    assert screen_candidates(s, 1e9).tolist() == [0, 1, 2]


def test_screen_any_response_qualifies():
    # every effect clearly negative except one vague response: some upper quantile is below gamma
    s = summary_from([[-1.45, -4.36, -3.91, -0.35]], [[-1.1, -4.0, -2.3, 1.2]], [[-0.72, -3.58, -0.73, 2.93]])
    assert screen_candidates(s, 0.02).tolist() == [0]
    assert screen_candidates(s, 0.02, STRICT_MAX).tolist() == []
    null = summary_from([[-0.05, -0.04]], [[0.0, 0.0]], [[0.05, 0.04]])
    assert screen_candidates(null, 0.02).tolist() == []


def test_screen_exclude_band():
    s = summary_from([[0.05], [-0.5], [-0.01], [-0.9]], [[0.3], [0.0], [0.0], [-0.5]],
                     [[0.7], [0.6], [0.01], [-0.03]])
    assert screen_candidates(s, 0.02, EXCLUDE_BAND).tolist() == [0, 3]


def test_screen_rejects_bad_input():
    s = summary_from([[0.0]], [[0.0]], [[0.0]])
    with pytest.raises(ValidationError):
        screen_candidates(s, 0.0)
    with pytest.raises(ValidationError):
        screen_candidates(s, 0.1, rule="bogus")


@given(summaries(), st.floats(1e-4, 2.0), st.floats(1e-4, 2.0))
def test_screening_monotone_in_gamma(s, g1, g2):
    g1, g2 = sorted((g1, g2))
    for rule in ("literal", STRICT_MAX, EXCLUDE_BAND):
        a, b = screen_candidates(s, g1, rule), screen_candidates(s, g2, rule)
        if rule != EXCLUDE_BAND:
            assert set(a) <= set(b)
        else:
            # the band widens with gamma, so the exclusion rule shrinks
            assert set(b) <= set(a)


def test_rank_topk_examples():
    med = np.arange(300, dtype=float)[:, None] / 100
    s = summary_from(med - 1, med, med + 1)
    Jn, K = rank_topK([3, 10, 42], s, 150)
    assert Jn.tolist() == [3, 10, 42] and K == 3
    Jn, K = rank_topK(np.arange(200), s, 150)
    assert K == 149 and Jn.tolist() == list(range(51, 200))


def test_rank_topk_ties_prefer_lower_index():
    med = np.array([[0.5], [0.9], [0.5], [0.5], [0.1]])
    s = summary_from(med - 1, med, med + 1)
    Jn, K = rank_topK([0, 1, 2, 3, 4], s, 3)
    assert Jn.tolist() == [0, 1]


def test_rank_topk_scores_signed_maximum():
    # |max_k median|: a row whose only signal is negative ranks by its larger (less negative) cell
    med = np.array([[-2.0, 0.1], [0.5, 0.0], [-0.05, -3.0]])
    s = summary_from(med - 1, med, med + 1)
    Jn, _ = rank_topK([0, 1, 2], s, 2)
    assert Jn.tolist() == [1]


def test_rank_topk_empty():
    s = summary_from([[0.0]], [[0.0]], [[0.0]])
    Jn, K = rank_topK([], s, 10)
    assert K == 0 and Jn.size == 0


@given(summaries(), st.floats(1e-3, 1.0), st.integers(2, 30))
def test_selection_set_invariants(s, gamma, n):
    sets = selection_sets(s, gamma, n)
    assert set(sets.Jn) <= set(sets.An)
    assert sets.Kn == min(n - 1, sets.An.size)
    again = selection_sets(s, gamma, n)
    assert sets.to_dict() == again.to_dict()


# --------------------------------------------------------------------------
# fits
# --------------------------------------------------------------------------

def sparse_dataset(n=40, p=60, seed=3, column_ids=None):
    g = np.random.default_rng(seed)
    X = g.standard_normal((n, p))
    t = 2.0 * X[:, 4] - 1.5 * X[:, 17 % p]
    Y = np.column_stack([t + g.standard_normal(n), g.random(n) < 1 / (1 + np.exp(-t))])
    return Dataset(X, Y, schema_from_sequence(["gaussian", "bernoulli"]), column_ids)


def test_two_step_zero_padding_and_selection():
    d = sparse_dataset()
    est = two_step_fit(d, Hyperparameters(), CFG)
    outside = np.setdiff1d(np.arange(d.p), est.sets.Jn)
    assert np.all(est.Btilde[outside] == 0.0)
    assert {4, 17} <= set(est.sets.Jn.tolist())
    assert {4, 17} <= set(est.selected.tolist())
    assert set(est.selected) <= set(est.sets.Jn)
    assert est.sets.Kn <= d.n - 1
    assert np.all(est.summary.lower[outside] == 0) and np.all(est.summary.upper[outside] == 0)
    assert est.step2.shape == (est.sets.Kn, 2)


def test_two_step_reuses_step1_and_is_deterministic():
    d = sparse_dataset()
    samples, _, _ = one_step_fit(d, None, CFG)
    a = two_step_fit(d, None, CFG, step1=samples)
    b = two_step_fit(d, None, CFG)
    assert np.array_equal(a.Btilde, b.Btilde)
    assert a.step1 is samples


def test_two_step_equivariant_under_relabelling():
    d = sparse_dataset(p=30, column_ids=np.arange(30))
    perm = np.random.default_rng(4).permutation(30)
    dp = Dataset(d.X[:, perm], d.Y, d.schema, column_ids=perm)
    a = two_step_fit(d, None, CFG)
    b = two_step_fit(dp, None, CFG)
    assert np.array_equal(a.Btilde[perm], b.Btilde)
    assert sorted(perm[b.sets.Jn].tolist()) == a.sets.Jn.tolist()


def test_two_step_null_model():
    d = sparse_dataset(p=5)
    draws = np.broadcast_to(np.linspace(-1, 1, 101)[:, None, None], (101, 5, 2)).copy()
    est = two_step_fit(d, None, CFG, step1=PosteriorSamples(draws))
    assert est.null_model and est.sets.Kn == 0
    assert np.all(est.Btilde == 0) and est.selected.size == 0 and est.step2 is None


def test_two_step_small_problem_runs():
    d = sparse_dataset(n=40, p=6)
    est = two_step_fit(d, None, CFG, gamma=50.0)
    assert est.sets.Jn.tolist() == list(range(6))
    assert {4, 5} <= set(est.selected.tolist())
