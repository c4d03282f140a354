import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from games import (
    THREE_PLAYER,
    THREE_PLAYER_VALUES,
    as_array,
    interaction_game,
    ordering_shapley,
    random_game,
    table_of,
)
from modeshap.errors import ParameterError, SizeError
from modeshap.smv import (
    CachedOracle,
    FunctionOracle,
    ModeDataset,
    TableOracle,
    convergence_check,
    default_k,
    default_truncation_tolerance,
    exact_shapley,
    monte_carlo_shapley,
    permutation,
    rank_modes,
    select_top_k,
    shapley,
)


def three_player_oracle():
    return TableOracle({k: v for k, v in THREE_PLAYER.items()})


# --- exact enumeration

def test_additive_game():
    rep = exact_shapley(3, FunctionOracle(lambda s: sum({1: 1.0, 2: 2.0, 3: 3.0}[k] for k in s)))
    np.testing.assert_allclose(rep.values, [1, 2, 3], atol=1e-12)


def test_symmetric_two_player_game():
    rep = exact_shapley(2, TableOracle({(): 0, (1,): 1, (2,): 1, (1, 2): 3}))
    np.testing.assert_allclose(rep.values, [1.5, 1.5], atol=1e-12)


def test_three_player_game_matches_enumeration_oracle():
    oracle_vals = ordering_shapley(3, lambda s: THREE_PLAYER[tuple(sorted(s))])
    assert tuple(oracle_vals) == THREE_PLAYER_VALUES
    rep = exact_shapley(3, three_player_oracle())
    np.testing.assert_allclose(rep.values, as_array(THREE_PLAYER_VALUES), atol=1e-9)
    assert rep.ranking == [2, 1, 3]
    assert rep.estimator == "exact"


def test_exact_refuses_large_games():
    with pytest.raises(SizeError):
        exact_shapley(13, FunctionOracle(len))


def test_exact_accepts_dataset_of_modes():
    ds = ModeDataset.from_modes(["a", "b"])
    assert ds.indices == [1, 2]
    rep = exact_shapley(ds, FunctionOracle(len))
    np.testing.assert_allclose(rep.values, [1, 1])


def test_dataset_rejects_bad_indices():
    from modeshap.smv import ModeEntry
    with pytest.raises(ParameterError):
        ModeDataset((ModeEntry(1), ModeEntry(1)))


def test_exact_call_count_is_two_to_z():
    rep = exact_shapley(5, FunctionOracle(lambda s: float(len(s) ** 2)))
    assert rep.oracle_calls == 2 ** 5


# --- axioms (exact)

@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_efficiency(z, seed):
    table = random_game(np.random.default_rng(seed), z)
    rep = exact_shapley(z, TableOracle(table))
    full = frozenset(range(1, z + 1))
    assert rep.values.sum() == pytest.approx(table[full] - table[frozenset()], abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_null_player(z, seed):
    rng = np.random.default_rng(seed)
    base = random_game(rng, z - 1)
    v = lambda s: base[frozenset(k for k in s if k != z)]
    rep = exact_shapley(z, FunctionOracle(v))
    assert rep.values[z - 1] == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_symmetry(z, seed):
    rng = np.random.default_rng(seed)
    base = random_game(rng, z)

    def v(s):
        # Players 1 and 2 are interchangeable: only how many of them are present matters.
        c = len(s & {1, 2})
        rest = frozenset(k for k in s if k > 2)
        key = rest | frozenset(range(1, c + 1))
        return base[key]

    rep = exact_shapley(z, FunctionOracle(v))
    assert rep.values[0] == pytest.approx(rep.values[1], abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_linearity(z, seed):
    rng = np.random.default_rng(seed)
    a, b = random_game(rng, z), random_game(rng, z)
    va = exact_shapley(z, TableOracle(a)).values
    vb = exact_shapley(z, TableOracle(b)).values
    vab = exact_shapley(z, TableOracle({k: a[k] + b[k] for k in a})).values
    np.testing.assert_allclose(vab, va + vb, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.floats(-100, 100))
def test_affine_transform_scales_values(z, seed, a, b):
    table = random_game(np.random.default_rng(seed), z)
    base = exact_shapley(z, TableOracle(table))
    moved = exact_shapley(z, TableOracle({k: a * v + b for k, v in table.items()}))
    np.testing.assert_allclose(moved.values, a * base.values, atol=1e-9 * max(1, a))
    if z > 1 and np.min(np.abs(np.diff(np.sort(base.values)))) > 1e-6:
        assert moved.ranking == base.ranking


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_exact_matches_ordering_oracle(z, seed):
    table = {k: round(v, 3) for k, v in random_game(np.random.default_rng(seed), z).items()}
    expected = as_array(ordering_shapley(z, lambda s: table[frozenset(s)]))
    np.testing.assert_allclose(exact_shapley(z, TableOracle(table)).values, expected, atol=1e-9)


# --- Monte Carlo

def test_single_mode_converges_after_one_permutation():
    rep = monte_carlo_shapley(1, TableOracle({(): 2.0, (1,): 5.5}), eps3=0)
    assert rep.permutations_used == 1 and rep.converged
    assert rep.values[0] == 3.5


def test_total_truncation_keeps_only_first_position():
    v = interaction_game(1.0)
    rep = monte_carlo_shapley(6, FunctionOracle(v), seed=3, eps3=math.inf, keep_history=True,
                              permutation_cap=400)
    # Only first-position draws carry value: each draw adds V({k}) - V(empty) = k.
    firsts = np.zeros(6)
    for t in range(1, rep.permutations_used + 1):
        firsts[permutation(3, t, 6)[0]] += 1
    np.testing.assert_allclose(rep.values, firsts * np.arange(1, 7) / rep.permutations_used, atol=1e-9)
    assert rep.oracle_calls <= 6 + 2


def test_monte_carlo_fidelity_on_interaction_game():
    v = interaction_game(0.25)
    exact = exact_shapley(6, FunctionOracle(v)).values
    rep = monte_carlo_shapley(6, FunctionOracle(v), seed=0, eps3=0)
    assert rep.converged
    assert np.max(np.abs(rep.values - exact)) <= 0.02 * (exact.max() - exact.min())
    assert rep.oracle_calls <= rep.permutations_used * (6 + 1)


def test_monte_carlo_unbiased_over_seeds():
    v = interaction_game(1.0)
    exact = as_array(ordering_shapley(6, v))
    runs = np.array([monte_carlo_shapley(6, FunctionOracle(v), seed=s, eps3=0).values for s in range(30)])
    bound = 3 * runs.std(axis=0, ddof=1) / np.sqrt(30)
    assert np.all(np.abs(runs.mean(axis=0) - exact) <= bound)


def test_monte_carlo_null_player_is_zero():
    base = interaction_game(1.0)
    v = lambda s: base(frozenset(k for k in s if k != 6))
    runs = np.array([monte_carlo_shapley(6, FunctionOracle(v), seed=s, eps3=0).values[5] for s in range(10)])
    assert np.all(runs == 0.0)


def test_monte_carlo_is_deterministic_per_seed():
    v = interaction_game(1.0)
    a = monte_carlo_shapley(6, FunctionOracle(v), seed=11, eps3=0)
    b = monte_carlo_shapley(6, FunctionOracle(v), seed=11, eps3=0)
    assert np.array_equal(a.values, b.values) and a.permutations_used == b.permutations_used


def test_monte_carlo_cap_reports_unconverged():
    rep = monte_carlo_shapley(6, FunctionOracle(interaction_game(1.0)), eps3=0, permutation_cap=50)
    assert not rep.converged and rep.permutations_used == 50


def test_permutations_are_reproducible_by_counter():
    assert np.array_equal(permutation(5, 17, 8), permutation(5, 17, 8))
    assert sorted(permutation(5, 17, 8)) == list(range(8))
    assert not np.array_equal(permutation(5, 17, 8), permutation(5, 18, 8))


def test_negative_eps3_rejected():
    with pytest.raises(ParameterError):
        monte_carlo_shapley(2, FunctionOracle(len), eps3=-1)


def test_dispatch():
    v = FunctionOracle(interaction_game(1.0))
    assert shapley(6, v).estimator == "exact"
    assert shapley(6, v, method="monte_carlo", eps3=0).estimator == "monte_carlo"
    assert shapley(6, v, exact_max_modes=4, eps3=0).estimator == "monte_carlo"
    with pytest.raises(ParameterError):
        shapley(6, v, method="banzhaf", exact_max_modes=2)


# --- convergence rule

def snapshots(first, last):
    return [np.asarray(first, float)] + [np.asarray(first, float)] * 99 + [np.asarray(last, float)]


def test_convergence_identical_snapshots():
    assert convergence_check(snapshots([1, 2, 3], [1, 2, 3]))


def test_convergence_two_percent_change_fails():
    assert not convergence_check(snapshots([1.0, 2.0, 3.0], [1.02 * 1, 1.02 * 2, 1.02 * 3]))


def test_convergence_is_strict_at_one_percent():
    # Relative changes (0, 0, 3%) measured against the current value: mean exactly 1%.
    last = np.array([1.0, 1.0, 1.0])
    first = np.array([1.0, 1.0, 0.97])
    assert not convergence_check(snapshots(first, last))


def test_convergence_needs_a_full_window():
    assert not convergence_check([np.ones(2)] * 100)


def test_convergence_near_zero_uses_absolute_change():
    assert convergence_check(snapshots([0.0, 1.0], [1e-13, 1.0]))
    assert not convergence_check(snapshots([0.5, 1.0], [0.0, 1.0]))


# --- truncation tolerance

def test_bootstrap_tolerance_examples():
    const = FunctionOracle(lambda s: 7.0, bootstrap=lambda r, seed: [7.0] * r)
    assert default_truncation_tolerance(const, 20) == 0.0
    fixed = FunctionOracle(lambda s: 92.0, bootstrap=lambda r, seed: [90, 92, 94, 92, 92])
    assert default_truncation_tolerance(fixed, 5) == pytest.approx(math.sqrt(2), abs=1e-12)


def test_tolerance_fallback_is_one_percent():
    plain = TableOracle({(): 50.0, (1,): 95.0})
    assert default_truncation_tolerance(plain, 20, full=frozenset({1})) == pytest.approx(0.95)
    assert default_truncation_tolerance(FunctionOracle(lambda s: -95.0), 20, full=frozenset({1})) \
        == pytest.approx(0.95)


def test_auto_tolerance_used_by_monte_carlo():
    v = interaction_game(0.25)
    oracle = FunctionOracle(v, bootstrap=lambda r, seed: [v(frozenset(range(1, 7)))] * r)
    assert monte_carlo_shapley(6, oracle, eps3="auto").eps3 == 0.0


# --- ranking and top-K

def test_top_k_examples():
    rep = exact_shapley(3, FunctionOracle(lambda s: sum({1: 0.5, 2: 0.9, 3: 0.1}[k] for k in s)))
    assert [i for i, _ in select_top_k(rep, 2)] == [2, 1]
    assert [i for i, _ in select_top_k(rep, 3)] == rep.ranking
    tie = exact_shapley(2, FunctionOracle(lambda s: 0.5 * len(s)))
    assert [i for i, _ in select_top_k(tie, 1)] == [1]
    with pytest.raises(ParameterError):
        select_top_k(rep, 0)
    with pytest.raises(ParameterError):
        select_top_k(rep, 4)


def test_rank_ties_break_by_index():
    assert rank_modes([0.2, 0.5, 0.5, -1]) == [2, 3, 1, 4]


def test_default_k_mass_rule():
    assert default_k([10, 5, 1]) == 3  # 15/16 < 0.95
    assert default_k([100, 1, -5]) == 1
    assert default_k([-1, -2]) == 1
    assert default_k([1, 1, 1, 1]) == 4


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=12))
def test_ranking_is_sorted_permutation(vals):
    r = rank_modes(vals)
    assert sorted(r) == list(range(1, len(vals) + 1))
    assert all(vals[r[i] - 1] >= vals[r[i + 1] - 1] for i in range(len(r) - 1))


def test_cached_oracle_counts_unique_calls():
    c = CachedOracle(FunctionOracle(len))
    for s in ([1], [1], [2], [], [1]):
        c.value(frozenset(s))
    assert c.calls == 3


def test_non_finite_oracle_rejected():
    with pytest.raises(ParameterError):
        exact_shapley(1, FunctionOracle(lambda s: float("nan")))


def test_report_serialization():
    d = exact_shapley(3, three_player_oracle()).to_dict()
    assert set(d) == {"values", "ranking", "top_k", "estimator", "permutations", "converged", "eps3"}


def test_table_helper_covers_all_subsets():
    assert len(table_of(4, len)) == 16
