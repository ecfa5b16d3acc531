from __future__ import annotations

import math
import random

import pytest

from oracles import models_table, random_cnf
from satpart.a51 import build_circuit, keystream, toy_spec
from satpart.circuit import fix_outputs, tseitin_encode
from satpart.cnf import apply_cube
from satpart.partition import (
    MAX_EXACT_SIZE,
    DecompositionSet,
    Estimate,
    Evaluator,
    Unit,
    enumerate_exact,
    estimate,
    sample_cubes,
)
from satpart.solver import Budget, Solver, Status


def small_toy_cnf(seed: int = 0):
    spec = toy_spec(lengths=(3, 4, 5), feedback=((3, 2), (4, 3), (5, 3)), clock=(2, 2, 3))
    enc = tseitin_encode(build_circuit(spec))
    rng = random.Random(seed)
    key = [rng.getrandbits(1) for _ in range(spec.key_length)]
    return fix_outputs(enc, keystream(spec, key))


def test_set_must_be_nonempty():
    with pytest.raises(ValueError):
        DecompositionSet(())


@pytest.mark.parametrize("vs", [(2, 1), (1, 1), (0, 3)])
def test_set_must_be_ascending_and_positive(vs):
    with pytest.raises(ValueError):
        DecompositionSet(vs)


def test_set_of_sorts_and_rejects_duplicates():
    assert DecompositionSet.of([5, 2, 9]).variables == (2, 5, 9)
    with pytest.raises(ValueError):
        DecompositionSet.of([2, 2])


def test_set_range_checked_against_cnf():
    cnf = random_cnf(random.Random(0), 5, 10)
    with pytest.raises(ValueError):
        estimate(cnf, DecompositionSet((6,)), 4, 0)


@pytest.mark.parametrize("seed", range(5))
def test_single_variable_sample_is_balanced(seed):
    cubes = sample_cubes(DecompositionSet((3,)), 10_000, seed)
    frac = sum(c.values[0] for c in cubes) / len(cubes)
    assert 0.48 <= frac <= 0.52


def test_sampling_is_deterministic_per_seed():
    d = DecompositionSet((1, 4, 7))
    assert sample_cubes(d, 50, 9) == sample_cubes(d, 50, 9)
    assert sample_cubes(d, 50, 9) != sample_cubes(d, 50, 10)


def test_two_variable_sample_covers_all_cubes():
    cubes = sample_cubes(DecompositionSet((1, 2)), 4096, 1)
    assert {c.values for c in cubes} == {(0, 0), (0, 1), (1, 0), (1, 1)}


def test_sample_size_positive():
    with pytest.raises(ValueError):
        sample_cubes(DecompositionSet((1,)), 0, 0)


def test_single_sample_value():
    cnf = small_toy_cnf()
    d = DecompositionSet((1, 2, 3))
    est = estimate(cnf, d, 1, 4)
    assert est.value == 8 * est.samples[0]
    assert est.std_error == 0.0


def test_exact_enumeration_sums_per_cube_conflicts():
    rng = random.Random(17)
    cnf = random_cnf(rng, 16, 68)
    d = DecompositionSet((2, 5, 11, 13))
    est = enumerate_exact(cnf, d)
    per_cube = [Solver(cnf).solve(d.cube(i)).stats.conflicts for i in range(16)]
    assert est.exact and est.sample_size == 16
    assert est.total == sum(per_cube)
    assert est.value == pytest.approx(16 * sum(per_cube) / 16, rel=1e-12)
    assert est.std_error == 0.0


@pytest.mark.parametrize("seed", range(30))
def test_partitioning_is_sound(seed):
    rng = random.Random(seed)
    n = rng.randint(4, 14)
    cnf = random_cnf(rng, n, round(rng.uniform(3.0, 5.5) * n))
    d = DecompositionSet.of(rng.sample(range(1, n + 1), rng.randint(1, min(4, n))))
    est = enumerate_exact(cnf, d)
    sat = models_table(cnf) != 0
    assert bool(est.sat_cubes) == sat
    for i in range(d.num_cubes):
        assert (i in est.sat_cubes) == (models_table(apply_cube(cnf, d.cube(i))) != 0)


def test_sampled_close_to_exact_on_toy():
    cnf = small_toy_cnf(3)
    d = DecompositionSet((1, 2, 3, 4, 5, 6))
    with Evaluator(cnf) as ev:
        exact = ev.enumerate_exact(d)
        sampled = ev.estimate(d, 1000, 3)
    assert abs(sampled.value - exact.value) <= 5 * sampled.std_error


def test_memo_gives_same_costs_as_fresh_solves():
    cnf = small_toy_cnf(1)
    d = DecompositionSet((2, 4, 6, 8))
    with Evaluator(cnf) as ev:
        a = ev.estimate(d, 40, 5)
        b = ev.estimate(d, 40, 5)
    fresh = [Solver(cnf).solve(c).stats.conflicts for c in sample_cubes(d, 40, 5)]
    assert a.samples == b.samples == tuple(map(float, fresh))


def test_worker_pool_matches_in_process():
    cnf = small_toy_cnf(2)
    d = DecompositionSet((1, 3, 5))
    one = estimate(cnf, d, 12, 8)
    two = estimate(cnf, d, 12, 8, workers=2)
    assert one.samples == two.samples and one.sat_cubes == two.sat_cubes


def test_budget_censoring():
    cnf = small_toy_cnf(4)
    d = DecompositionSet((1,))
    est = estimate(cnf, d, 4, 0, budget=Budget(max_conflicts=1))
    assert est.is_censored and est.censored <= 4
    assert all(x <= 1.0 for x in est.samples)


def test_propagation_unit():
    cnf = small_toy_cnf(5)
    d = DecompositionSet((1, 2))
    est = estimate(cnf, d, 8, 0, unit=Unit.PROPAGATIONS)
    assert est.unit is Unit.PROPAGATIONS and min(est.samples) > 0
    assert Unit.PROPAGATIONS.deterministic and not Unit.SECONDS.deterministic


def test_activity_aggregated_over_cubes():
    cnf = small_toy_cnf(6)
    d = DecompositionSet((1, 2))
    with Evaluator(cnf, activity_vars=range(1, 13)) as ev:
        est = ev.enumerate_exact(d)
    assert set(est.activity) == set(range(1, 13))
    assert all(a >= 0 for a in est.activity.values())


def test_record_round_trip_and_report():
    est = Estimate(DecompositionSet((1, 3)), Unit.CONFLICTS, (1.0, 2.0, 6.0), censored=1, seed=4,
                   sat_cubes=(2,), activity={1: 0.5})
    back = Estimate.from_record(est.record())
    assert back == est and back.activity == {1: 0.5}
    assert "\n" not in est.record()
    text = est.report()
    assert "F 12.0" in text and "censored yes (1)" in text and "seed 4" in text
    assert est.std_error == pytest.approx(4 * math.sqrt(7 / 3))


def test_exact_size_guard():
    cnf = random_cnf(random.Random(1), 30, 10)
    with pytest.raises(ValueError):
        enumerate_exact(cnf, DecompositionSet(tuple(range(1, MAX_EXACT_SIZE + 2))))


def test_unsat_formula_has_no_sat_cube():
    spec = toy_spec(lengths=(3, 4, 5), feedback=((3, 2), (4, 3), (5, 3)), clock=(2, 2, 3))
    enc = tseitin_encode(build_circuit(spec))
    z = keystream(spec, [1] * 12)
    z[0] ^= 1
    from satpart.a51 import all_keys, keystream_batch

    assert not (keystream_batch(spec, all_keys(12)) == z).all(axis=1).any()
    est = enumerate_exact(fix_outputs(enc, z), DecompositionSet((1, 2, 3, 4)))
    assert est.sat_cubes == ()
    assert Solver(fix_outputs(enc, z)).solve().status is Status.UNSAT
