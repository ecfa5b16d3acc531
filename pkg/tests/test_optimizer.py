from __future__ import annotations

import json
import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satpart.optimizer import (
    SaSchedule,
    SearchLog,
    SearchPoint,
    TabuLists,
    bitcount_objective,
    distance,
    minimize_sa,
    minimize_ts,
    neighborhood,
)
from satpart.partition import DecompositionSet, Estimate, Unit


def P(text: str) -> SearchPoint:
    return SearchPoint(tuple(int(c) for c in text))


def test_radius_one_neighbourhood_example():
    assert set(neighborhood(P("101"), 1)) == {P("001"), P("111"), P("100")}


@pytest.mark.parametrize("m", [2, 3, 6, 10])
def test_neighbourhood_sizes(m):
    full = SearchPoint.full(m)
    assert len(list(neighborhood(full, 1))) == m
    # for m = 2 the distance-2 flip of the full mask is the empty mask
    assert len(list(neighborhood(full, 2))) == m + math.comb(m, 2) - (m == 2)
    single = SearchPoint((1,) + (0,) * (m - 1))
    # flipping the only set bit would give the empty mask
    assert len(list(neighborhood(single, 1))) == m - 1
    assert len(list(neighborhood(single, 2))) == m - 1 + math.comb(m, 2)


def test_neighbourhood_shells_in_order_and_seeded_shuffle():
    p = SearchPoint.full(6)
    pts = list(neighborhood(p, 2, seed=3))
    assert [distance(p, q) for q in pts] == [1] * 6 + [2] * 15
    assert pts == list(neighborhood(p, 2, seed=3))
    assert set(pts) == set(neighborhood(p, 2))


def test_point_invariants_and_hex():
    with pytest.raises(ValueError):
        SearchPoint((0, 0, 0))
    with pytest.raises(ValueError):
        SearchPoint(())
    p = P("100000001")
    assert p.hex == "101"
    assert SearchPoint.from_hex(p.hex, 9) == p
    assert p.selected([10, 20, 30, 40, 50, 60, 70, 80, 90]) == DecompositionSet((10, 90))
    assert p.flip([0, 8]) is None
    assert p.size == 2


def test_schedule_validation():
    with pytest.raises(ValueError):
        SaSchedule(1.0, q=1.0)
    with pytest.raises(ValueError):
        SaSchedule(0.0)
    assert SaSchedule(2.0).t_inf == pytest.approx(2e-6)
    assert SaSchedule.default_for(50.0).t0 == 5.0


def test_sa_reaches_bitcount_optimum():
    hits = 0
    for seed in range(50):
        res = minimize_sa(bitcount_objective, SearchPoint.full(16), SaSchedule(1.6, 0.995), seed=seed)
        hits += res.point.size == 1
    assert hits >= 49


def test_sa_cold_start_returns_start():
    start = SearchPoint.full(5)
    res = minimize_sa(bitcount_objective, start, SaSchedule(1e-9, t_inf=1.0))
    assert res.point == start and res.evaluations == 1 and res.reason == "temperature"


def constant(value: float):
    def f(p: SearchPoint) -> Estimate:
        return Estimate(DecompositionSet((1,)), Unit.CONFLICTS, (value / 2,), exact=True)

    return f


def test_sa_accepts_equal_values(tmp_path):
    log = tmp_path / "sa.jsonl"
    minimize_sa(constant(4.0), SearchPoint.full(4), SaSchedule(1e-3, 0.9), max_evals=5, log=SearchLog(log))
    decisions = [json.loads(line)["decision"] for line in log.read_text().splitlines()]
    assert decisions[0] == "start"
    assert set(decisions[1:]) == {"accept"}


def test_sa_zero_start_stops():
    res = minimize_sa(constant(0.0), SearchPoint.full(4))
    assert res.reason == "zero-start" and res.evaluations == 1


def test_sa_time_limit():
    res = minimize_sa(bitcount_objective, SearchPoint.full(12), SaSchedule(5.0, 0.9999), time_limit=0.2)
    assert res.reason == "time"


@pytest.mark.parametrize("search", [minimize_sa, minimize_ts])
def test_evaluation_cap_is_reported(search):
    res = search(bitcount_objective, SearchPoint.full(10), max_evals=7)
    assert res.evaluations == 7 and res.reason == "evaluations"


def test_ts_reaches_optimum_and_exhausts_small_space():
    res = minimize_ts(bitcount_objective, SearchPoint.full(8))
    assert res.point.size == 1
    assert res.reason == "exhausted"
    assert res.evaluations == 255
    assert len(set(res.history)) == len(res.history)


def test_ts_bitcount_many_seeds():
    hits = 0
    for seed in range(50):
        res = minimize_ts(bitcount_objective, SearchPoint.full(16), seed=seed, max_evals=500)
        assert len(set(res.history)) == len(res.history)
        hits += res.point.size == 1
    assert hits >= 49


def test_ts_recentres_by_activity(tmp_path):
    # flat objective: no sweep improves, so the next centre is the open point
    # whose selected variables carry the most accumulated activity
    def f(p: SearchPoint) -> Estimate:
        act = {v: float(v) for v in range(1, 5)}
        return Estimate(DecompositionSet((1,)), Unit.CONFLICTS, (1.0,), exact=True, activity=act)

    log = tmp_path / "ts.jsonl"
    res = minimize_ts(f, P("1000"), candidates=[1, 2, 3, 4], max_evals=6, log=SearchLog(log))
    assert res.history[:4] == [P("1000"), *neighborhood(P("1000"), 1, 0)]
    recs = [json.loads(line) for line in log.read_text().splitlines()]
    recentres = [r["mask"] for r in recs if r["decision"] == "recenter"]
    # 1001 selects variables {1, 4}: the largest summed activity among open points
    assert recentres[0] == P("1001").hex


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 7), st.integers(1, 2), st.randoms(use_true_random=False))
def test_tabu_lists_partition_checked_points(m, rho, rnd):
    tabu = TabuLists(rho)
    pts = [SearchPoint(tuple((i >> j) & 1 for j in range(m))) for i in range(1, 1 << m)]
    rnd.shuffle(pts)
    marked = set()
    for p in pts[: rnd.randint(1, len(pts))]:
        tabu.mark(p)
        marked.add(p)
        assert len(tabu) == len(marked)
        assert tabu.l1.isdisjoint(tabu.l2)
        for q, open_count in tabu.l2.items():
            assert open_count == sum(1 for r in neighborhood(q, rho) if r not in marked) > 0
        for q in tabu.l1:
            assert all(r in marked for r in neighborhood(q, rho))
    with pytest.raises(ValueError):
        tabu.mark(next(iter(marked)))


def test_log_resume_skips_known_points(tmp_path):
    path = tmp_path / "run.jsonl"
    calls = Counter()

    def f(p):
        calls[p] += 1
        return bitcount_objective(p)

    first = minimize_ts(f, SearchPoint.full(6), log=SearchLog(path), max_evals=20)
    n_first = sum(calls.values())
    with path.open("a") as fh:
        fh.write('{"torn": ')  # interrupted write
    second = minimize_ts(f, SearchPoint.full(6), log=SearchLog(path), max_evals=20)
    assert sum(calls.values()) == n_first
    assert second.history == first.history
    for line in path.read_text().splitlines()[:3]:
        rec = json.loads(line)
        assert {"mask", "size", "N", "unit", "F", "decision"} <= rec.keys()


def test_sa_runs_are_reproducible():
    a = minimize_sa(bitcount_objective, SearchPoint.full(10), SaSchedule(1.0, 0.99), seed=4)
    b = minimize_sa(bitcount_objective, SearchPoint.full(10), SaSchedule(1.0, 0.99), seed=4)
    assert a.history == b.history


def test_distance():
    assert distance(P("1100"), P("1010")) == 2
