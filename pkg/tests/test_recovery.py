import itertools
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deconflict.avoidance import AvoidanceSolution, Maneuver, deviation_cost, solve_avoidance
from deconflict.instances import Aircraft, Instance, ScenarioConfig, generate_cp, generate_rcp
from deconflict.kinematics import Point2, is_separated, relative_state
from deconflict.recovery import (OmegaTables, RecoveryGrid, RecoveryInfeasibleError, RecoverySolution,
                                 _exact, _greedy, avoidance_position, build_omega, check_assignment,
                                 recovery_objective, recovery_tables, recovery_velocity, solve_exact,
                                 solve_greedy)
from deconflict.trajectory import assemble, verify

EAST = Aircraft(0, Point2(0, 0), 0.0, 500.0, Point2(400, 0))


def identity_solution(instance):
    n = len(instance)
    return AvoidanceSolution([Maneuver(3, 0.0, 1.0)] * n, [0.0] * n, 0.0, True)


def fake_solution(instance, maneuvers):
    costs = [deviation_cost(m.q, m.theta, instance.config.w) for m in maneuvers]
    return AvoidanceSolution(list(maneuvers), costs, sum(costs), True)


def random_tables(rng, n, T, density):
    ok = rng.random((n, n, T, T)) < density
    for i in range(n):
        ok[i, i] = True
        for j in range(i):
            ok[i, j] = ok[j, i].T
    ok[:, :, 0, 0] |= rng.random() < 0.3  # occasionally make the origin feasible
    ra_lines = rng.random((n, n, T)) < density
    return OmegaTables.from_arrays(ok, ra_lines)


def brute_force(a, omega):
    n, T = omega.n, omega.grid.n_periods
    best = math.inf
    fixed = [i for i in range(n) if a[i] == 0]
    for t in itertools.product(range(T), repeat=n):
        if any(t[i] != 0 for i in fixed):
            continue
        if check_assignment(omega, t) is None:
            best = min(best, recovery_objective(a, t))
    return best


# ---------------------------------------------------------------- geometry

def test_avoidance_position_examples():
    m = Maneuver(4, math.radians(10), 1.0)
    assert avoidance_position(EAST, m, 0.0) == (0, 0)
    assert avoidance_position(EAST, m, 0.1) == pytest.approx((49.240, 8.682), abs=5e-4)
    nominal = Maneuver(3, 0.0, 1.0)
    assert avoidance_position(EAST, nominal, 0.8) == pytest.approx((400, 0))
    with pytest.raises(ValueError):
        avoidance_position(EAST, nominal, -1.0)


def test_recovery_velocity_restores_speed():
    assert recovery_velocity(EAST, Maneuver(3, 0.0, 1.0), 0.1) == pytest.approx((500, 0))
    assert recovery_velocity(EAST, Maneuver(3, 0.0, 0.93), 0.1) == pytest.approx((500, 0))
    assert recovery_velocity(EAST, Maneuver(3, 0.0, 1.0), 0.9) is None


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([-30, -20, -10, 10, 20, 30]), st.floats(0.9, 1.1), st.floats(0.01, 0.45))
def test_lateral_offset_identity(theta_deg, q, t):
    theta = math.radians(theta_deg)
    m = Maneuver(0, theta, q)
    pos = avoidance_position(EAST, m, t)
    vel = recovery_velocity(EAST, m, t)
    d_a = math.hypot(pos.x, pos.y)
    d_r = math.hypot(400 - pos.x, pos.y)
    theta_r = math.atan2(vel[1], vel[0])  # opposite-side angle back to the nominal track
    assert math.hypot(*vel) == pytest.approx(500)
    lhs, rhs = d_a * math.sin(theta), -d_r * math.sin(theta_r)
    assert lhs == pytest.approx(rhs, rel=1e-9)


def test_grid_times():
    g = RecoveryGrid(15, 2 / 60)
    assert len(g.times) == 15 and g.times[0] == 0.0
    assert np.all(np.diff(g.times) > 0)
    assert g.time(3) == pytest.approx(0.1)


# ---------------------------------------------------------------- omega tables

def test_tables_all_true_for_non_interacting_pair():
    cfg = ScenarioConfig()
    ac = (Aircraft(0, Point2(0, 0), 0.0, 500, Point2(400, 0)),
          Aircraft(1, Point2(0, 50), 0.0, 500, Point2(400, 50)))
    inst = Instance(ac, cfg)
    sol = fake_solution(inst, [Maneuver(3, 0.0, 1.08), Maneuver(3, 0.0, 0.95)])
    om = build_omega((0, 1), inst, sol, RecoveryGrid.from_instance(inst))
    assert om.rr.all() and om.ar.all() and om.ra.all()


def test_crossing_after_both_arrive_is_admissible():
    # extrapolated tracks meet at (300, 0) at 0.6 h; the aircraft land at 0.4 h and 0.1 h
    cfg = ScenarioConfig()
    ac = (Aircraft(0, Point2(0, 0), 0.0, 500, Point2(200, 0)),
          Aircraft(1, Point2(300, -300), math.pi / 2, 500, Point2(300, -250)))
    inst = Instance(ac, cfg)
    sol = identity_solution(inst)
    assert not is_separated(relative_state((0, 0), (500, 0), (300, -300), (0, 500)), cfg.d)
    om = build_omega((0, 1), inst, sol, RecoveryGrid.from_instance(inst))
    T = cfg.n_periods
    avail = np.array([recovery_velocity(a, m, t) is not None for a, m in zip(ac, sol.maneuvers)
                      for t in RecoveryGrid.from_instance(inst).times]).reshape(2, T)
    both = avail[0][:, None] & avail[1][None, :]
    assert both.any()
    assert (om.rr == both).all()
    assert om.ra_lines[avail[0]].all() and om.ar_lines[avail[1]].all()


def test_undisturbed_aircraft_tables():
    inst = generate_rcp(10, config=ScenarioConfig(seed=3))
    sol = solve_avoidance(inst)
    idle = [k for k, c in enumerate(sol.deviation_costs) if c == 0.0]
    assert idle
    tables = OmegaTables(inst, sol)
    T = tables.grid.n_periods
    for i in idle:
        for j in range(10):
            if j == i:
                continue
            rr = tables.pair(i, j).rr
            # the both-recovered state starts at t_n whenever m <= n
            for n in range(T):
                assert (rr[: n + 1, n] == rr[0, n]).all()
            # recovering at period 0 adds nothing beyond rr
            assert (tables.ok[i, j, 0, :T] == rr[0]).all()


def test_symmetry_invariants():
    inst = generate_rcp(8, config=ScenarioConfig(seed=4))
    tables = OmegaTables(inst, solve_avoidance(inst))
    for i in range(8):
        for j in range(8):
            if i == j:
                continue
            a, b = tables.pair(i, j), tables.pair(j, i)
            assert (a.rr == b.rr.T).all()
            assert (a.ar == b.ra.T).all()
            assert (tables.ok[i, j] == tables.ok[j, i].T).all()


def test_table_membership_implies_simulated_separation():
    rng = np.random.default_rng(5)
    for seed in range(4):
        inst = generate_rcp(8, config=ScenarioConfig(seed=seed))
        sol = solve_avoidance(inst)
        tables = OmegaTables(inst, sol)
        C = tables.n_cols
        tested = 0
        for _ in range(300):
            i, j = rng.choice(8, 2, replace=False)
            m, n = rng.integers(C, size=2)
            if not tables.ok[i, j, m, n]:
                continue
            periods = [0] * 8
            periods[i], periods[j] = int(m), int(n)
            rec = RecoverySolution(periods, 0.0, False, "probe")
            trajs = assemble(inst, sol, rec)
            assert verify([trajs[i], trajs[j]], inst.config.d, step=5.0).ok
            tested += 1
        assert tested > 50


def test_hold_column_only_for_speed_only_maneuvers():
    inst = generate_rcp(10, config=ScenarioConfig(seed=0))
    sol = solve_avoidance(inst)
    tables = OmegaTables(inst, sol)
    T = tables.grid.n_periods
    assert tables.hold == T and tables.n_cols == T + 1
    for i, m in enumerate(sol.maneuvers):
        assert tables.available[i, T] == (m.theta == 0.0)
    strict = OmegaTables(inst, sol, allow_hold=False)
    assert strict.hold is None and strict.n_cols == T
    assert (strict.ok == tables.ok[:, :, :T, :T]).all()


def test_hold_pairs_follow_line_tests():
    inst = generate_rcp(10, config=ScenarioConfig(seed=0))
    sol = solve_avoidance(inst)
    tables = OmegaTables(inst, sol)
    T = tables.hold
    for i in range(10):
        for j in range(10):
            if i == j or not (tables.available[i, T] and tables.available[j, T]):
                continue
            # both holding is the stage-1 state
            assert tables.ok[i, j, T, T]
            om = tables.pair(i, j)
            assert (tables.ok[i, j, T, :T] == (om.ar_lines & tables.available[j, :T])).all()


def test_hold_resolves_late_crossing():
    # speed-only pair whose tracks cross after the last grid period
    inst = generate_rcp(10, config=ScenarioConfig(seed=0))
    sol = solve_avoidance(inst)
    with pytest.raises(RecoveryInfeasibleError):
        solve_exact(inst, sol, OmegaTables(inst, sol, allow_hold=False), time_limit=30)
    om = OmegaTables(inst, sol)
    ex = solve_exact(inst, sol, om, time_limit=30)
    assert om.hold in ex.period
    assert verify(assemble(inst, sol, ex), inst.config.d).ok
    data = ex.to_dict(inst)
    held = [r for r in data["aircraft"] if r["hold"]]
    assert held and all(r["time_min"] is None for r in held)


# ---------------------------------------------------------------- solvers

def test_single_aircraft():
    inst = Instance((EAST,), ScenarioConfig())
    sol = fake_solution(inst, [Maneuver(4, math.radians(10), 1.0)])
    om = OmegaTables(inst, sol)
    assert solve_exact(inst, sol, om).period == [0]
    assert solve_exact(inst, sol, om).objective == 0.0


def test_all_true_tables_recover_immediately():
    n, T = 6, 5
    om = OmegaTables.from_arrays(np.ones((n, n, T, T), dtype=bool))
    a = np.linspace(0.1, 0.6, n)
    assert _exact(a, om, 10.0, None, time.perf_counter()).period == [0] * n
    assert _greedy(a, om, time.perf_counter()).period == [0] * n


def test_exact_matches_brute_force_on_random_tables():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    solved = 0
    for _ in range(200):
        n = int(rng.integers(1, 5))
        T = int(rng.integers(1, 7))
        om = random_tables(rng, n, T, density=rng.uniform(0.4, 0.95))
        a = rng.uniform(0, 1, n) * (rng.random(n) > 0.15)
        expected = brute_force(a, om)
        if math.isinf(expected):
            with pytest.raises(RecoveryInfeasibleError):
                _exact(a, om, 10.0, None, time.perf_counter())
            continue
        got = _exact(a, om, 10.0, None, time.perf_counter())
        assert got.optimal
        assert got.objective == pytest.approx(expected, abs=1e-12)
        assert check_assignment(om, got.period) is None
        solved += 1
    assert solved > 100
    assert time.perf_counter() - start < 10.0


def test_infeasible_reports_blocking_pair():
    T = 3
    ok = np.ones((3, 3, T, T), dtype=bool)
    ok[0, 2] = ok[2, 0] = False
    om = OmegaTables.from_arrays(ok)
    with pytest.raises(RecoveryInfeasibleError) as err:
        _exact(np.array([0.3, 0.2, 0.1]), om, 5.0, None, time.perf_counter())
    assert err.value.pair == (0, 2)


def test_greedy_fixes_zero_weight_aircraft():
    rng = np.random.default_rng(1)
    om = random_tables(rng, 5, 6, 0.7)
    a = np.array([0.0, 0.4, 0.0, 0.2, 0.1])
    res = _greedy(a, om, time.perf_counter())
    assert res.period[0] == 0 and res.period[2] == 0


def test_greedy_priority_and_determinism():
    # aircraft 1 (larger weight) takes period 0; aircraft 0 must wait
    T = 4
    ok = np.ones((2, 2, T, T), dtype=bool)
    ok[0, 1, 0, 0] = ok[1, 0, 0, 0] = False
    om = OmegaTables.from_arrays(ok)
    res = _greedy(np.array([0.1, 0.5]), om, time.perf_counter())
    assert res.period == [1, 0]
    # ties broken by id
    assert _greedy(np.array([0.3, 0.3]), om, time.perf_counter()).period == [0, 1]
    assert not res.optimal and res.method == "greedy"


def test_greedy_incomplete_flag():
    T = 3
    ok = np.zeros((2, 2, T, T), dtype=bool)
    om = OmegaTables.from_arrays(ok, np.zeros((2, 2, T), dtype=bool))
    res = _greedy(np.array([0.5, 0.4]), om, time.perf_counter())
    assert res.stats["complete"] is False
    assert res.period == [T - 1, T - 1]


def test_exact_not_worse_than_greedy_on_rcp():
    for seed in range(6):
        inst = generate_rcp(10, config=ScenarioConfig(seed=seed))
        sol = solve_avoidance(inst)
        om = OmegaTables(inst, sol)
        ex = solve_exact(inst, sol, om, time_limit=30)
        gr = solve_greedy(inst, sol, om)
        if ex.optimal and gr.stats["complete"]:
            assert ex.objective <= gr.objective + 1e-12
        for rec in (ex, gr):
            assert verify(assemble(inst, sol, rec), inst.config.d).ok


def test_greedy_scaling_is_at_most_cubic():
    T = 15
    sizes = [10, 20, 40]
    checks, times = [], []
    rng = np.random.default_rng(0)
    for n in sizes:
        # banded tables: aircraft recover in waves, so the fixpoint loop does real work
        ok = np.ones((n, n, T, T), dtype=bool)
        band = rng.integers(0, T // 2, size=n)
        for i in range(n):
            for j in range(n):
                if i != j and (i + j) % 3 == 0:
                    ok[i, j, : band[i], :] = False
        ra = np.ones((n, n, T), dtype=bool)
        om = OmegaTables.from_arrays(ok, ra)
        a = rng.uniform(0.01, 1, n)
        t0 = time.perf_counter()
        for _ in range(3):
            res = _greedy(a, om, time.perf_counter())
        times.append((time.perf_counter() - t0) / 3)
        checks.append(res.stats["checks"])
        assert res.stats["checks"] <= T * n ** 3
    slope_checks = np.polyfit(np.log(sizes), np.log(checks), 1)[0]
    slope_time = np.polyfit(np.log(sizes), np.log(times), 1)[0]
    assert slope_checks <= 3.0
    assert slope_time <= 6.0  # factor-2 tolerance on the cubic exponent


def test_exact_time_limit_returns_incumbent():
    rng = np.random.default_rng(9)
    n, T = 30, 15
    om = random_tables(rng, n, T, 0.97)
    om.ok[:, :, 0, :] = False  # nobody recovers at period 0
    for i in range(n):
        om.ok[i, i] = True
    a = rng.uniform(0.01, 1, n)
    t0 = time.perf_counter()
    res = _exact(a, om, 0.05, None, t0)
    assert time.perf_counter() - t0 < 2.0
    assert check_assignment(om, res.period) is None
    if not res.optimal:
        assert res.stats["nodes"] >= 1024


def test_solution_dict_round_trip():
    inst = generate_cp(4)
    sol = solve_avoidance(inst)
    rec = solve_greedy(inst, sol, OmegaTables(inst, sol))
    data = rec.to_dict(inst)
    assert data["aircraft"][0]["time_min"] == pytest.approx(rec.period[0] * 2.0)
    back = RecoverySolution.from_dict(data)
    assert back.period == rec.period and back.objective == rec.objective


def test_grid_extends_only_when_greedy_is_stuck():
    inst = generate_rcp(20, config=ScenarioConfig(seed=5))
    sol = solve_avoidance(inst)
    base = OmegaTables(inst, sol)
    assert not solve_greedy(inst, sol, base).stats["complete"]
    om = recovery_tables(inst, sol)
    wide = RecoveryGrid.covering_flights(inst, sol)
    assert om.grid == wide and wide.n_periods > inst.config.n_periods
    # recovering after passing the target is never offered
    assert not om.available[:, wide.n_periods - 1].any()
    rec = solve_greedy(inst, sol, om)
    assert rec.stats["complete"] and rec.n_periods == wide.n_periods
    assert verify(assemble(inst, sol, rec), inst.config.d).ok
    back = RecoverySolution.from_dict(rec.to_dict(inst))
    assert back.n_periods == rec.n_periods


def test_configured_grid_kept_when_sufficient():
    inst = generate_cp(4)
    sol = solve_avoidance(inst)
    assert recovery_tables(inst, sol).grid == RecoveryGrid.from_instance(inst)
