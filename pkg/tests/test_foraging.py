import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heterosim.errors import ServerDenied
from heterosim.foraging import (
    ForagerParams,
    ForagerRobot,
    ForagingSettings,
    PheromoneStore,
    Source,
    TagWorld,
    crw_heading,
    crw_sd,
    drone_step,
    forager_decide_at_nest,
    make_drone,
    make_world,
    pheromone_ops,
    run_episode,
    serpentine_waypoints,
)
from heterosim.kinematics import AgentClass, AgentState
from heterosim.streams import Streams

P = ForagerParams()
S = ForagingSettings()


def test_crw_gamma_zero_informed_equals_uninformed():
    p = replace(P, gamma_crw=0.0)
    a = [crw_heading(0.3, True, 5.0, p, np.random.default_rng(s)) for s in range(200)]
    b = [crw_heading(0.3, False, 5.0, p, np.random.default_rng(s)) for s in range(200)]
    assert a == b


def test_crw_sd_limits():
    p = replace(P, omega=0.2, gamma_crw=1.3, delta_crw=0.7)
    assert crw_sd(True, 1.0, p) == pytest.approx(1.5)
    assert crw_sd(True, 1e12, p) == pytest.approx(0.2, abs=1e-6)
    assert crw_sd(False, 3.0, p) == 0.2


def test_crw_informed_needs_positive_time(rng):
    with pytest.raises(ValueError):
        crw_heading(0.0, True, 0.0, P, rng)


def test_crw_sample_sd(rng):
    p = replace(P, omega=0.2, gamma_crw=0.6, delta_crw=0.5)
    # small SD so wrapping at +-pi is negligible
    draws = np.array([crw_heading(0.0, True, 4.0, p, rng) for _ in range(100_000)])
    assert np.std(draws) == pytest.approx(0.2 + 0.6 / 2.0, rel=0.02)


@given(st.floats(-math.pi, math.pi), st.booleans(), st.floats(0.01, 100.0))
def test_crw_output_wrapped(theta, informed, t_s):
    th = crw_heading(theta, informed, t_s, replace(P, omega=2.0), np.random.default_rng(1))
    assert -math.pi < th <= math.pi


def test_informed_dispersion_shrinks():
    p = replace(P, omega=0.1, gamma_crw=2.0, delta_crw=0.8)
    rng = np.random.default_rng(3)
    msd = []
    for t_s in (1.0, 4.0, 16.0, 64.0):
        d = np.array([crw_heading(0.0, True, t_s, p, rng) for _ in range(20_000)])
        msd.append(float(np.mean(d**2)))
    assert all(a > b for a, b in zip(msd, msd[1:]))


def _robot_at_nest(world):
    return ForagerRobot(0, AgentState.make(world.nest, AgentClass.FORAGER))


def _tiny_world():
    return make_world("4x8", np.random.default_rng(0), S)


def test_decide_random_site_when_nothing_known():
    world = _tiny_world()
    rb = _robot_at_nest(world)
    rb.found_site, rb.found_count = None, 0
    store = PheromoneStore()
    ev = forager_decide_at_nest(rb, world, store, replace(P, t_f=1.0), 10.0, np.random.default_rng(0), S)
    assert not rb.informed and ev == [] and not store.waypoints
    assert math.dist(rb.goal, world.nest) <= P.dispersal_radius + 1e-9


def test_decide_lays_pheromone_above_t_p():
    world = _tiny_world()
    rb = _robot_at_nest(world)
    rb.found_site, rb.found_count = (0.4, 0.7), 5
    store = PheromoneStore()
    ev = forager_decide_at_nest(rb, world, store, replace(P, t_p=2.0), 10.0, np.random.default_rng(0), S)
    assert len(store.waypoints) == 1 and store.waypoints[0].position == (0.4, 0.7)
    assert rb.goal == (0.4, 0.7) and rb.informed
    assert ev[0][0] == "pheromone_laid"


def test_decide_site_fidelity_between_thresholds():
    world = _tiny_world()
    rb = _robot_at_nest(world)
    rb.found_site, rb.found_count = (0.4, 0.7), 2
    store = PheromoneStore()
    forager_decide_at_nest(rb, world, store, replace(P, t_p=4.0, t_f=1.0), 0.0, np.random.default_rng(0), S)
    assert rb.goal == (0.4, 0.7) and rb.informed and not store.waypoints


def test_decide_follows_pheromone():
    world = _tiny_world()
    rb = _robot_at_nest(world)
    store = PheromoneStore()
    store.deposit((2.0, 2.0), 0.0)
    ev = forager_decide_at_nest(rb, world, store, replace(P, t_f=1.0, t_h=4.0), 1.0, np.random.default_rng(0), S)
    assert rb.goal == (2.0, 2.0) and rb.informed and ev[0][0] == "pheromone_followed"


def test_pheromone_store_ops():
    store = PheromoneStore(decay_rate=0.01)
    nest = (1.25, 1.25)
    assert pheromone_ops(store, "request", robot_position=nest, nest=nest) is None
    store.deposit((0, 0), 0.0, strength=0.4)
    store.deposit((1, 1), 1.0, strength=0.9)
    assert pheromone_ops(store, "request", robot_position=nest, nest=nest).position == (1, 1)
    with pytest.raises(ServerDenied):
        store.request((0.0, 0.0), nest, 0.1)
    with pytest.raises(ValueError):
        pheromone_ops(store, "bogus")


def test_pheromone_decay_closed_form():
    store = PheromoneStore(decay_rate=0.01)
    store.deposit((0, 0), 0.0, strength=1.0)
    store.deposit((1, 0), 0.0, source=Source.DRONE, strength=1.0)
    for _ in range(1000):
        pheromone_ops(store, "decay_tick", dt=0.1)
    forager = [w for w in store.waypoints if w.source == Source.FORAGER][0]
    drone = [w for w in store.waypoints if w.source == Source.DRONE][0]
    assert forager.strength == pytest.approx(math.exp(-1.0), rel=1e-9)
    assert drone.strength == 1.0


def test_pheromone_purge_and_tie_break():
    store = PheromoneStore(decay_rate=1.0, purge_below=0.01)
    store.deposit((0, 0), 0.0)
    store.decay_tick(5.0)  # e^-5 < 0.01
    assert not store.waypoints
    store.deposit((0, 0), 2.0, Source.DRONE, 0.5)
    store.deposit((1, 1), 1.0, Source.DRONE, 0.5)
    assert store.request((1.25, 1.25), (1.25, 1.25), 0.1).position == (1, 1)


@given(st.floats(0.1, 1.0), st.just(0.0) | st.floats(1e-6, 0.05), st.floats(0.05, 5.0))
def test_forager_strength_strictly_decreases(s0, rate, dt):
    store = PheromoneStore(decay_rate=rate, purge_below=0.0)
    store.deposit((0, 0), 0.0, strength=s0)
    store.decay_tick(dt)
    if rate > 0:
        assert store.waypoints[0].strength < s0
    else:
        assert store.waypoints[0].strength == s0


def test_serpentine_covers_every_cell_once():
    arena, lane = 2.5, 0.5
    pts = serpentine_waypoints(arena, lane)
    n = int(round(arena / lane))
    visits = np.zeros((n, n), dtype=int)
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        if y0 != y1:
            continue  # lane change, flown along a cell boundary column
        row = int(y0 // lane)
        lo, hi = sorted((x0, x1))
        for col in range(n):
            cx = (col + 0.5) * lane
            if lo - 1e-9 <= cx <= hi + 1e-9:
                visits[row, col] += 1
    assert np.all(visits == 1)


def test_roundel_under_drone_recorded_at_drone_xy():
    world = TagWorld(2.5, [], [((1.0, 1.0), 0)], [(0.25, 0.25)], (1.25, 1.25))
    settings = replace(S, drone_phi=0.1)
    drone = make_drone(world, settings)
    assert tuple(drone.position[:2]) == (0.25, 0.25)
    store = PheromoneStore()
    events = drone_step(drone, world, store, 0.0, 0.1, np.random.default_rng(0), settings)
    assert events[0][0] == "roundel_found"
    assert store.waypoints[0].position == (0.25, 0.25) and store.waypoints[0].source == Source.DRONE


def test_one_sweep_finds_four_clusters():
    for seed in range(10):
        streams = Streams(seed)
        world = make_world("4x8", streams.get("placement"), S)
        drone = make_drone(world, S)
        store = PheromoneStore()
        rng = streams.get("sensing")
        t = 0.0
        while drone.airborne:
            drone_step(drone, world, store, t, 0.2, rng, S)
            t += 0.2
        assert len(store.waypoints) >= 4, seed


def test_world_layouts(rng):
    for layout, (nc, per) in {"1x32": (1, 32), "4x8": (4, 8)}.items():
        w = make_world(layout, rng, S)
        assert len(w.tags) == 32 and len(w.clusters) == nc and len(w.roundels) == nc
        assert all(c[1] == per for c in w.clusters)
    with pytest.raises(ValueError):
        make_world("2x16", rng, S)


def test_episode_deterministic_and_monotone():
    kw = dict(layout="1x32", drone=False, n_foragers=2, duration=600.0, dt=0.2, seed=7)
    a = run_episode(P, **kw)
    b = run_episode(P, **kw)
    assert a.tags_collected == b.tags_collected and a.collection_times == b.collection_times
    times = [c[0] for c in a.collection_times]
    assert times == sorted(times) and len(set(c[2] for c in a.collection_times)) == len(times)


def test_tag_conservation_every_step():
    seen = []

    def check(t, world, robots, store, drone):
        seen.append(world.collected + world.remaining)
        carried = [r.carrying for r in robots if r.carrying is not None]
        assert all(world.tags[c].collected for c in carried)

    run_episode(P, "4x8", drone=True, duration=200.0, dt=0.2, seed=3, on_step=check)
    assert seen and all(n == 32 for n in seen)


def test_zero_speed_collects_nothing():
    p = replace(P, travel_speed=0.0, search_speed=0.0)
    assert run_episode(p, "1x32", duration=120.0, dt=0.2, seed=1).tags_collected == 0
