"""Ant-inspired central-place foraging with an optional aerial grid searcher.

Ground foragers run the search/return state machine with a correlated random
walk; the drone sweeps a serpentine grid and reports roundel sightings to the
server, which hands pheromone-like waypoints to foragers waiting at the nest.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum

import numpy as np

from .errors import ServerDenied
from .kinematics import AgentClass, AgentState, KinematicParams, Mode, step_bicycle
from .sensing import VisionField, detect_prob_aerial, detect_prob_ground, sample_detection

log = logging.getLogger(__name__)

TOTAL_TAGS = 32
LAYOUTS = {"1x32": (1, 32), "4x8": (4, 8)}


@dataclass(frozen=True)
class ForagerParams:
    """The 13 evolvable forager parameters. Thresholds are rounded to integers on use."""

    omega: float = 1.2
    gamma_crw: float = 1.5
    delta_crw: float = 0.5
    t_p: float = 2.0
    t_f: float = 1.0
    t_h: float = 4.0
    travel_speed: float = 0.25
    search_speed: float = 0.04
    give_up_time: float = 30.0
    fidelity_decay: float = 0.0
    pheromone_decay: float = 0.005
    dispersal_radius: float = 0.35
    crw_interval: float = 1.0

    def __post_init__(self):
        if self.omega < 0 or self.gamma_crw < 0 or self.delta_crw <= 0:
            raise ValueError("need omega >= 0, gamma_crw >= 0, delta_crw > 0")
        if min(self.t_p, self.t_f, self.t_h) < 0:
            raise ValueError("tag-count thresholds must be nonnegative")
        if self.crw_interval <= 0 or self.give_up_time <= 0:
            raise ValueError("crw_interval and give_up_time must be positive")

    @property
    def thresholds(self):
        return int(round(self.t_p)), int(round(self.t_f)), int(round(self.t_h))

    def as_vector(self):
        return [getattr(self, f.name) for f in fields(self)]

    @classmethod
    def from_vector(cls, values):
        return cls(**dict(zip((f.name for f in fields(cls)), (float(v) for v in values))))


@dataclass(frozen=True)
class ForagingSettings:
    arena: float = 2.5
    nest_radius: float = 0.1
    r_count: float = 0.15
    r_detect: float = 0.05
    cluster_radius: float = 0.12
    tag_spacing: float = 0.04
    roundel_offset: float = 0.05
    cluster_margin: float = 0.25
    min_nest_distance: float = 1.0
    lane_spacing: float = 0.5
    drone_altitude: float = 1.5
    drone_speed: float = 0.5
    drone_sweeps: int = 1
    drone_phi: float = 0.15
    drone_range: float = 0.35
    drone_strength: float = 0.5  # coarse aerial fix ranks below a fresh forager site
    exhaust_radius: float = 0.01
    exhaust_after: int = 3
    purge_below: float = 0.01
    wheelbase: float = 0.1
    gamma_max: float = 1.2
    v_max: float = 0.3


# ---------------------------------------------------------------------------
# tags and world


@dataclass
class Tag:
    id: int
    position: tuple
    cluster: int
    collected: bool = False


@dataclass
class TagWorld:
    arena: float
    tags: list
    clusters: list
    roundels: list
    nest: tuple

    @property
    def remaining(self):
        return sum(not t.collected for t in self.tags)

    @property
    def collected(self):
        return sum(t.collected for t in self.tags)


def _cluster_offsets(count, spacing):
    side = math.ceil(math.sqrt(count))
    pts = []
    for r in range(side):
        for c in range(side):
            pts.append(((c - (side - 1) / 2) * spacing, (r - (side - 1) / 2) * spacing))
    pts.sort(key=lambda p: (p[0] ** 2 + p[1] ** 2, p))
    return pts[:count]


def make_world(layout, rng, settings: ForagingSettings = ForagingSettings()) -> TagWorld:
    """Scatter 32 tags in one cluster of 32 or four clusters of 8, each with a roundel."""
    if layout not in LAYOUTS:
        raise ValueError(f"clusters must be one of {sorted(LAYOUTS)}, got {layout!r}")
    n_clusters, per = LAYOUTS[layout]
    a = settings.arena
    nest = (a / 2, a / 2)
    spacing = settings.tag_spacing * (1.5 if per > 8 else 1.0)
    offsets = _cluster_offsets(per, spacing)
    extent = max(math.hypot(*o) for o in offsets)
    margin = settings.cluster_margin + extent
    centers = []
    while len(centers) < n_clusters:
        c = tuple(rng.uniform(margin, a - margin, size=2))
        if math.dist(c, nest) < settings.min_nest_distance:
            continue
        if any(math.dist(c, o) < 2 * (extent + settings.r_count) for o in centers):
            continue
        centers.append(c)
    tags, roundels = [], []
    for ci, c in enumerate(centers):
        for dx, dy in offsets:
            tags.append(Tag(len(tags), (c[0] + dx, c[1] + dy), ci))
        ang = rng.uniform(-math.pi, math.pi)
        r = extent + settings.roundel_offset
        roundels.append((c[0] + r * math.cos(ang), c[1] + r * math.sin(ang)))
    clusters = [(c, per) for c in centers]
    return TagWorld(a, tags, clusters, roundels, nest)


# ---------------------------------------------------------------------------
# pheromone server


class Source(str, Enum):
    DRONE = "drone"
    FORAGER = "forager"


@dataclass
class Waypoint:
    position: tuple
    strength: float
    source: Source
    created_at: float
    misses: int = 0


@dataclass
class PheromoneStore:
    decay_rate: float = 0.005
    waypoints: list = field(default_factory=list)
    purge_below: float = 0.01

    def deposit(self, position, t, source=Source.FORAGER, strength=1.0):
        self.waypoints.append(Waypoint(tuple(position), float(strength), Source(source), float(t)))

    def decay_tick(self, dt):
        """Forager waypoints decay exponentially; drone waypoints are permanent."""
        factor = math.exp(-self.decay_rate * dt)
        keep = []
        for w in self.waypoints:
            if w.source == Source.FORAGER:
                w.strength *= factor
                if w.strength < self.purge_below:
                    continue
            keep.append(w)
        self.waypoints = keep

    def request(self, robot_position, nest, nest_radius):
        """Strongest waypoint (oldest on ties); only answered for robots at the nest."""
        if math.dist(robot_position[:2], nest) > nest_radius + 1e-9:
            raise ServerDenied("pheromone requests are only answered at the nest")
        if not self.waypoints:
            return None
        return min(self.waypoints, key=lambda w: (-w.strength, w.created_at))

    def report_empty(self, position, radius, limit):
        """Count a fruitless visit near ``position``; drop waypoints with ``limit`` such visits in a row."""
        keep, dropped = [], 0
        for w in self.waypoints:
            if math.dist(w.position, position[:2]) <= radius:
                w.misses += 1
                if w.misses >= limit:
                    dropped += 1
                    continue
            keep.append(w)
        self.waypoints = keep
        return dropped

    def report_found(self, position, radius):
        for w in self.waypoints:
            if math.dist(w.position, position[:2]) <= radius:
                w.misses = 0


def pheromone_ops(store: PheromoneStore, action, **kw):
    """Dispatch ``deposit`` / ``decay_tick`` / ``request`` on the store."""
    if action == "deposit":
        store.deposit(kw["position"], kw.get("t", 0.0), kw.get("source", Source.FORAGER), kw.get("strength", 1.0))
        return store
    if action == "decay_tick":
        store.decay_tick(kw["dt"])
        return store
    if action == "request":
        return store.request(kw["robot_position"], kw["nest"], kw.get("nest_radius", 0.1))
    raise ValueError(f"unknown pheromone action {action!r}")


# ---------------------------------------------------------------------------
# correlated random walk


def crw_sd(informed, t_s, params: ForagerParams):
    if not informed:
        return params.omega
    return params.omega + params.gamma_crw / (t_s**params.delta_crw)


def crw_heading(theta_prev, informed, t_s, params: ForagerParams, rng):
    """Next heading ~ Normal(theta_prev, SD^2), SD = omega (+ gamma / t_s^delta if informed)."""
    if informed and t_s <= 0:
        raise ValueError("informed search needs t_s > 0")
    sd = crw_sd(informed, t_s, params)
    th = theta_prev + (rng.normal(0.0, sd) if sd > 0 else 0.0)
    th = math.atan2(math.sin(th), math.cos(th))
    return math.pi if th == -math.pi else th


# ---------------------------------------------------------------------------
# forager state machine


class Phase(str, Enum):
    TRAVEL = "travel"
    SEARCH = "search"
    RETURN = "return"


@dataclass
class ForagerRobot:
    id: int
    state: AgentState
    phase: Phase = Phase.TRAVEL
    goal: tuple = None
    informed: bool = False
    search_start: float = 0.0
    next_turn: float = 0.0
    desired_heading: float = 0.0
    carrying: int = None
    found_site: tuple = None
    found_count: int = 0
    found_time: float = 0.0
    exhaust_target: tuple = None


def _steer_to_heading(robot, desired, settings):
    err = desired - robot.state.heading
    err = math.atan2(math.sin(err), math.cos(err))
    return max(-settings.gamma_max, min(settings.gamma_max, 2.0 * err)), err


def _start_search(robot, t, informed):
    robot.phase = Phase.SEARCH
    robot.informed = informed
    robot.search_start = t
    robot.next_turn = t
    robot.desired_heading = robot.state.heading


def _random_site(world, params, rng):
    ang = rng.uniform(-math.pi, math.pi)
    r = params.dispersal_radius * math.sqrt(rng.uniform(0.0, 1.0))
    a = world.arena
    x = min(max(world.nest[0] + r * math.cos(ang), 0.05), a - 0.05)
    y = min(max(world.nest[1] + r * math.sin(ang), 0.05), a - 0.05)
    return (x, y)


def _detect_tag(robot, world, field_, rng, settings):
    x, y = robot.state.position[0], robot.state.position[1]
    for (c, _), ci in zip(world.clusters, range(len(world.clusters))):
        if math.hypot(c[0] - x, c[1] - y) > settings.cluster_radius * 3 + field_.range_max + 0.2:
            continue
        for tag in world.tags:
            if tag.collected or tag.cluster != ci:
                continue
            p = detect_prob_ground(tag.position, robot.state.position, robot.state.heading, field_)
            if p > 0 and sample_detection(rng, p):
                return tag
    return None


def _count_nearby(world, site, radius):
    return sum(1 for t in world.tags if not t.collected and math.dist(t.position, site) <= radius)


def forager_decide_at_nest(robot, world, store, params, t, rng, settings):
    """Nest-side branch of the forager algorithm. Returns a list of events."""
    events = []
    t_p, t_f, t_h = params.thresholds
    site = robot.found_site
    d = robot.found_count
    if site is not None and params.fidelity_decay > 0:
        d = int(math.floor(d * math.exp(-params.fidelity_decay * (t - robot.found_time))))
    if site is not None and d > t_p:
        store.deposit(site, t, Source.FORAGER)
        events.append(("pheromone_laid", robot.id, site))
        robot.goal, robot.informed, robot.exhaust_target = site, True, None
    elif site is not None and d > t_f:
        robot.goal, robot.informed, robot.exhaust_target = site, True, None
    else:
        wp = store.request(robot.state.position, world.nest, settings.nest_radius)
        if wp is not None and d < t_h:
            robot.goal, robot.informed, robot.exhaust_target = wp.position, True, wp.position
            events.append(("pheromone_followed", robot.id, wp.position))
        else:
            robot.goal, robot.informed, robot.exhaust_target = _random_site(world, params, rng), False, None
    robot.phase = Phase.TRAVEL
    robot.found_site, robot.found_count = None, 0
    return events


def forager_step(robot: ForagerRobot, world: TagWorld, store: PheromoneStore, params: ForagerParams,
                 t, dt, rng, kin: KinematicParams, settings: ForagingSettings, field_: VisionField):
    """Advance one forager by one tick. Returns events as (name, robot_id, payload)."""
    events = []
    st = robot.state
    pos = (st.position[0], st.position[1])

    if robot.phase == Phase.TRAVEL:
        goal = robot.goal
        dist = math.dist(pos, goal)
        if dist < max(settings.nest_radius * 0.5, params.travel_speed * dt * 1.5, 0.02):
            _start_search(robot, t, robot.informed)
        else:
            desired = math.atan2(goal[1] - pos[1], goal[0] - pos[0])
            g, err = _steer_to_heading(robot, desired, settings)
            v = params.travel_speed * max(math.cos(err), 0.3)
            return _move(robot, v, g, world, kin, settings, events)

    if robot.phase == Phase.RETURN:
        if math.dist(pos, world.nest) <= settings.nest_radius:
            robot.carrying = None
            events += forager_decide_at_nest(robot, world, store, params, t, rng, settings)
            return events
        desired = math.atan2(world.nest[1] - pos[1], world.nest[0] - pos[0])
        g, err = _steer_to_heading(robot, desired, settings)
        v = params.travel_speed * max(math.cos(err), 0.3)
        return _move(robot, v, g, world, kin, settings, events)

    # search
    tag = _detect_tag(robot, world, field_, rng, settings)
    if tag is not None:
        tag.collected = True
        robot.carrying = tag.id
        robot.found_site = pos
        robot.found_count = _count_nearby(world, pos, settings.r_count)
        robot.found_time = t
        robot.phase = Phase.RETURN
        if robot.exhaust_target is not None:
            store.report_found(robot.exhaust_target, settings.exhaust_radius)
        events.append(("tag_collected", robot.id, (tag.id, tag.cluster)))
        return events
    t_s = t - robot.search_start
    if t_s > params.give_up_time:
        if robot.exhaust_target is not None:
            n = store.report_empty(robot.exhaust_target, settings.exhaust_radius, settings.exhaust_after)
            if n:
                events.append(("waypoint_exhausted", robot.id, robot.exhaust_target))
        robot.found_site, robot.found_count = None, 0
        robot.phase = Phase.RETURN
        events.append(("gave_up", robot.id, None))
        return events
    if t >= robot.next_turn:
        robot.desired_heading = crw_heading(robot.desired_heading, robot.informed, max(t_s, dt), params, rng)
        robot.next_turn = t + params.crw_interval
    g, err = _steer_to_heading(robot, robot.desired_heading, settings)
    return _move(robot, params.search_speed, g, world, kin, settings, events)


def _move(robot, v, g, world, kin, settings, events):
    if v <= 0:
        robot.state = step_bicycle(robot.state, 0.0, g, kin)
        return events
    nxt = step_bicycle(robot.state, v, g, kin)
    x, y = nxt.position[0], nxt.position[1]
    a = world.arena
    th = nxt.heading
    reflected = False
    if x < 0 or x > a:
        th = math.pi - th
        x = min(max(x, 0.0), a)
        reflected = True
    if y < 0 or y > a:
        th = -th
        y = min(max(y, 0.0), a)
        reflected = True
    if reflected:
        th = math.atan2(math.sin(th), math.cos(th))
        p = nxt.position.copy()
        p[0], p[1] = x, y
        vel = np.array([nxt.speed * math.cos(th), nxt.speed * math.sin(th), 0.0])
        nxt = AgentState(p, vel, nxt.cls, th, nxt.steering, nxt.speed, nxt.mode)
        robot.desired_heading = th
        log.debug("forager %d reflected at wall", robot.id)
        events.append(("wall_reflect", robot.id, None))
    robot.state = nxt
    return events


# ---------------------------------------------------------------------------
# drone


def serpentine_waypoints(arena, lane_spacing):
    """Boustrophedon lanes at the centres of lane_spacing-wide strips."""
    n = max(1, int(math.ceil(arena / lane_spacing - 1e-9)))
    half = lane_spacing / 2
    pts = []
    for lane in range(n):
        y = min(half + lane * lane_spacing, arena - half)
        xs = (half, arena - half) if lane % 2 == 0 else (arena - half, half)
        pts.append((xs[0], y))
        pts.append((xs[1], y))
    return pts


@dataclass
class Drone:
    position: np.ndarray
    path: list
    leg: int = 0
    sweeps_done: int = 0
    airborne: bool = True
    seen: set = field(default_factory=set)
    trace: list = field(default_factory=list)


def make_drone(world, settings: ForagingSettings):
    path = serpentine_waypoints(world.arena, settings.lane_spacing)
    start = np.array([path[0][0], path[0][1], settings.drone_altitude])
    return Drone(start, path)


def drone_step(drone: Drone, world: TagWorld, store: PheromoneStore, t, dt, rng, settings: ForagingSettings,
               field_: VisionField = None, record_trace=False):
    """Fly the serpentine, look for roundels, and report sightings as permanent waypoints."""
    events = []
    if not drone.airborne:
        return events
    field_ = field_ or VisionField(phi=settings.drone_phi, range_max=settings.drone_range,
                                   altitude=settings.drone_altitude)
    for idx, r in enumerate(world.roundels):
        if idx in drone.seen:
            continue
        p = detect_prob_aerial(r, drone.position, field_)
        if p > 0 and sample_detection(rng, p):
            drone.seen.add(idx)
            xy = (float(drone.position[0]), float(drone.position[1]))
            store.deposit(xy, t, Source.DRONE, settings.drone_strength)
            events.append(("roundel_found", -1, (idx, xy)))
    step = settings.drone_speed * dt
    while step > 0 and drone.airborne:
        tgt = drone.path[drone.leg]
        dx, dy = tgt[0] - drone.position[0], tgt[1] - drone.position[1]
        d = math.hypot(dx, dy)
        if d <= step:
            drone.position[0], drone.position[1] = tgt
            step -= d
            drone.leg += 1
            if drone.leg == len(drone.path):
                drone.sweeps_done += 1
                drone.leg = 0
                drone.path = drone.path[::-1]
                if drone.sweeps_done >= settings.drone_sweeps:
                    drone.airborne = False
                    events.append(("drone_landed", -1, None))
        else:
            drone.position[0] += dx / d * step
            drone.position[1] += dy / d * step
            step = 0
        if record_trace:
            drone.trace.append((float(drone.position[0]), float(drone.position[1])))
    return events


# ---------------------------------------------------------------------------
# episode


@dataclass
class EpisodeResult:
    tags_collected: int
    elapsed: float
    tags_per_hour: float
    events: list
    collection_times: list
    terminal_event: str = None


def run_episode(params: ForagerParams, layout="1x32", drone=False, n_foragers=2, duration=1800.0, dt=0.2,
                seed=0, settings: ForagingSettings = ForagingSettings(), streams=None, on_step=None):
    """One seeded foraging episode; stops at ``duration`` or when all tags are collected."""
    from .streams import Streams

    streams = streams or Streams(seed)
    world = make_world(layout, streams.get("placement"), settings)
    store = PheromoneStore(params.pheromone_decay, purge_below=settings.purge_below)
    kin = KinematicParams(wheelbase=settings.wheelbase, gamma_max=settings.gamma_max, dt=dt,
                          v_max={AgentClass.FORAGER: settings.v_max})
    field_ = VisionField(phi=0.05, range_max=settings.r_detect, range_min=0.0, half_angle=0.8)
    search_rng = streams.get("search")
    sense_rng = streams.get("sensing")
    robots = []
    for rid in range(n_foragers):
        ang = 2 * math.pi * rid / max(n_foragers, 1)
        st = AgentState.make(world.nest, AgentClass.FORAGER, heading=ang, mode=Mode.SEARCH)
        rb = ForagerRobot(rid, st)
        rb.goal = _random_site(world, params, search_rng)
        robots.append(rb)
    dr = make_drone(world, settings) if drone else None
    events, times = [], []
    steps = int(round(duration / dt))
    t = 0.0
    terminal = None
    for step in range(1, steps + 1):
        t = step * dt
        if dr is not None:
            events += [(t, *e) for e in drone_step(dr, world, store, t, dt, sense_rng, settings)]
        for rb in robots:
            for e in forager_step(rb, world, store, params, t, dt, search_rng, kin, settings, field_):
                events.append((t, *e))
                if e[0] == "tag_collected":
                    times.append((t, rb.id, e[2][0], e[2][1]))
        store.decay_tick(dt)
        if on_step is not None:
            on_step(t, world, robots, store, dr)
        if world.remaining == 0:
            terminal = "all_tags_collected"
            break
    elapsed = t if steps > 0 else 0.0
    rate = world.collected / (elapsed / 3600.0) if elapsed > 0 else 0.0
    return EpisodeResult(world.collected, elapsed, rate, events, times, terminal)


def params_dict(params: ForagerParams):
    return asdict(params)
