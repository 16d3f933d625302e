"""Mode guards and control laws for relays, sensors, manipulators and the adversary.

Every law here is a pure function of the step snapshot plus a small per-agent
memory record; the engine evaluates all of them before mutating any state.
Holonomic laws produce accelerations, ground laws produce (v, gamma_d) through
``vector_to_command``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyRegionError
from .kinematics import AgentClass, Mode
from .manipulation import ArmModel, manipulation_control
from .sensing import ObstacleField, ground_centroid, in_ground_sector, inside_any, nearest_obstacle, obstacle_repulsion
from .topology import safe_goal_region


@dataclass(frozen=True)
class ControlParams:
    kappa: float = 1.0
    damping: float = 1.0
    attract_gain: float = 0.05
    attract_center: tuple = (0.0, 0.0, 0.0)
    alpha: float = 1.0
    k_v: float = 2.0
    broadcast_period: float = 0.5
    r_capture: float = 0.2
    t_lost: float = 2.0
    r_patrol: float = 1.5
    d_evade: float = 1.0
    adversary_range: float = 3.0
    search_resample: float = 5.0
    goal_tries: int = 32
    arrive_tol: float = 0.2
    min_turn_speed: float = 0.3
    r_manip: float = 0.1
    goal_clearance: float = 0.5
    near_margin: float = 0.2  # far-branch rest point is exactly mid-range; widen the near branch past it

    def __post_init__(self):
        if not (self.kappa > 0 and self.damping > 0 and self.attract_gain >= 0 and self.alpha > 0):
            raise ValueError("need kappa > 0, damping > 0, attract_gain >= 0, alpha > 0")
        object.__setattr__(self, "attract_center", tuple(float(c) for c in self.attract_center))


@dataclass(frozen=True)
class FollowerMemory:
    mode: Mode = Mode.TETHER
    goal: tuple = None
    goal_time: float = -math.inf
    last_seen: float = -math.inf
    target: tuple = None


def _planar(v):
    out = np.array(v, dtype=float)
    out[2] = 0.0
    return out


def vector_to_command(u, heading, v_max, gamma_max, k_v=2.0, allow_reverse=False, min_turn_speed=0.3):
    """Map a planar velocity-like vector to bicycle commands (v, gamma_d).

    Forward: v = min(v_max, k_v |u|) scaled down by cos(bearing error) with floor
    ``min_turn_speed`` so the agent can still turn around; steering is the bearing
    error clipped to +-gamma_max. With ``allow_reverse`` a target behind the agent
    is approached backwards instead.
    """
    ux, uy = float(u[0]), float(u[1])
    mag = math.hypot(ux, uy)
    if mag < 1e-12:
        return 0.0, 0.0
    err = math.atan2(uy, ux) - heading
    err = math.atan2(math.sin(err), math.cos(err))
    speed = min(v_max, k_v * mag)
    if allow_reverse and math.cos(err) < 0:
        rear = err - math.pi
        rear = math.atan2(math.sin(rear), math.cos(rear))
        return -speed * abs(math.cos(err)), max(-gamma_max, min(gamma_max, -rear))
    scale = max(math.cos(err), min_turn_speed)
    return speed * scale, max(-gamma_max, min(gamma_max, err))


def relay_control(i, topology, positions, velocities, params: ControlParams, r_eps, obstacles=None, bias=None):
    """Spring-mass law: Gabriel springs at rest length R_eps, damping, target attraction."""
    pos = np.asarray(positions, dtype=float)
    xi = pos[i]
    u = np.zeros(3)
    for j in topology.neighbors(i):
        d = pos[j] - xi
        l = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        if l > 0:
            u += (params.kappa * (l - r_eps) / l) * d
    u -= params.damping * np.asarray(velocities[i], dtype=float)
    u -= params.attract_gain * (xi - np.asarray(params.attract_center))
    if obstacles is not None:
        u += obstacle_repulsion(xi, obstacles)
    if bias is not None:
        u += bias
    return _planar(u)


def relay_mode_guard(i, topology, positions, radii):
    """Follower mode iff some assigned follower sits in (R_eps, R_c); track the farthest."""
    pos = np.asarray(positions, dtype=float)
    best, best_d = None, -1.0
    for k, relay in topology.assignment.items():
        if relay != i:
            continue
        d = math.dist(pos[k].tolist(), pos[i].tolist())
        if radii.r_eps < d < radii.r_c and d > best_d:
            best, best_d = k, d
    return (Mode.FOLLOWER, best) if best is not None else (Mode.SPRING_MASS, None)


def follow_control(i, k, positions, velocities, params: ControlParams, obstacles=None):
    """alpha (x_k - x_i), with damping so the double integrator does not ring."""
    pos = np.asarray(positions, dtype=float)
    u = params.alpha * (pos[k] - pos[i]) - params.damping * np.asarray(velocities[i], dtype=float)
    if obstacles is not None:
        u += obstacle_repulsion(pos[i], obstacles)
    return _planar(u)


def tether_vector(state, relay_pos, rest, params: ControlParams):
    d = _planar(np.asarray(relay_pos) - state.position)
    l = float(np.linalg.norm(np.asarray(relay_pos) - state.position))
    planar = float(np.linalg.norm(d))
    if planar < 1e-9:
        d = np.array([math.cos(state.heading), math.sin(state.heading), 0.0])
        # directly beneath the relay: push straight ahead
        return params.kappa * abs(l - rest) * d
    return params.kappa * (l - rest) * d / planar - params.damping * state.velocity


def pursuit_vector(state, x_target, field, params: ControlParams):
    """Pursuit law. Far branch moves the field-of-view centroid onto the target, near
    branch (closer than mid-range plus ``near_margin``) attracts the body straight to it.

    Returns (u, branch, captured).
    """
    x_t = np.asarray(x_target, dtype=float)
    rng_ = math.hypot(x_t[0] - state.position[0], x_t[1] - state.position[1])
    captured = rng_ < params.r_capture
    u = np.zeros(3)
    if rng_ < field.mid_range + params.near_margin:
        u[:2] = params.alpha * (x_t[:2] - state.position[:2])
        return u, "near", captured
    c = ground_centroid(state.position, state.heading, field)
    u[0] = params.alpha * (x_t[0] - c[0])
    u[1] = params.alpha * (x_t[1] - c[1])
    return u, "far", captured


def pursuit_control(state, x_target, field, params: ControlParams, v_max, gamma_max):
    u, branch, captured = pursuit_vector(state, x_target, field, params)
    v, g = vector_to_command(u, state.heading, v_max, gamma_max, params.k_v, min_turn_speed=params.min_turn_speed)
    return v, g, branch, captured


def _goal_ok(goal, obstacles, bounds, clearance):
    if bounds is not None:
        (x0, y0), (x1, y1) = bounds
        if not (x0 <= goal[0] <= x1 and y0 <= goal[1] <= y1):
            return False
    if obstacles is not None and obstacles.obstacles:
        if inside_any(goal, obstacles):
            return False
        rho = nearest_obstacle(goal, obstacles)[0]
        if rho < clearance:
            return False
    return True


def sample_search_goal(relay_pos, follower_radius, r_c, r_eps, v_max_relay, params, rng, obstacles=None, bounds=None):
    """Goal inside the guaranteed-search annulus, capped at R_eps - eps.

    Returns None after ``params.goal_tries`` rejected samples.
    """
    try:
        region = safe_goal_region(relay_pos, follower_radius, params.broadcast_period, v_max_relay, r_c)
        outer = min(region.outer, r_eps - region.eps)
        for _ in range(params.goal_tries):
            g = region.sample_annulus(rng, z=0.0, outer=outer)
            if _goal_ok(g, obstacles, bounds, params.goal_clearance):
                return g
    except EmptyRegionError:
        return None
    return None


def follower_control(
    k,
    states,
    topology,
    radii,
    params: ControlParams,
    kin,
    memory: FollowerMemory,
    rng,
    t,
    field,
    relay_broadcast=None,
    obstacles: ObstacleField = None,
    bounds=None,
    sighting=None,
    target_fixed=None,
    arm: ArmModel = None,
    bias=None,
):
    """Mode machine and command for a sensor or manipulator.

    ``sighting`` is the adversary position when a detection fired this step (sensors).
    ``target_fixed`` is the manipulation target position; whether it was detected this
    step is signalled by ``sighting`` for manipulators too.
    Returns (v, gamma_d, memory, events) with events a list of (name, payload).
    """
    st = states[k]
    i = topology.assignment[k]
    relay_now = states[i].position
    relay_pos = relay_now if relay_broadcast is None else relay_broadcast[i]
    own_r = radii.r_m if st.cls == AgentClass.MANIPULATOR else radii.r_s
    vmax = kin.vmax(st.cls)
    events = []
    mem = memory

    # detection-driven modes take priority over the geometric ones
    if st.cls == AgentClass.SENSOR:
        if sighting is not None:
            mem = replace(mem, mode=Mode.PURSUIT, last_seen=t, target=tuple(sighting))
        elif mem.mode == Mode.PURSUIT and t - mem.last_seen > params.t_lost:
            mem = replace(mem, mode=Mode.SEARCH, goal=None, target=None)
            events.append(("target_lost", k))
    elif st.cls == AgentClass.MANIPULATOR and target_fixed is not None:
        if sighting is not None and mem.mode != Mode.MANIPULATE:
            mem = replace(mem, mode=Mode.MANIPULATE, last_seen=t, target=tuple(target_fixed))
        elif mem.mode == Mode.MANIPULATE and not _manip_support(st, target_fixed, field, arm):
            mem = replace(mem, mode=Mode.SEARCH, goal=None, target=None)
            events.append(("target_lost", k))

    extra = np.zeros(3)
    if obstacles is not None:
        extra += obstacle_repulsion(st.position, obstacles)
    if bias is not None:
        extra += bias

    if mem.mode == Mode.PURSUIT:
        u, _, captured = pursuit_vector(st, mem.target, field, params)
        if captured:
            events.append(("adversary_captured", k))
        v, g = vector_to_command(u + extra, st.heading, vmax, kin.gamma_max, params.k_v,
                                 min_turn_speed=params.min_turn_speed)
        return v, g, mem, events

    if mem.mode == Mode.MANIPULATE:
        pose = (st.position[0], st.position[1], st.heading)
        u, _, success = manipulation_control(mem.target, pose, arm, params.alpha, params.r_manip)
        if success:
            events.append(("manipulation_success", k))
            return 0.0, 0.0, mem, events
        v, g = vector_to_command(u, st.heading, vmax, kin.gamma_max, params.k_v, allow_reverse=True,
                                 min_turn_speed=params.min_turn_speed)
        return v, g, mem, events

    dist = float(np.linalg.norm(st.position - relay_now))
    if dist < own_r:
        mem = replace(mem, mode=Mode.TETHER, goal=None)
        u = tether_vector(st, relay_now, own_r, params)
    else:
        if mem.mode != Mode.SEARCH:
            mem = replace(mem, mode=Mode.SEARCH, goal=None)
        goal = mem.goal
        need = (
            goal is None
            or t - mem.goal_time >= params.search_resample
            or math.hypot(goal[0] - st.position[0], goal[1] - st.position[1]) < params.arrive_tol
            or not _in_search_region(goal, relay_pos, own_r, radii, kin, params)
        )
        if need:
            g = sample_search_goal(relay_pos, own_r, radii.r_c, radii.r_eps, kin.vmax(AgentClass.RELAY),
                                   params, rng, obstacles, bounds)
            if g is None:
                mem = replace(mem, mode=Mode.TETHER, goal=None)
                events.append(("retether", k))
                u = tether_vector(st, relay_now, own_r, params)
                v, gd = vector_to_command(u + extra, st.heading, vmax, kin.gamma_max, params.k_v,
                                          min_turn_speed=params.min_turn_speed)
                return v, gd, mem, events
            mem = replace(mem, goal=tuple(g), goal_time=t)
        u = _planar(np.asarray(mem.goal) - st.position)
    v, g = vector_to_command(u + extra, st.heading, vmax, kin.gamma_max, params.k_v,
                             min_turn_speed=params.min_turn_speed)
    return v, g, mem, events


def _in_search_region(goal, relay_pos, own_r, radii, kin, params):
    eps = kin.vmax(AgentClass.RELAY) * params.broadcast_period
    d = float(np.linalg.norm(np.asarray(goal) - np.asarray(relay_pos)))
    return own_r + eps < d <= min(radii.r_c, radii.r_eps) - eps


def _manip_support(state, target, field, arm):
    """Target still inside the sector between the end-effector reach and range_max."""
    dx, dy = target[0] - state.position[0], target[1] - state.position[1]
    r = math.hypot(dx, dy)
    if r > field.range_max:
        return False
    bearing = math.atan2(dy, dx) - state.heading
    bearing = math.atan2(math.sin(bearing), math.cos(bearing))
    return abs(bearing) <= max(field.half_angle, math.pi / 2)


def manipulator_detects(state, target, field):
    return in_ground_sector(target, state.position, state.heading, field)


def adversary_policy(state, center, manipulators, sensors, params: ControlParams, kin):
    """Patrol a circle about the target, chase a manipulator in range, evade sensors.

    ``manipulators`` and ``sensors`` are sequences of positions. Returns
    (v, gamma_d, mode, chased_index).
    """
    vmax = kin.vmax(AgentClass.ADVERSARY)
    x = state.position
    away = np.zeros(3)
    for s in sensors:
        d = x - np.asarray(s)
        d[2] = 0.0
        r = float(np.linalg.norm(d))
        if 0 < r < params.d_evade:
            away += d / (r * r)
    if np.linalg.norm(away) > 0:
        v, g = vector_to_command(away, state.heading, vmax, kin.gamma_max, k_v=1e6, allow_reverse=True,
                                 min_turn_speed=params.min_turn_speed)
        return v, g, Mode.EVADE, None

    best, best_d = None, math.inf
    for idx, m in enumerate(manipulators):
        r = math.hypot(m[0] - x[0], m[1] - x[1])
        if r <= params.adversary_range and r < best_d:
            best, best_d = idx, r
    if best is not None:
        u = _planar(np.asarray(manipulators[best]) - x)
        v, g = vector_to_command(u, state.heading, vmax, kin.gamma_max, k_v=1e6,
                                 min_turn_speed=params.min_turn_speed)
        return v, g, Mode.CHASE, best

    return (*patrol_command(state, center, params.r_patrol, vmax, kin), Mode.PATROL, None)


def patrol_command(state, center, radius, v, kin, k_radial=1.0, k_heading=1.5):
    """Counter-clockwise circle of ``radius`` about ``center``: feedforward steer plus correction."""
    dx, dy = state.position[0] - center[0], state.position[1] - center[1]
    r = math.hypot(dx, dy)
    if r < 1e-9:
        dx, dy, r = 1.0, 0.0, 1.0
    phi = math.atan2(dy, dx)
    tx, ty = -math.sin(phi), math.cos(phi)
    corr = k_radial * (radius - r) / radius
    desired = math.atan2(ty + corr * math.sin(phi), tx + corr * math.cos(phi))
    err = desired - state.heading
    err = math.atan2(math.sin(err), math.cos(err))
    ff = math.atan(kin.wheelbase / radius)
    g = max(-kin.gamma_max, min(kin.gamma_max, ff + k_heading * err))
    speed = v * max(math.cos(err), 0.3)
    return speed, g
