"""Agent state and the two motion models (bicycle and double integrator).

Ground agents follow the kinematic bicycle with a first-order steering
servo; relays are planar double integrators held at a fixed altitude.
Both integrators are semi-implicit Euler: the rate states (steering,
heading, velocity) are updated first and the position uses the new rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import NonFiniteError, SteeringSingularityError


class AgentClass(str, Enum):
    RELAY = "relay"
    SENSOR = "sensor"
    MANIPULATOR = "manipulator"
    ADVERSARY = "adversary"
    FORAGER = "forager"
    DRONE = "drone"
    BASE = "base"


NONHOLONOMIC = frozenset(
    {AgentClass.SENSOR, AgentClass.MANIPULATOR, AgentClass.ADVERSARY, AgentClass.FORAGER}
)
HOLONOMIC = frozenset({AgentClass.RELAY, AgentClass.DRONE})


class Mode(str, Enum):
    SPRING_MASS = "spring_mass"
    FOLLOWER = "follower"
    TETHER = "tether"
    SEARCH = "search"
    PURSUIT = "pursuit"
    MANIPULATE = "manipulate"
    PATROL = "patrol"
    CHASE = "chase"
    EVADE = "evade"
    CAPTURED = "captured"
    IDLE = "idle"


def _default_vmax():
    return {
        AgentClass.RELAY: 1.0,
        AgentClass.SENSOR: 0.6,
        AgentClass.MANIPULATOR: 0.3,
        AgentClass.ADVERSARY: 0.45,
        AgentClass.FORAGER: 0.3,
        AgentClass.DRONE: 0.5,
        AgentClass.BASE: 0.0,
    }


@dataclass(frozen=True)
class KinematicParams:
    wheelbase: float = 0.3
    servo_gain: float = 4.0
    v_max: dict = field(default_factory=_default_vmax)
    gamma_max: float = 0.6
    dt: float = 0.02

    def __post_init__(self):
        if not (self.wheelbase > 0 and self.servo_gain > 0 and self.dt > 0):
            raise ValueError("wheelbase, servo_gain and dt must be positive")
        if not 0 < self.gamma_max < math.pi / 2:
            raise ValueError("gamma_max must lie in (0, pi/2)")
        vm = {AgentClass(k): float(v) for k, v in self.v_max.items()}
        for cls, v in _default_vmax().items():
            vm.setdefault(cls, v)
        object.__setattr__(self, "v_max", vm)
        vm[AgentClass.BASE] = 0.0
        relay, sensor, manip = vm[AgentClass.RELAY], vm[AgentClass.SENSOR], vm[AgentClass.MANIPULATOR]
        if not relay > sensor >= manip > 0:
            raise ValueError(
                "speed ordering requires V_max(relay) > V_max(sensor) >= V_max(manipulator) > 0"
            )

    def vmax(self, cls: AgentClass) -> float:
        return self.v_max[cls]


@dataclass(frozen=True)
class AgentState:
    position: np.ndarray
    velocity: np.ndarray
    cls: AgentClass
    heading: float = 0.0
    steering: float = 0.0
    speed: float = 0.0
    mode: Mode = Mode.IDLE

    @classmethod
    def make(cls, position, agent_class, heading=0.0, mode=Mode.IDLE, altitude=None):
        p = np.zeros(3)
        p[: len(position)] = position
        if altitude is not None:
            p[2] = altitude
        return cls(p, np.zeros(3), AgentClass(agent_class), float(heading), 0.0, 0.0, mode)

    @property
    def xy(self):
        return self.position[:2]


def _check_finite(*values):
    for v in values:
        ok = math.isfinite(v) if isinstance(v, float) else bool(np.all(np.isfinite(v)))
        if not ok:
            raise NonFiniteError(f"non-finite input: {v!r}")


def step_bicycle(state: AgentState, v: float, gamma_d: float, params: KinematicParams) -> AgentState:
    """Advance a nonholonomic agent by one ``params.dt``.

    The steering servo ``dgamma/dt = servo_gain * (gamma_d - gamma)`` is linear with a
    held input, so it is stepped with its exact exponential solution. Heading and
    position then use the updated steering and heading.
    """
    if state.cls not in NONHOLONOMIC:
        raise ValueError(f"step_bicycle needs a nonholonomic agent, got {state.cls.value}")
    _check_finite(float(v), float(gamma_d), state.position, float(state.heading), float(state.steering))
    if abs(gamma_d) > params.gamma_max + 1e-12:
        raise ValueError(f"|gamma_d|={abs(gamma_d):.4f} exceeds gamma_max={params.gamma_max}")
    dt = params.dt
    vmax = params.vmax(state.cls)
    v = min(max(v, -vmax), vmax)

    decay = math.exp(-params.servo_gain * dt)
    gamma = gamma_d + (state.steering - gamma_d) * decay
    if abs(gamma) >= math.pi / 2:
        raise SteeringSingularityError(f"steering {gamma} at tan() singularity")
    theta = state.heading + v / params.wheelbase * math.tan(gamma) * dt
    theta = math.atan2(math.sin(theta), math.cos(theta))
    c, s = math.cos(theta), math.sin(theta)
    pos = state.position.copy()
    pos[0] += v * c * dt
    pos[1] += v * s * dt
    vel = np.array([v * c, v * s, 0.0])
    return replace(state, position=pos, velocity=vel, heading=theta, steering=gamma, speed=v)


def step_double_integrator(state: AgentState, u, params: KinematicParams) -> AgentState:
    """Advance a holonomic agent: velocity += u*dt (speed-clamped), position += velocity*dt.

    Altitude is frozen, so the vertical input component is discarded.
    """
    if state.cls not in HOLONOMIC:
        raise ValueError(f"step_double_integrator needs a holonomic agent, got {state.cls.value}")
    u = np.asarray(u, dtype=float)
    _check_finite(u, state.position, state.velocity)
    dt = params.dt
    vel = state.velocity + u * dt
    vel[2] = 0.0
    speed = math.hypot(vel[0], vel[1])
    vmax = params.vmax(state.cls)
    if speed > vmax:
        vel *= vmax / speed
        speed = vmax
    pos = state.position + vel * dt
    heading = math.atan2(vel[1], vel[0]) if speed > 0 else state.heading
    return replace(state, position=pos, velocity=vel, speed=speed, heading=heading)


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.atan2(math.sin(a), math.cos(a))
    return math.pi if w == -math.pi else w
