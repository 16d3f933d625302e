"""Scenario files: JSON parsing, validation, defaults, and initial placement.

A scenario is a JSON object with a ``kind`` of ``exploration-pursuit`` or
``foraging``. Every parameter block is optional and falls back to the
documented defaults; ``ScenarioConfig.to_dict`` echoes the filled-in file.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np

from .behaviors import ControlParams
from .channel import ChannelModel
from .errors import ConfigError, InitialConnectivityError, OrphanFollowerError
from .foraging import LAYOUTS, ForagerParams, ForagingSettings
from .kinematics import AgentClass, KinematicParams
from .manipulation import ArmModel
from .sensing import ObstacleField, VisionField, inside_any, nearest_obstacle
from .streams import Streams
from .topology import Radii, build_topology, disconnected_agents

SCHEMA_VERSION = 1
KINDS = ("exploration-pursuit", "foraging")


@dataclass(frozen=True)
class Counts:
    relays: int = 5
    sensors: int = 4
    manipulators: int = 2
    adversary: int = 1

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"{f.name} must be a nonnegative integer, got {v!r}")
        if self.adversary > 1:
            raise ValueError("at most one adversary is supported")


@dataclass(frozen=True)
class Workspace:
    bounds: tuple = ((0.0, 0.0), (20.0, 20.0))
    obstacles: tuple = ()

    def __post_init__(self):
        (x0, y0), (x1, y1) = self.bounds
        if not (x1 > x0 and y1 > y0):
            raise ValueError("bounds must be [[xmin, ymin], [xmax, ymax]] with positive extent")
        object.__setattr__(self, "bounds", ((float(x0), float(y0)), (float(x1), float(y1))))
        object.__setattr__(self, "obstacles", tuple(tuple(tuple(map(float, v)) for v in o) for o in self.obstacles))

    def contains(self, p, margin=0.0):
        (x0, y0), (x1, y1) = self.bounds
        return x0 + margin <= p[0] <= x1 - margin and y0 + margin <= p[1] <= y1 - margin


@dataclass(frozen=True)
class Placement:
    """``random``: chain relays out from the base, drop followers next to relays.
    ``explicit``: take ``agents`` as given, a list of {"class", "position"[, "heading"]}."""

    mode: str = "random"
    relay_step: float = 0.6
    follower_spread: float = 1.2
    max_tries: int = 500
    agents: tuple = ()

    def __post_init__(self):
        if self.mode not in ("random", "explicit"):
            raise ValueError("placement mode must be 'random' or 'explicit'")
        if not 0 < self.relay_step <= 1:
            raise ValueError("relay_step is a fraction of R_c in (0, 1]")


@dataclass(frozen=True)
class CoverageSpec:
    resolution: float = 0.25

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("coverage resolution must be positive")


@dataclass(frozen=True)
class HomogeneousSpec:
    """Radii of the all-ground baseline: communication range equal to the followers' R_s."""

    r_c: float = 1.5
    r_eps: float = 0.9
    r_s: float = 0.5
    vision: VisionField = None


@dataclass
class ScenarioConfig:
    kind: str = "exploration-pursuit"
    name: str = "scenario"
    seed: int = 0
    duration: float = 40.0
    dt: float = 0.05
    log_every: int = 1
    stop_on_terminal: bool = True
    # exploration
    homogeneous: bool = False
    power_control: bool = True
    consensus: bool = True
    relay_altitude: float = 1.0
    base: tuple = (2.0, 2.0)
    target: tuple = (16.0, 16.0)
    counts: Counts = field(default_factory=Counts)
    workspace: Workspace = field(default_factory=Workspace)
    placement: Placement = field(default_factory=Placement)
    radii: Radii = field(default_factory=Radii)
    homogeneous_radii: HomogeneousSpec = field(default_factory=HomogeneousSpec)
    kinematics: KinematicParams = field(default_factory=KinematicParams)
    control: ControlParams = field(default_factory=ControlParams)
    channel: ChannelModel = field(default_factory=ChannelModel)
    relay_vision: VisionField = field(default_factory=lambda: VisionField(phi=1.0, range_max=2.5))
    ground_vision: VisionField = field(
        default_factory=lambda: VisionField(phi=0.2, range_max=1.5, range_min=0.0, half_angle=0.6)
    )
    obstacle_field: dict = field(default_factory=lambda: {"eta": 0.05, "outer": 1.0, "inner": 0.05})
    arm: ArmModel = field(default_factory=ArmModel)
    coverage: CoverageSpec = field(default_factory=CoverageSpec)
    # foraging
    clusters: str = "1x32"
    drone: bool = False
    foragers: int = 2
    forager_params: ForagerParams = field(default_factory=ForagerParams)
    foraging: ForagingSettings = field(default_factory=ForagingSettings)
    genome_file: str = None

    def obstacles(self) -> ObstacleField:
        return ObstacleField(self.workspace.obstacles, **self.obstacle_field)

    def with_seed(self, seed):
        out = copy.copy(self)
        out.seed = int(seed)
        return out

    def to_dict(self):
        return _plain(self)


def _plain(obj):
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, dict):
        return {(k.value if hasattr(k, "value") else str(k)): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "value"):
        return obj.value
    return obj


NESTED = {
    "counts": Counts,
    "workspace": Workspace,
    "placement": Placement,
    "radii": Radii,
    "homogeneous_radii": HomogeneousSpec,
    "kinematics": KinematicParams,
    "control": ControlParams,
    "channel": ChannelModel,
    "relay_vision": VisionField,
    "ground_vision": VisionField,
    "arm": ArmModel,
    "coverage": CoverageSpec,
    "forager_params": ForagerParams,
    "foraging": ForagingSettings,
}


def _build(cls, name, data):
    if not isinstance(data, dict):
        raise ConfigError(f"field '{name}': expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    extra = sorted(set(data) - known)
    if extra:
        raise ConfigError(f"field '{name}': unknown key(s) {extra}")
    data = dict(data)
    if cls is HomogeneousSpec and isinstance(data.get("vision"), dict):
        data["vision"] = _build(VisionField, f"{name}.vision", data["vision"])
    if cls is Placement and "agents" in data:
        data["agents"] = tuple(data["agents"])
    if cls is Workspace and "obstacles" in data:
        data["obstacles"] = tuple(data["obstacles"])
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field '{name}': {exc}") from exc


def scenario_from_dict(data: dict, check_initial=True) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a JSON object")
    data = dict(data)
    version = data.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"field 'schema_version': unsupported version {version!r}")
    known = {f.name for f in fields(ScenarioConfig)}
    extra = sorted(set(data) - known)
    if extra:
        raise ConfigError(f"unknown top-level key(s) {extra}")
    kw = {}
    for k, v in data.items():
        if k in NESTED:
            kw[k] = _build(NESTED[k], k, v)
        elif k == "obstacle_field":
            if not isinstance(v, dict) or set(v) - {"eta", "outer", "inner", "rho0"}:
                raise ConfigError("field 'obstacle_field': expected keys among eta, outer, inner, rho0")
            kw[k] = dict(v)
        else:
            kw[k] = v
    if "base" in kw:
        kw["base"] = tuple(float(c) for c in kw["base"])
    if "target" in kw:
        kw["target"] = tuple(float(c) for c in kw["target"])
    if "dt" in kw and "kinematics" not in data:
        try:
            kw["kinematics"] = KinematicParams(dt=float(kw["dt"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"field 'dt': must be a positive number ({exc})") from exc
    cfg = ScenarioConfig(**kw)
    validate(cfg)
    if cfg.kind == "foraging" and cfg.genome_file:
        cfg.forager_params = load_genome(cfg.genome_file)
    if check_initial and cfg.kind == "exploration-pursuit":
        initial_placement(cfg)
    return cfg


def validate(cfg: ScenarioConfig):
    if cfg.kind not in KINDS:
        raise ConfigError(f"field 'kind': must be one of {list(KINDS)}, got {cfg.kind!r}")
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool):
        raise ConfigError("field 'seed': must be an integer")
    if not (isinstance(cfg.duration, (int, float)) and cfg.duration >= 0 and math.isfinite(cfg.duration)):
        raise ConfigError("field 'duration': must be a finite number >= 0")
    if not (isinstance(cfg.dt, (int, float)) and cfg.dt > 0):
        raise ConfigError("field 'dt': must be positive")
    if not isinstance(cfg.log_every, int) or cfg.log_every < 1:
        raise ConfigError("field 'log_every': must be an integer >= 1")
    if not math.isclose(cfg.kinematics.dt, cfg.dt):
        cfg.kinematics = _rebuild(cfg.kinematics, dt=float(cfg.dt))
    try:
        cfg.obstacles()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field 'obstacle_field': {exc}") from exc
    if cfg.kind == "foraging":
        if cfg.clusters not in LAYOUTS:
            raise ConfigError(f"field 'clusters': must be one of {sorted(LAYOUTS)}")
        if not isinstance(cfg.foragers, int) or cfg.foragers < 0:
            raise ConfigError("field 'foragers': must be a nonnegative integer")
    else:
        if len(cfg.base) != 2 or len(cfg.target) != 2:
            raise ConfigError("fields 'base' and 'target' are planar [x, y] points")
        if not cfg.workspace.contains(cfg.base) or not cfg.workspace.contains(cfg.target):
            raise ConfigError("fields 'base'/'target' must lie inside workspace bounds")
        obst = cfg.obstacles()
        for name in ("base", "target"):
            if inside_any(getattr(cfg, name), obst):
                raise ConfigError(f"field '{name}': lies inside an obstacle")
        if cfg.relay_altitude < 0:
            raise ConfigError("field 'relay_altitude': must be >= 0")
        hr = cfg.homogeneous_radii
        if not 0 < hr.r_s < hr.r_eps < hr.r_c:
            raise ConfigError("field 'homogeneous_radii': radii must satisfy 0 < r_s < r_eps < r_c")


def _rebuild(obj, **changes):
    d = {f.name: getattr(obj, f.name) for f in fields(obj)}
    d.update(changes)
    return type(obj)(**d)


def load_scenario(path) -> ScenarioConfig:
    """Parse and validate a scenario file; parse errors carry line and column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: JSON parse error: {exc.msg}") from exc
    if isinstance(data, dict) and data.get("genome_file"):
        gf = Path(data["genome_file"])
        if not gf.is_absolute():
            data["genome_file"] = str((path.parent / gf).resolve())
    return scenario_from_dict(data)


def load_genome(path) -> ForagerParams:
    """Accepts either a bare genome object or an ``evolve`` result with ``best_genome``."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"field 'genome_file': cannot load {path}: {exc}") from exc
    if "best_genome" in data:
        data = data["best_genome"]
    return _build(ForagerParams, "genome_file", data)


# ---------------------------------------------------------------------------
# initial placement


@dataclass
class Layout:
    """Resolved initial state: node 0 is the base, then relays, sensors, manipulators, adversary."""

    positions: np.ndarray
    classes: list
    headings: list
    base_id: int
    relay_ids: list
    sensor_ids: list
    manip_ids: list
    adversary_id: int = None

    @property
    def follower_ids(self):
        return self.sensor_ids + self.manip_ids


def _ids(counts: Counts):
    n = 1
    relays = list(range(n, n + counts.relays)); n += counts.relays
    sensors = list(range(n, n + counts.sensors)); n += counts.sensors
    manips = list(range(n, n + counts.manipulators)); n += counts.manipulators
    adv = n if counts.adversary else None
    return relays, sensors, manips, adv


def _free(p, cfg, obst, margin=0.3):
    if not cfg.workspace.contains(p, margin):
        return False
    if obst.obstacles:
        if inside_any(p, obst):
            return False
        if nearest_obstacle(p, obst)[0] < max(margin, obst.inner * 2):
            return False
    return True


def _adversary_start(cfg, rng):
    ang = rng.uniform(-math.pi, math.pi)
    r = cfg.control.r_patrol
    p = (cfg.target[0] + r * math.cos(ang), cfg.target[1] + r * math.sin(ang))
    return p, ang + math.pi / 2


def initial_placement(cfg: ScenarioConfig, rng=None) -> Layout:
    """Build the t=0 layout and check that every agent reaches the base.

    Raises InitialConnectivityError listing the unreachable agents.
    """
    rng = rng if rng is not None else Streams(cfg.seed).get("placement")
    if cfg.homogeneous:
        return _homogeneous_placement(cfg, rng)
    relays, sensors, manips, adv = _ids(cfg.counts)
    n = 1 + len(relays) + len(sensors) + len(manips) + (adv is not None)
    obst = cfg.obstacles()
    h = cfg.relay_altitude
    if cfg.placement.mode == "explicit":
        return _explicit_layout(cfg, relays, sensors, manips, adv, n)

    r_c = cfg.radii.r_c
    for _ in range(cfg.placement.max_tries):
        pos = np.zeros((n, 3))
        pos[0, :2] = cfg.base
        heads = [0.0] * n
        ok = True
        for i in relays:
            placed = False
            for _ in range(50):
                anchor = pos[rng.integers(0, i)][:2]
                ang = rng.uniform(-math.pi, math.pi)
                rad = cfg.placement.relay_step * r_c * math.sqrt(rng.uniform(0.1, 1.0))
                p = anchor + rad * np.array([math.cos(ang), math.sin(ang)])
                if _free(p, cfg, obst) and np.min(np.linalg.norm(pos[:i, :2] - p, axis=1)) > 0.5:
                    pos[i, :2] = p
                    pos[i, 2] = h
                    placed = True
                    break
            ok &= placed
        for k in sensors + manips:
            placed = False
            for _ in range(50):
                i = relays[rng.integers(0, len(relays))] if relays else 0
                ang = rng.uniform(-math.pi, math.pi)
                rad = cfg.placement.follower_spread * math.sqrt(rng.uniform(0.05, 1.0))
                p = pos[i, :2] + rad * np.array([math.cos(ang), math.sin(ang)])
                if _free(p, cfg, obst) and np.min(np.linalg.norm(pos[:k, :2] - p, axis=1)) > 0.3:
                    pos[k, :2] = p
                    heads[k] = float(rng.uniform(-math.pi, math.pi))
                    placed = True
                    break
            ok &= placed
        if adv is not None:
            p, hd = _adversary_start(cfg, rng)
            pos[adv, :2] = p
            heads[adv] = hd
        if not ok:
            continue
        layout = _layout(pos, heads, relays, sensors, manips, adv)
        if _connected(cfg, layout) and _sinr_ok(cfg, layout):
            return layout
    raise ConfigError(f"field 'placement': no connected placement found in {cfg.placement.max_tries} tries")


def _layout(pos, heads, relays, sensors, manips, adv):
    classes = [AgentClass.BASE] + [AgentClass.RELAY] * len(relays) + [AgentClass.SENSOR] * len(sensors)
    classes += [AgentClass.MANIPULATOR] * len(manips) + ([AgentClass.ADVERSARY] if adv is not None else [])
    return Layout(pos, classes, heads, 0, relays, sensors, manips, adv)


def _connected(cfg, layout):
    try:
        topo = build_topology(layout.positions, 0, layout.relay_ids, layout.follower_ids, cfg.radii)
    except OrphanFollowerError:
        return False
    return not disconnected_agents(topo, layout.positions)


def _sinr_ok(cfg, layout):
    from .channel import sinr_matrix

    if not layout.follower_ids or not layout.relay_ids:
        return True
    topo = build_topology(layout.positions, 0, layout.relay_ids, layout.follower_ids, cfg.radii)
    powers = np.full(len(layout.positions), cfg.channel.p_init)
    serving = [topo.assignment[k] for k in layout.follower_ids]
    s = sinr_matrix(layout.positions, layout.relay_ids, layout.follower_ids, serving, powers, cfg.channel,
                    cfg.radii.r_s)
    return bool(np.all(s >= cfg.channel.threshold))


def _explicit_layout(cfg, relays, sensors, manips, adv, n):
    agents = list(cfg.placement.agents)
    by_cls = {c: [] for c in ("relay", "sensor", "manipulator", "adversary")}
    for idx, a in enumerate(agents):
        if not isinstance(a, dict) or "class" not in a or "position" not in a:
            raise ConfigError(f"field 'placement.agents[{idx}]': needs 'class' and 'position'")
        if a["class"] not in by_cls:
            raise ConfigError(f"field 'placement.agents[{idx}].class': unknown class {a['class']!r}")
        by_cls[a["class"]].append(a)
    want = {"relay": relays, "sensor": sensors, "manipulator": manips, "adversary": [adv] if adv else []}
    pos = np.zeros((n, 3))
    pos[0, :2] = cfg.base
    heads = [0.0] * n
    for c, ids in want.items():
        if len(by_cls[c]) != len(ids):
            raise ConfigError(f"field 'placement.agents': {len(by_cls[c])} {c} entries but counts say {len(ids)}")
        for nid, a in zip(ids, by_cls[c]):
            pos[nid, :2] = a["position"][:2]
            if c == "relay":
                pos[nid, 2] = cfg.relay_altitude
            heads[nid] = float(a.get("heading", 0.0))
    layout = _layout(pos, heads, relays, sensors, manips, adv)
    obst = cfg.obstacles()
    for nid in range(1, n):
        if inside_any(pos[nid], obst) or not cfg.workspace.contains(pos[nid]):
            raise ConfigError(f"field 'placement.agents': agent {nid} starts outside free space")
    topo = build_topology(pos, 0, relays, [], cfg.radii)
    from .topology import assign_followers

    missing = []
    assignment = {}
    for k in layout.follower_ids:
        try:
            assignment.update(assign_followers(pos, relays, [k], cfg.radii.r_c))
        except OrphanFollowerError:
            missing.append(k)
    topo.assignment = assignment
    missing += [a for a in disconnected_agents(topo, pos, relays + list(assignment))]
    if missing:
        raise InitialConnectivityError(sorted(set(missing)))
    return layout


def _homogeneous_placement(cfg, rng):
    """All team agents are ground nodes chained out from the base at the short range."""
    relays, sensors, manips, adv = _ids(cfg.counts)
    team = relays + sensors + manips
    n = 1 + len(team) + (adv is not None)
    hr = cfg.homogeneous_radii
    obst = cfg.obstacles()
    for _ in range(cfg.placement.max_tries):
        pos = np.zeros((n, 3))
        pos[0, :2] = cfg.base
        heads = [0.0] * n
        ok = True
        for i in team:
            placed = False
            for _ in range(50):
                anchor = pos[rng.integers(0, i)][:2]
                ang = rng.uniform(-math.pi, math.pi)
                rad = cfg.placement.relay_step * hr.r_c * math.sqrt(rng.uniform(0.2, 1.0))
                p = anchor + rad * np.array([math.cos(ang), math.sin(ang)])
                if _free(p, cfg, obst) and np.min(np.linalg.norm(pos[:i, :2] - p, axis=1)) > 0.3:
                    pos[i, :2] = p
                    heads[i] = float(rng.uniform(-math.pi, math.pi))
                    placed = True
                    break
            ok &= placed
        if adv is not None:
            p, hd = _adversary_start(cfg, rng)
            pos[adv, :2] = p
            heads[adv] = hd
        if ok:
            classes = [AgentClass.BASE] + [AgentClass.SENSOR] * len(team)
            if adv is not None:
                classes.append(AgentClass.ADVERSARY)
            layout = Layout(pos, classes, heads, 0, team, [], [], adv)
            radii = Radii(r_c=hr.r_c, r_s=hr.r_s, r_m=hr.r_s, r_eps=hr.r_eps)
            topo = build_topology(pos, 0, team, [], radii)
            if not disconnected_agents(topo, pos):
                return layout
    raise ConfigError(f"field 'placement': no connected homogeneous placement in {cfg.placement.max_tries} tries")


def dump_config(cfg: ScenarioConfig):
    d = cfg.to_dict()
    d["schema_version"] = SCHEMA_VERSION
    return json.dumps(d, indent=2, sort_keys=True)


def params_as_dict(obj):
    return asdict(obj) if is_dataclass(obj) else dict(obj)
