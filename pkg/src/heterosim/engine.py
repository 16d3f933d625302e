"""Synchronous simulation loop for the exploration/pursuit and foraging scenarios.

One step: sense -> mode guards -> controls (with power-control bias) ->
integrate through the safety filter -> topology/consensus update -> metrics.
All controls read the same start-of-step snapshot; moves are then committed in
ascending agent id, each checked against the configuration left by the moves
already committed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import replace

import numpy as np

from .behaviors import (
    FollowerMemory,
    adversary_policy,
    follow_control,
    follower_control,
    relay_control,
    relay_mode_guard,
    vector_to_command,
)
from .channel import power_control_targets, sinr_matrix, to_db
from .config import ScenarioConfig, initial_placement
from .errors import NonFiniteError
from .foraging import run_episode
from .kinematics import AgentClass, AgentState, Mode, step_bicycle, step_double_integrator
from .metrics import EXPLORATION_COLUMNS, FORAGING_COLUMNS, SUMMARY_SCHEMA, CoverageGrid, MetricsLog
from .sensing import detect_prob_ground, in_ground_sector, nearest_obstacle, sample_detection
from .streams import Streams
from .topology import Radii, build_topology, check_connected, consensus_step, refresh_edges

log = logging.getLogger(__name__)

TERMINAL = ("manipulator_captured", "manipulation_success", "all_tags_collected")


class ExplorationSim:
    """Owns all mutable state of one exploration/pursuit replica."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.streams = Streams(cfg.seed)
        lay = initial_placement(cfg, self.streams.get("placement"))
        self.hom = cfg.homogeneous
        if self.hom:
            hr = cfg.homogeneous_radii
            self.radii = Radii(r_c=hr.r_c, r_s=hr.r_s, r_m=hr.r_s, r_eps=hr.r_eps)
            self.team_vision = hr.vision or cfg.ground_vision
        else:
            self.radii = cfg.radii
            self.team_vision = cfg.ground_vision
        self.kin = cfg.kinematics
        self.ctrl = replace(cfg.control, attract_center=(cfg.target[0], cfg.target[1], 0.0))
        self.chan = cfg.channel
        self.obst = cfg.obstacles()
        self.bounds = cfg.workspace.bounds
        self.target = np.array([cfg.target[0], cfg.target[1], 0.0])

        self.pos = lay.positions.copy()
        n = len(self.pos)
        self.vel = np.zeros((n, 3))
        self.heading = np.array(lay.headings, dtype=float)
        self.steering = np.zeros(n)
        self.speed = np.zeros(n)
        self.cls = list(lay.classes)
        self.relays = list(lay.relay_ids)
        self.sensors = list(lay.sensor_ids)
        self.manips = list(lay.manip_ids)
        self.followers = self.sensors + self.manips
        self.adv = lay.adversary_id
        self.adv_alive = self.adv is not None
        self.modes = [Mode.IDLE] * n
        self.modes[0] = Mode.IDLE
        for i in self.relays:
            self.modes[i] = Mode.SPRING_MASS
        for k in self.followers:
            self.modes[k] = Mode.TETHER
        if self.adv is not None:
            self.modes[self.adv] = Mode.PATROL
        self.memory = {k: FollowerMemory() for k in self.followers}
        self.powers = np.full(n, self.chan.p_init, dtype=float)
        self.pc_on = bool(cfg.power_control) and not self.hom and bool(self.followers)

        self.topo = build_topology(self.pos, 0, self.relays, self.followers, self.radii)
        self.bc_steps = max(1, int(round(self.ctrl.broadcast_period / cfg.dt)))
        self._snapshot()
        self._init_sinr_cache()
        self.grid = CoverageGrid(self.bounds, cfg.coverage.resolution, self.obst.obstacles)
        self.sense_rng = self.streams.get("sensing")
        self.search_rng = self.streams.get("search")
        self.t = 0.0
        self.step_index = 0
        self.terminal = None
        self.event_times = {}

    # -- bookkeeping ---------------------------------------------------------

    def _snapshot(self):
        """Broadcast positions and freeze the link set the safety filter preserves."""
        self.broadcast = self.pos.copy()
        links = {}
        r_c = self.radii.r_c
        pairs = list(self.topo.edges) + [(i, k) for k, i in self.topo.assignment.items()]
        for a, b in pairs:
            if np.linalg.norm(self.pos[a] - self.pos[b]) <= r_c:
                links.setdefault(a, []).append(b)
                links.setdefault(b, []).append(a)
        self.links = links

    # SINR is evaluated from a cached relay x follower distance matrix; a move only
    # touches one row (relay) or one column (follower).
    def _init_sinr_cache(self):
        self.ridx = {i: r for r, i in enumerate(self.relays)}
        self.fidx = {k: c for c, k in enumerate(self.followers)}
        R = self.pos[self.relays]
        F = self.pos[self.followers]
        self.dRF = np.sqrt(((R[:, None, :] - F[None, :, :]) ** 2).sum(axis=2)) if len(F) and len(R) else None
        self.gRF = None if self.dRF is None else self._gain(self.dRF)
        self._serving_mask()

    def _serving_mask(self):
        if not self.followers or not self.relays:
            self.serv = None
            return
        serv = np.zeros((len(self.relays), len(self.followers)), dtype=bool)
        for k, c in self.fidx.items():
            serv[self.ridx[self.topo.assignment[k]], c] = True
        self.serv = serv

    def _gain(self, d):
        ch = self.chan
        return ch.K * (ch.l0 / np.maximum(d, 1e-12)) ** ch.beta

    def _moved(self, a, new_pos):
        """Distance and gain matrices with agent ``a`` moved to ``new_pos``."""
        d, g = self.dRF.copy(), self.gRF.copy()
        if a in self.ridx:
            r = self.ridx[a]
            d[r] = np.sqrt(((self.pos[self.followers] - new_pos) ** 2).sum(axis=1))
            g[r] = self._gain(d[r])
        elif a in self.fidx:
            c = self.fidx[a]
            d[:, c] = np.sqrt(((self.pos[self.relays] - new_pos) ** 2).sum(axis=1))
            g[:, c] = self._gain(d[:, c])
        return d, g

    def _sinr(self, moved=None, powers=None):
        if self.serv is None:
            return np.zeros(0)
        d, g = (self.dRF, self.gRF) if moved is None else moved
        p = (self.powers if powers is None else powers)[self.relays]
        rx = p[:, None] * g
        signal = (rx * self.serv).sum(axis=0)
        interf = (rx * (~self.serv & (d <= self.radii.r_s))).sum(axis=0) + self.chan.noise
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(interf > 0, signal / np.where(interf > 0, interf, 1.0), np.inf)

    def _handover_ok(self, k, j):
        """Power control on: a reassignment must not push follower k under T (or lower)."""
        c = self.fidx[k]
        ch = self.chan
        p = self.powers[self.relays]
        d = self.dRF[:, c]
        rx = p * self.gRF[:, c]
        near = d <= self.radii.r_s

        def sinr(serving):
            r = self.ridx[serving]
            interf = float(np.sum(np.where(near, rx, 0.0))) - (rx[r] if near[r] else 0.0) + ch.noise
            return math.inf if interf <= 0 else float(rx[r]) / interf

        new = sinr(j)
        return new >= ch.threshold or new >= sinr(self.topo.assignment[k])

    def _state(self, i):
        return AgentState(self.pos[i], self.vel[i], self.cls[i], float(self.heading[i]), float(self.steering[i]),
                          float(self.speed[i]), self.modes[i])

    def _aerial(self, i):
        return self.cls[i] == AgentClass.RELAY

    def _mark_coverage(self):
        for i in self.relays + self.followers:
            if self._aerial(i):
                self.grid.mark_disc(self.pos[i], self.cfg.relay_vision.range_max)
            else:
                self.grid.mark_sector(self.pos[i], self.heading[i], self.team_vision)

    # -- safety filter -------------------------------------------------------

    def _admissible(self, a, new_pos, sinr_now):
        """Bounds, obstacle band, preserved links and (with PC) the SINR constraint.

        A constraint that already fails only needs to not get worse.
        Returns (ok, sinr_after).
        """
        (x0, y0), (x1, y1) = self.bounds
        if not (x0 <= new_pos[0] <= x1 and y0 <= new_pos[1] <= y1):
            return False, sinr_now
        if self.obst.obstacles:
            rho, _, inside = nearest_obstacle(new_pos, self.obst)
            if inside or rho < self.obst.inner:
                return False, sinr_now
        r_c = self.radii.r_c
        here = self.pos[a].tolist()
        there = new_pos.tolist()
        for b in self.links.get(a, ()):
            pb = self.pos[b].tolist()
            d_new = math.dist(there, pb)
            if d_new > r_c and d_new > math.dist(here, pb) + 1e-12:
                return False, sinr_now
        if self.pc_on and (a in self.fidx or a in self.ridx):
            s_new = self._sinr(self._moved(a, new_pos))
            T = self.chan.threshold
            if np.any((s_new < T) & (s_new < sinr_now - 1e-12)):
                return False, sinr_now
            return True, s_new
        return True, sinr_now

    def _commit(self, a, st):
        if self.dRF is not None and (a in self.ridx or a in self.fidx) and not np.array_equal(st.position, self.pos[a]):
            self.dRF, self.gRF = self._moved(a, st.position)
        self.pos[a] = st.position
        self.vel[a] = st.velocity
        self.heading[a] = st.heading
        self.steering[a] = st.steering
        self.speed[a] = st.speed

    def _move_holonomic(self, a, u, sinr_now):
        st = self._state(a)
        prop = step_double_integrator(st, u, self.kin)
        ok, s = self._admissible(a, prop.position, sinr_now)
        if ok:
            self._commit(a, prop)
            return s, False
        self._commit(a, replace(st, velocity=np.zeros(3), speed=0.0))
        return sinr_now, True

    def _move_ground(self, a, v, g, sinr_now):
        st = self._state(a)
        vmax = self.kin.vmax(self.cls[a])
        cands = [(v, g), (-0.5 * vmax if v >= 0 else 0.5 * vmax, -g)]
        for cv, cg in cands:
            prop = step_bicycle(st, cv, cg, self.kin)
            ok, s = self._admissible(a, prop.position, sinr_now)
            if ok:
                self._commit(a, prop)
                return s, cv != v
        self._commit(a, step_bicycle(st, 0.0, g, self.kin))
        return sinr_now, True

    # -- one step ------------------------------------------------------------

    def _sense(self):
        sight = {}
        gv = self.cfg.ground_vision
        if self.adv_alive:
            xa = self.pos[self.adv]
            for k in self.sensors:
                p = detect_prob_ground(xa, self.pos[k], self.heading[k], gv)
                if p > 0 and sample_detection(self.sense_rng, p):
                    sight[k] = (float(xa[0]), float(xa[1]), 0.0)
        for q in self.manips:
            if in_ground_sector(self.target, self.pos[q], self.heading[q], gv):
                p = detect_prob_ground(self.target, self.pos[q], self.heading[q], gv)
                if p > 0 and sample_detection(self.sense_rng, p):
                    sight[q] = tuple(self.target)
        return sight

    def _power_control(self):
        """Separation biases for followers below T (and the opposite push for their relay),
        plus capped power raises."""
        rbias, fbias = {}, {}
        if not self.pc_on:
            return rbias, fbias
        base_sinr = self._sinr()
        T = self.chan.threshold
        if np.all(base_sinr >= T):
            return rbias, fbias
        pw = {int(i): float(self.powers[i]) for i in self.relays}
        res = power_control_targets(self.topo, self.pos, pw, self.chan, self.followers)
        for k, b in res.bias.items():
            fbias[k] = b
            i = self.topo.assignment[k]
            rbias[i] = rbias.get(i, np.zeros(3)) - b
        for i in self.relays:
            newp = res.powers.get(i, self.powers[i])
            if newp <= self.powers[i]:
                continue
            trial = self.powers.copy()
            trial[i] = newp
            s = self._sinr(powers=trial)
            if not np.any((s < T) & (base_sinr >= T)):
                self.powers = trial
                base_sinr = s
        return rbias, fbias

    def step(self):
        try:
            return self._step()
        except NonFiniteError as err:
            if not hasattr(err, "dump"):
                err.dump = self.dump(self.step_index * self.cfg.dt)
            raise

    def _step(self):
        cfg = self.cfg
        self.step_index += 1
        t = self.step_index * cfg.dt
        events = []
        sight = self._sense()
        rbias, fbias = self._power_control()
        states = [self._state(i) for i in range(len(self.pos))]

        # controls from the snapshot
        relay_u = {}
        ground_cmd = {}
        if self.hom:
            for i in self.relays:
                u = relay_control(i, self.topo, self.pos, self.vel, self.ctrl, self.radii.r_eps, self.obst)
                ground_cmd[i] = vector_to_command(u, self.heading[i], self.kin.vmax(self.cls[i]), self.kin.gamma_max,
                                                  self.ctrl.k_v, min_turn_speed=self.ctrl.min_turn_speed)
                self.modes[i] = Mode.SPRING_MASS
        else:
            for i in self.relays:
                mode, fk = relay_mode_guard(i, self.topo, self.pos, self.radii)
                self.modes[i] = mode
                if mode == Mode.FOLLOWER:
                    u = follow_control(i, fk, self.pos, self.vel, self.ctrl, self.obst)
                    if i in rbias:
                        u = u + rbias[i]
                else:
                    u = relay_control(i, self.topo, self.pos, self.vel, self.ctrl, self.radii.r_eps, self.obst,
                                      rbias.get(i))
                relay_u[i] = u
            for k in self.followers:
                is_m = self.cls[k] == AgentClass.MANIPULATOR
                v, g, mem, ev = follower_control(
                    k, states, self.topo, self.radii, self.ctrl, self.kin, self.memory[k], self.search_rng, t,
                    cfg.ground_vision, relay_broadcast=self.broadcast, obstacles=self.obst, bounds=self.bounds,
                    sighting=sight.get(k), target_fixed=self.target if is_m else None, arm=cfg.arm,
                    bias=fbias.get(k),
                )
                self.memory[k] = mem
                self.modes[k] = mem.mode
                ground_cmd[k] = (v, g)
                for name, who in ev:
                    if name == "adversary_captured":
                        continue  # decided below from true positions
                    events.append((name, who))
        adv_cmd = None
        if self.adv_alive:
            sens = [self.pos[k] for k in self.sensors]
            man = [self.pos[q] for q in self.manips]
            v, g, mode, _ = adversary_policy(states[self.adv], self.target, man, sens, self.ctrl, self.kin)
            self.modes[self.adv] = mode
            adv_cmd = (v, g)

        # integrate through the filter, ascending id
        sinr_now = self._sinr()
        blocked = 0
        for i in self.relays:
            if i in relay_u:
                sinr_now, b = self._move_holonomic(i, relay_u[i], sinr_now)
            else:
                sinr_now, b = self._move_ground(i, *ground_cmd[i], sinr_now)
            blocked += b
        for k in self.followers:
            sinr_now, b = self._move_ground(k, *ground_cmd[k], sinr_now)
            blocked += b
        if adv_cmd is not None:
            self._move_ground(self.adv, *adv_cmd, sinr_now)

        if not (np.all(np.isfinite(self.pos)) and np.all(np.isfinite(self.vel))):
            err = NonFiniteError(f"non-finite state at step {self.step_index} (t={t:.4f})")
            err.dump = self.dump(t)
            raise err

        # terminal and capture events from true positions
        if self.adv_alive:
            xa = self.pos[self.adv]
            for k in self.sensors:
                if self.modes[k] == Mode.PURSUIT and math.dist(self.pos[k][:2], xa[:2]) < self.ctrl.r_capture:
                    self.adv_alive = False
                    self.modes[self.adv] = Mode.CAPTURED
                    events.append(("adversary_captured", k))
                    break
        if self.adv_alive:
            xa = self.pos[self.adv]
            for q in self.manips:
                if math.dist(self.pos[q][:2], xa[:2]) < self.ctrl.r_capture:
                    events.append(("manipulator_captured", q))
                    break

        # topology / consensus
        self.topo = refresh_edges(self.topo, self.pos)
        if self.step_index % self.bc_steps == 0:
            if cfg.consensus and self.followers:
                before = dict(self.topo.assignment)
                self.topo, _ = consensus_step(self.topo, self.pos, self.followers,
                                              self._handover_ok if self.pc_on else None)
                for k, i in self.topo.assignment.items():
                    if before[k] != i:
                        events.append(("reassigned", k))
                self._serving_mask()
            self._snapshot()
        self.t = t
        return events

    # -- logging -------------------------------------------------------------

    def row(self, events):
        self._mark_coverage()
        s = self._sinr()
        if len(s):
            sdb = to_db(s)
            min_db, mean_db = float(np.min(sdb)), float(to_db(np.mean(s)))
            viol = int(np.sum(s < self.chan.threshold))
            sinr_txt = ";".join(f"{k}:{_f(v)}" for k, v in zip(self.followers, sdb))
        else:
            min_db = mean_db = float("nan")
            viol = 0
            sinr_txt = ""
        team = self.relays + self.followers
        ke = 0.5 * float(np.sum(self.vel[team] ** 2)) if team else 0.0
        connected = check_connected(self.topo, self.pos)
        modes = ";".join(f"{i}:{self.modes[i].value}" for i in range(1, len(self.pos)))
        ev = ";".join(f"{name}@{who}" for name, who in events)
        edges = ";".join(f"{a}-{b}" for a, b in sorted(self.topo.edges))
        return (round(self.t, 9), self.grid.fraction, min_db, mean_db, viol, connected, ke, modes, ev, edges, sinr_txt)

    def dump(self, t):
        return {
            "t": t,
            "step": self.step_index,
            "positions": self.pos.tolist(),
            "velocities": self.vel.tolist(),
            "headings": self.heading.tolist(),
            "modes": [m.value for m in self.modes],
            "assignment": {str(k): v for k, v in self.topo.assignment.items()},
        }

    def run(self) -> MetricsLog:
        cfg = self.cfg
        mlog = MetricsLog(cfg.kind, EXPLORATION_COLUMNS, config=cfg.to_dict())
        mlog.append(self.row([]))
        steps = int(round(cfg.duration / cfg.dt))
        once = {}
        for _ in range(steps):
            events = self.step()
            for name, who in events:
                if name in ("adversary_captured",) + TERMINAL and name not in once:
                    once[name] = (round(self.t, 9), who)
            row = self.row(events)
            term = [e for e in events if e[0] in TERMINAL]
            if term and self.terminal is None:
                self.terminal = (term[0][0], round(self.t, 9), term[0][1])
            if self.step_index % cfg.log_every == 0 or term:
                mlog.append(row)
            if term and cfg.stop_on_terminal:
                break
        mlog.summary = self._summary(mlog, once)
        return mlog

    def _summary(self, mlog, once):
        conn = mlog.column("connected")
        viol = mlog.column("sinr_violations")
        mins = [v for v in mlog.column("min_sinr_db") if not math.isnan(v)]
        cov = mlog.column("coverage_fraction")
        return {
            "schema_version": SUMMARY_SCHEMA,
            "kind": self.cfg.kind,
            "name": self.cfg.name,
            "seed": self.cfg.seed,
            "homogeneous": self.hom,
            "power_control": self.pc_on,
            "rows": len(mlog.rows),
            "steps": self.step_index,
            "t_final": round(self.t, 9),
            "coverage_fraction": cov[-1],
            "coverage_percent": 100.0 * cov[-1],
            "connected_fraction": sum(conn) / len(conn),
            "sinr_ok_fraction": sum(v == 0 for v in viol) / len(viol),
            "any_sinr_violation": any(v > 0 for v in viol),
            "min_sinr_db": min(mins) if mins else None,
            "final_kinetic_energy": mlog.column("kinetic_energy")[-1],
            "terminal_event": None if self.terminal is None else
            {"name": self.terminal[0], "t": self.terminal[1], "agent": self.terminal[2]},
            "events": {name: (None if name not in once else {"t": once[name][0], "agent": once[name][1]})
                       for name in ("adversary_captured", "manipulator_captured", "manipulation_success")},
        }


def _f(x):
    return format(float(x), ".6g")


def run_foraging(cfg: ScenarioConfig) -> MetricsLog:
    mlog = MetricsLog("foraging", FORAGING_COLUMNS, config=cfg.to_dict())
    mlog.append((0.0, 0, 32, 0, bool(cfg.drone), "", ""))

    def on_step(t, world, robots, store, drone):
        step = int(round(t / cfg.dt))
        if step % cfg.log_every == 0 or world.remaining == 0:
            phases = ";".join(f"{r.id}:{r.phase.value}" for r in robots)
            mlog.append((round(t, 9), world.collected, world.remaining, len(store.waypoints),
                         bool(drone is not None and drone.airborne), phases, ""))

    res = run_episode(cfg.forager_params, cfg.clusters, cfg.drone, cfg.foragers, cfg.duration, cfg.dt,
                      cfg.seed, cfg.foraging, streams=Streams(cfg.seed), on_step=on_step)
    _fold_events(mlog, res.events)
    mlog.tag_events = [(round(t, 9), rid, tid, cid) for t, rid, tid, cid in res.collection_times]
    terminal = res.terminal_event
    done = None if terminal is None else {"t": round(res.elapsed, 9)}
    mlog.summary = {
        "schema_version": SUMMARY_SCHEMA,
        "kind": "foraging",
        "name": cfg.name,
        "seed": cfg.seed,
        "clusters": cfg.clusters,
        "drone": bool(cfg.drone),
        "foragers": cfg.foragers,
        "rows": len(mlog.rows),
        "t_final": round(res.elapsed, 9),
        "tags_collected": res.tags_collected,
        "tags_per_hour": res.tags_per_hour,
        "terminal_event": None if terminal is None else {"name": terminal, **done},
        "events": {"all_tags_collected": done},
    }
    return mlog


def _fold_events(mlog, events):
    """Attach each event to the first logged row at or after its time."""
    if not events:
        return
    idx_ev = mlog.columns.index("events")
    rows = [list(r) for r in mlog.rows]
    times = [r[0] for r in rows]
    per_row = {}
    j = 0
    for ev in sorted(events, key=lambda e: e[0]):
        t = round(ev[0], 9)
        while j < len(times) and times[j] < t - 1e-9:
            j += 1
        if j == len(times):
            break
        if ev[1] == "wall_reflect":
            continue
        per_row.setdefault(j, []).append(f"{ev[1]}@{ev[2]}")
    for j, evs in per_row.items():
        rows[j][idx_ev] = ";".join(evs)
    mlog.rows = [tuple(r) for r in rows]


def run(cfg: ScenarioConfig) -> MetricsLog:
    """Run one replica of ``cfg`` and return its metrics log."""
    if cfg.kind == "foraging":
        return run_foraging(cfg)
    return ExplorationSim(cfg).run()
