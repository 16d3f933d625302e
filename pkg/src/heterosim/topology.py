"""Communication graph: Gabriel edges, follower assignment, load consensus, connectivity.

Node ids index a shared ``positions`` array of shape (N, 3). The base station is an
ordinary fixed node of the relay graph.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DuplicatePositionError, EmptyRegionError, OrphanFollowerError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Radii:
    r_c: float = 5.0
    r_s: float = 1.5
    r_m: float = 1.5
    r_eps: float = 3.0

    def __post_init__(self):
        if not (0 < self.r_s < self.r_eps < self.r_c):
            raise ValueError(
                f"radii must satisfy 0 < R_s < R_eps < R_c, got R_s={self.r_s}, "
                f"R_eps={self.r_eps}, R_c={self.r_c}"
            )
        if not math.isclose(self.r_s, self.r_m):
            raise ValueError(f"R_m must equal R_s, got R_s={self.r_s}, R_m={self.r_m}")


@dataclass
class CommTopology:
    base_id: int
    relay_ids: list
    radii: Radii
    edges: set = field(default_factory=set)
    assignment: dict = field(default_factory=dict)

    @property
    def relay_edges(self):
        """Edges between two relays (base links excluded)."""
        return {e for e in self.edges if self.base_id not in e}

    def neighbors(self, node):
        out = []
        for a, b in self.edges:
            if a == node:
                out.append(b)
            elif b == node:
                out.append(a)
        return sorted(out)

    def relay_neighbors(self, relay):
        return [j for j in self.neighbors(relay) if j != self.base_id]

    def followers_of(self, relay, among=None):
        ids = self.assignment if among is None else among
        return sorted(k for k in ids if self.assignment.get(k) == relay)

    def loads(self, followers):
        counts = {i: 0 for i in self.relay_ids}
        for k in followers:
            counts[self.assignment[k]] += 1
        return counts


def gabriel_edges(points) -> set:
    """Gabriel graph over ``points`` as a set of index pairs (i, j), i < j.

    (i, j) is an edge iff no third point lies strictly inside the circle with
    diameter ij, which is the same as: no k with |ik|^2 + |jk|^2 < |ij|^2.
    """
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or len(p) == 0:
        raise ValueError("need at least one point")
    if not np.all(np.isfinite(p)):
        raise ValueError("positions must be finite")
    n = len(p)
    diff = p[:, None, :] - p[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    off = d2[~np.eye(n, dtype=bool)]
    if n > 1 and np.any(off == 0.0):
        raise DuplicatePositionError("duplicate positions make the Gabriel test degenerate")
    blocked = (d2[:, None, :] + d2[None, :, :] < d2[:, :, None]).any(axis=2)
    iu, ju = np.triu_indices(n, k=1)
    keep = ~blocked[iu, ju]
    return {(int(i), int(j)) for i, j in zip(iu[keep], ju[keep])}


def relay_graph(positions, base_id, relay_ids, r_c) -> set:
    """Gabriel edges among base and relays, restricted to pairs within ``r_c``."""
    nodes = [base_id] + list(relay_ids)
    pts = np.asarray(positions, dtype=float)[nodes]
    out = set()
    for a, b in gabriel_edges(pts):
        if np.linalg.norm(pts[a] - pts[b]) <= r_c:
            u, v = nodes[a], nodes[b]
            out.add((min(u, v), max(u, v)))
    return out


def assign_followers(positions, relay_ids, follower_ids, r_c) -> dict:
    """Map each follower to its nearest relay (ties go to the lowest relay id)."""
    pos = np.asarray(positions, dtype=float)
    relays = sorted(relay_ids)
    out = {}
    for k in follower_ids:
        d = np.linalg.norm(pos[relays] - pos[k], axis=1)
        best = None
        for idx in np.argsort(d, kind="stable"):
            if d[idx] <= r_c:
                best = relays[idx]
            break
        if best is None:
            raise OrphanFollowerError(k)
        out[k] = best
    return out


def build_topology(positions, base_id, relay_ids, follower_ids, radii: Radii, assignment=None):
    edges = relay_graph(positions, base_id, relay_ids, radii.r_c)
    if assignment is None:
        assignment = assign_followers(positions, relay_ids, follower_ids, radii.r_c)
    return CommTopology(base_id, sorted(relay_ids), radii, edges, dict(assignment))


def refresh_edges(topology: CommTopology, positions) -> CommTopology:
    edges = relay_graph(positions, topology.base_id, topology.relay_ids, topology.radii.r_c)
    return replace(topology, edges=edges)


def _transfer(topology, positions, src, dst, count, followers, admissible=None):
    """Move up to ``count`` followers of ``src`` that lie within R_c of ``dst``.

    Each slot takes the follower of ``src`` closest to ``dst``; a slot is skipped when
    that follower is out of ``dst``'s range or ``admissible(k, dst)`` rejects it.
    Returns the number actually moved.
    """
    pos = np.asarray(positions, dtype=float)
    moved = 0
    for _ in range(count):
        mine = [k for k in followers if topology.assignment[k] == src]
        if not mine:
            break
        d = [float(np.linalg.norm(pos[k] - pos[dst])) for k in mine]
        p = mine[int(np.argmin(d))]
        if min(d) > topology.radii.r_c:
            log.debug("consensus: no follower of relay %d inside range of relay %d", src, dst)
            break
        if admissible is not None and not admissible(p, dst):
            log.debug("consensus: handing follower %d to relay %d rejected", p, dst)
            break
        topology.assignment[p] = dst
        moved += 1
    return moved


def consensus_step(topology: CommTopology, positions, followers, admissible=None):
    """One outer sweep of the local load-balancing consensus over ``followers``.

    Relays are visited in ascending id; counts are always recomputed from the
    physical assignment, so a skipped transfer leaves both loads unchanged.
    ``admissible(k, j)`` can veto handing follower k to relay j (the engine uses it
    to keep the SINR constraint). Returns a new topology and the per-relay loads.
    """
    topo = replace(topology, assignment=dict(topology.assignment))
    followers = sorted(followers)
    for i in topo.relay_ids:
        n = topo.loads(followers)
        lower = [j for j in topo.relay_neighbors(i) if n[j] <= n[i]]
        if not lower:
            continue
        tau = (n[i] + sum(n[j] for j in lower)) // (len(lower) + 1)
        moved = 0
        deficient = _single_deficient(i, lower, n)
        if deficient is not None:
            moved = _transfer(topo, positions, i, deficient, (n[i] - n[deficient]) // 2, followers, admissible)
        else:
            for j in lower:
                want = tau - n[j]
                if want > 0:
                    moved += _transfer(topo, positions, i, j, want, followers, admissible)
        if moved == 0:
            # floored averages can stall while a neighbour is two or more below
            n = topo.loads(followers)
            j = min(lower, key=lambda r: (n[r], r))
            if n[i] - n[j] >= 2:
                _transfer(topo, positions, i, j, 1, followers, admissible)
    return topo, topo.loads(followers)


def _single_deficient(i, lower, n):
    if len(lower) < 2:
        return None
    for k in lower:
        if n[k] <= n[i] - 2 and all(n[j] == n[i] for j in lower if j != k):
            return k
    return None


def run_consensus(topology, positions, followers, max_sweeps=None):
    """Iterate ``consensus_step`` until the assignment stops changing."""
    limit = max_sweeps or 10 * max(1, len(topology.relay_ids))
    topo = topology
    for sweep in range(limit):
        nxt, loads = consensus_step(topo, positions, followers)
        if nxt.assignment == topo.assignment:
            return nxt, loads, sweep
        topo = nxt
    return topo, topo.loads(followers), limit


def reachable_from_base(topology: CommTopology, positions):
    pos = np.asarray(positions, dtype=float)
    r_c = topology.radii.r_c
    infra = [topology.base_id] + list(topology.relay_ids)
    p = pos[infra]
    near = np.sqrt(((p[:, None, :] - p[None, :, :]) ** 2).sum(axis=2)) <= r_c
    seen_idx = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(near[u]).tolist():
            if v not in seen_idx:
                seen_idx.add(v)
                queue.append(v)
    seen = {infra[v] for v in seen_idx}
    for k, i in topology.assignment.items():
        if i in seen and math.dist(pos[k].tolist(), pos[i].tolist()) <= r_c:
            seen.add(k)
    return seen


def disconnected_agents(topology: CommTopology, positions, agent_ids=None):
    seen = reachable_from_base(topology, positions)
    ids = list(topology.relay_ids) + list(topology.assignment) if agent_ids is None else agent_ids
    return sorted(a for a in ids if a not in seen)


def check_connected(topology: CommTopology, positions, agent_ids=None) -> bool:
    """True iff every agent reaches the base over links no longer than R_c.

    Relay/base pairs link when mutually within R_c; a follower links only to its
    assigned relay.
    """
    return not disconnected_agents(topology, positions, agent_ids)


@dataclass(frozen=True)
class GoalRegion:
    center: np.ndarray
    eps: float
    outer: float
    inner: float

    def in_ball(self, p) -> bool:
        return float(np.linalg.norm(np.asarray(p) - self.center)) <= self.outer

    def in_annulus(self, p) -> bool:
        d = float(np.linalg.norm(np.asarray(p) - self.center))
        return self.inner < d <= self.outer

    def sample_annulus(self, rng, z=0.0, outer=None):
        """Area-uniform goal on the plane ``z`` whose 3-D distance lies in the annulus."""
        outer = self.outer if outer is None else min(outer, self.outer)
        dz2 = (self.center[2] - z) ** 2
        lo2 = max(self.inner**2 - dz2, 0.0)
        hi2 = outer**2 - dz2
        if hi2 <= lo2:
            raise EmptyRegionError("annulus does not intersect the goal plane")
        rho = math.sqrt(rng.uniform(lo2, hi2))
        ang = rng.uniform(-math.pi, math.pi)
        return np.array([self.center[0] + rho * math.cos(ang), self.center[1] + rho * math.sin(ang), z])


def safe_goal_region(relay_position, follower_radius, dt, v_max_relay, r_c) -> GoalRegion:
    """Admissible goals for a follower of a relay broadcasting every ``dt`` seconds.

    ``outer`` bounds the connectivity ball B(x_i, R_c - eps); the search annulus adds
    the inner bound R_s + eps (R_m + eps for manipulators).
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    eps = v_max_relay * dt
    outer, inner = r_c - eps, follower_radius + eps
    if outer <= inner:
        raise EmptyRegionError(
            f"broadcast period {dt}s too long: R_c-eps={outer:.3f} <= R_s+eps={inner:.3f}"
        )
    return GoalRegion(np.asarray(relay_position, dtype=float), eps, outer, inner)
