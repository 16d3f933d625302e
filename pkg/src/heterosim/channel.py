"""Path-loss gain, SINR at followers and power control via mobility."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SeparationError


@dataclass(frozen=True)
class ChannelModel:
    K: float = 1.0
    l0: float = 1.0
    beta: float = 2.0
    shadow_mu: float = 0.0
    shadow_sigma: float = 0.5
    shadowing: bool = False
    noise: float = 0.0
    threshold: float = 2.0
    p_init: float = 1.0
    p_max: float = 4.0
    l_min: float = 0.3
    k_pc: float = 0.5

    def __post_init__(self):
        if not (self.K > 0 and self.l0 > 0 and self.threshold > 0 and self.l_min > 0):
            raise ValueError("K, l0, threshold and l_min must be positive")
        if not 0 < self.p_init <= self.p_max:
            raise ValueError("need 0 < p_init <= p_max")
        if self.noise < 0 or self.shadow_sigma < 0:
            raise ValueError("noise and shadow_sigma must be nonnegative")


def path_gain(l, model: ChannelModel):
    """Deterministic part K (l0/l)^beta, no separation check."""
    return model.K * (model.l0 / np.asarray(l, dtype=float)) ** model.beta


def link_gain(l_ik, p_i, model: ChannelModel, shadow_sample=0.0) -> float:
    """g_ik = K (l0/l_ik)^beta + psi_ik / P_i."""
    if l_ik < model.l_min:
        raise SeparationError(f"separation {l_ik:.4f} m below l_min={model.l_min}")
    if p_i <= 0:
        raise ValueError("transmit power must be positive")
    return float(path_gain(l_ik, model)) + shadow_sample / p_i


def draw_shadowing(rng, shape, model: ChannelModel):
    if not model.shadowing:
        return np.zeros(shape)
    return rng.lognormal(model.shadow_mu, model.shadow_sigma, size=shape)


def interferers(k, serving, positions, relay_ids, r_s):
    pos = np.asarray(positions, dtype=float)
    return [j for j in relay_ids if j != serving and np.linalg.norm(pos[j] - pos[k]) <= r_s]


def sinr_at(k, powers, positions, topology, model: ChannelModel, shadow=None) -> float:
    """SINR of follower ``k`` from its assigned relay.

    Interference comes from the other relays inside B(x_k, R_s). ``shadow`` maps
    (relay, follower) to a shadowing sample. Returns ``math.inf`` when the
    denominator is zero.
    """
    shadow = shadow or {}
    pos = np.asarray(positions, dtype=float)
    i = topology.assignment[k]

    def received(j):
        l = float(np.linalg.norm(pos[j] - pos[k]))
        return powers[j] * link_gain(l, powers[j], model, shadow.get((j, k), 0.0))

    interference = sum(received(j) for j in interferers(k, i, pos, topology.relay_ids, topology.radii.r_s))
    denom = interference + model.noise
    signal = received(i)
    return math.inf if denom == 0 else signal / denom


def sinr_matrix(positions, relay_ids, follower_ids, serving, powers, model, r_s, shadow=None):
    """Deterministic SINR for every follower at once (engine fast path).

    ``serving`` is an int array of serving relay ids aligned with ``follower_ids``;
    ``powers`` is indexed by node id. ``shadow`` optionally holds a
    (len(relay_ids), len(follower_ids)) array of shadowing samples.
    """
    pos = np.asarray(positions, dtype=float)
    r = np.asarray(relay_ids)
    f = np.asarray(follower_ids)
    if len(f) == 0:
        return np.zeros(0)
    d = np.linalg.norm(pos[r][:, None, :] - pos[f][None, :, :], axis=2)
    p = np.asarray(powers, dtype=float)[r][:, None]
    rx = p * path_gain(np.maximum(d, 1e-12), model)
    if shadow is not None:
        rx = rx + shadow
    is_serving = r[:, None] == np.asarray(serving)[None, :]
    signal = np.where(is_serving, rx, 0.0).sum(axis=0)
    interf = np.where((~is_serving) & (d <= r_s), rx, 0.0).sum(axis=0) + model.noise
    with np.errstate(divide="ignore"):
        return np.where(interf > 0, signal / np.where(interf > 0, interf, 1.0), np.inf)


def to_db(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


@dataclass
class PowerControlResult:
    required_separation: dict = field(default_factory=dict)
    bias: dict = field(default_factory=dict)
    powers: dict = field(default_factory=dict)
    infeasible: set = field(default_factory=set)


def required_separation(p_i, interference, model: ChannelModel) -> float:
    """Largest l_ik with P_i K (l0/l)^beta >= T * (interference + noise)."""
    denom = model.threshold * (interference + model.noise)
    if denom <= 0:
        return math.inf
    return model.l0 * (p_i * model.K / denom) ** (1.0 / model.beta)


def power_control_targets(topology, positions, powers, model: ChannelModel, followers=None):
    """Separation targets, control biases and power raises for followers below T.

    Uses the deterministic gain only. A follower whose link can be repaired by
    moving closer (without going under l_min) gets a bias of magnitude k_pc toward
    its relay; otherwise its relay's power is raised toward P_max. If neither
    (l_min, P_max) suffices the follower is flagged infeasible.
    """
    pos = np.asarray(positions, dtype=float)
    powers = dict(powers)
    out = PowerControlResult(powers=powers)
    ks = sorted(topology.assignment) if followers is None else sorted(followers)
    for k in ks:
        i = topology.assignment[k]
        l_ik = float(np.linalg.norm(pos[i] - pos[k]))
        js = interferers(k, i, pos, topology.relay_ids, topology.radii.r_s)
        interference = sum(
            powers[j] * float(path_gain(max(np.linalg.norm(pos[j] - pos[k]), 1e-12), model)) for j in js
        )
        signal = powers[i] * float(path_gain(l_ik, model))
        denom = interference + model.noise
        if denom == 0 or signal / denom >= model.threshold:
            continue
        l_req = required_separation(powers[i], interference, model)
        out.required_separation[k] = l_req
        if l_req >= model.l_min:
            direction = pos[i] - pos[k]
            direction[2] = 0.0
            norm = np.linalg.norm(direction)
            if norm > 0:
                out.bias[k] = model.k_pc * direction / norm
            continue
        best = model.p_max * float(path_gain(model.l_min, model)) / denom
        if best < model.threshold:
            out.infeasible.add(k)
        needed = model.threshold * denom / float(path_gain(max(l_ik, model.l_min), model))
        powers[i] = min(model.p_max, max(powers[i], needed))
    return out
