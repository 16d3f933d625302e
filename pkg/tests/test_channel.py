import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heterosim.channel import (
    ChannelModel,
    draw_shadowing,
    link_gain,
    power_control_targets,
    required_separation,
    sinr_at,
    sinr_matrix,
)
from heterosim.errors import SeparationError
from heterosim.topology import CommTopology, Radii


def test_gain_at_reference_distance():
    m = ChannelModel(K=2.5, l0=1.3, beta=3.0)
    assert link_gain(1.3, 1.0, m) == pytest.approx(2.5)


def test_gain_inverse_square():
    assert link_gain(2.0, 1.0, ChannelModel(K=1.0, l0=1.0, beta=2.0)) == pytest.approx(0.25)


def test_gain_below_l_min():
    with pytest.raises(SeparationError):
        link_gain(0.1, 1.0, ChannelModel(l_min=0.3))


def test_shadowing_mean(rng):
    m = ChannelModel(shadowing=True, shadow_mu=0.0, shadow_sigma=0.5)
    x = draw_shadowing(rng, 200_000, m)
    assert np.mean(x) == pytest.approx(math.exp(0.125), rel=0.01)
    assert np.all(draw_shadowing(rng, 5, ChannelModel(shadowing=False)) == 0)


@given(st.floats(0.3, 50.0), st.floats(0.3, 50.0), st.floats(0.5, 5.0))
def test_gain_decreasing(l1, l2, beta):
    m = ChannelModel(beta=beta)
    lo, hi = sorted((l1, l2))
    assert link_gain(lo, 1.0, m) >= link_gain(hi, 1.0, m)


def _topo(relays, assignment, r_s):
    radii = Radii(r_c=100.0, r_s=r_s, r_m=r_s, r_eps=50.0)
    return CommTopology(relays[0], relays[1:], radii, set(), assignment)


def test_single_term_sinr():
    # relay 1 serves follower 2, relay 3 interferes; both at gain 1/2, noise 1
    m = ChannelModel(K=1.0, l0=1.0, beta=2.0, noise=1.0)
    pos = np.array([[0, 0, 0], [0, 0, 0], [math.sqrt(2), 0, 0], [math.sqrt(2), math.sqrt(2), 0]], float)
    topo = _topo([0, 1, 3], {2: 1}, r_s=5.0)
    powers = {0: 1.0, 1: 1.0, 3: 1.0}
    # signal 0.5; interference 0.5 (distance sqrt 2); denom 1.5
    assert sinr_at(2, powers, pos, topo, m) == pytest.approx(0.5 / 1.5)
    topo_far = _topo([0, 1, 3], {2: 1}, r_s=1.0)  # interferer outside R_s
    assert sinr_at(2, powers, pos, topo_far, m) == pytest.approx(0.5)


def test_symmetric_pair_unit_sinr():
    m = ChannelModel(noise=0.0)
    pos = np.array([[-5, 0, 0], [-1, 0, 0], [1, 0, 0], [0, 0, 0]], float)
    topo = _topo([0, 1, 2], {3: 1}, r_s=3.0)
    assert sinr_at(3, {0: 1.0, 1: 1.0, 2: 1.0}, pos, topo, m) == pytest.approx(1.0)


def test_three_relay_hand_oracle():
    m = ChannelModel(K=1.0, l0=1.0, beta=2.0, noise=0.1)
    pos = np.array([[-9, 0, 0], [0, 0, 0], [3, 0, 0], [0, 4, 0], [1, 0, 0]], float)
    topo = _topo([0, 1, 2, 3], {4: 1}, r_s=5.0)
    powers = {0: 1.0, 1: 2.0, 2: 1.0, 3: 3.0}
    # distances from follower 4: relay1 1, relay2 2, relay3 sqrt(17); base out of R_s
    expect = 2.0 / (1.0 / 4.0 + 3.0 / 17.0 + 0.1)
    assert sinr_at(4, powers, pos, topo, m) == pytest.approx(expect, rel=1e-12)
    vec = sinr_matrix(pos, [1, 2, 3], [4], np.array([1]), np.array([1.0, 2.0, 1.0, 3.0, 0.0]), m, 5.0)
    assert vec[0] == pytest.approx(expect, rel=1e-12)


def test_no_interference_no_noise_is_inf():
    pos = np.array([[-5, 0, 0], [0, 0, 0], [1, 0, 0]], float)
    topo = _topo([0, 1], {2: 1}, r_s=1.5)
    assert sinr_at(2, {0: 1.0, 1: 1.0}, pos, topo, ChannelModel(noise=0.0)) == math.inf


def test_sinr_matrix_matches_scalar(rng):
    m = ChannelModel(noise=0.05)
    for _ in range(20):
        pos = rng.uniform(0, 6, size=(9, 3))
        pos[:, 2] = 0
        relays, followers = [1, 2, 3, 4], [5, 6, 7, 8]
        serving = {k: relays[int(rng.integers(4))] for k in followers}
        topo = _topo([0] + relays, serving, r_s=2.5)
        p = rng.uniform(0.5, 3.0, size=9)
        ok = all(min(np.linalg.norm(pos[j] - pos[k]) for j in relays) >= m.l_min for k in followers)
        if not ok:
            continue
        vec = sinr_matrix(pos, relays, followers, np.array([serving[k] for k in followers]), p, m, 2.5)
        for col, k in enumerate(followers):
            assert vec[col] == pytest.approx(sinr_at(k, dict(enumerate(p)), pos, topo, m), rel=1e-12)


def test_separation_single_interferer_closed_form():
    m = ChannelModel(K=1.0, l0=1.0, beta=2.0, threshold=2.0, noise=0.1)
    pos = np.array([[-9, 0, 0], [0, 0, 0], [2, 0, 0], [1.5, 0, 0]], float)
    topo = _topo([0, 1, 2], {3: 1}, r_s=1.0)
    res = power_control_targets(topo, pos, {0: 1.0, 1: 1.0, 2: 1.0}, m)
    interference = 1.0 / 0.5**2
    closed = (1.0 / (2.0 * (interference + 0.1))) ** 0.5
    assert res.required_separation[3] == pytest.approx(closed, rel=1e-9)
    assert required_separation(1.0, interference, m) == pytest.approx(closed, rel=1e-12)


def test_bias_points_to_relay():
    m = ChannelModel(threshold=2.0, noise=0.1, l_min=0.1, k_pc=0.5)
    pos = np.array([[-9, 0, 0], [0, 0, 0], [2, 0, 0], [1.2, 0, 0]], float)
    topo = _topo([0, 1, 2], {3: 1}, r_s=1.0)
    res = power_control_targets(topo, pos, {0: 1.0, 1: 1.0, 2: 1.0}, m)
    np.testing.assert_allclose(res.bias[3], [-0.5, 0, 0])
    assert not res.infeasible


def test_infeasible_flagged():
    # interferer sits right next to the follower; no allowed separation or power fixes it
    m = ChannelModel(threshold=2.0, noise=0.0, l_min=0.3, p_max=4.0)
    pos = np.array([[-9, 0, 0], [0, 0, 0], [1.3, 0, 0], [1.1, 0, 0]], float)
    # best case P_max g(l_min) / I = 4 * (1/0.09) / (1/0.04) = 1.78 < T
    topo = _topo([0, 1, 2], {3: 1}, r_s=1.0)
    res = power_control_targets(topo, pos, {0: 1.0, 1: 1.0, 2: 1.0}, m)
    assert 3 in res.infeasible
    assert res.powers[1] == pytest.approx(4.0)


def test_satisfied_follower_untouched():
    m = ChannelModel(threshold=2.0)
    pos = np.array([[-9, 0, 0], [0, 0, 0], [0.5, 0, 0]], float)
    topo = _topo([0, 1], {2: 1}, r_s=1.0)
    res = power_control_targets(topo, pos, {0: 1.0, 1: 1.0}, m)
    assert not res.bias and not res.infeasible and not res.required_separation


@given(st.floats(0.0, 10.0), st.floats(0.0, 10.0), st.floats(0.1, 5.0))
def test_separation_monotone_in_interference(a, b, p):
    m = ChannelModel(noise=0.01)
    lo, hi = sorted((a, b))
    assert required_separation(p, hi, m) <= required_separation(p, lo, m)


@given(st.floats(0.1, 5.0), st.floats(0.1, 5.0))
def test_separation_monotone_in_power(p1, p2):
    m = ChannelModel(noise=0.01)
    lo, hi = sorted((p1, p2))
    assert required_separation(lo, 1.0, m) <= required_separation(hi, 1.0, m)
