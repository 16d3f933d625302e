"""Arm Jacobian, manipulability, and the body servo used in manipulation mode."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ArmModel:
    link_lengths: tuple = (0.3, 0.3)
    joint_angles: tuple = (0.0, math.pi / 2)
    mount_offset: tuple = (0.1, 0.0)

    def __post_init__(self):
        if len(self.link_lengths) != len(self.joint_angles):
            raise ValueError("one joint angle per link")
        if any(l <= 0 for l in self.link_lengths):
            raise ValueError("link lengths must be positive")

    @property
    def optimal_reach(self):
        l1, l2 = self.link_lengths[:2]
        return math.hypot(l1, l2)


def forward_kinematics(arm: ArmModel, angles=None):
    """End-effector (x, y) in the mount frame for a planar serial chain."""
    angles = arm.joint_angles if angles is None else angles
    x = y = 0.0
    acc = 0.0
    for l, a in zip(arm.link_lengths, angles):
        acc += a
        x += l * math.cos(acc)
        y += l * math.sin(acc)
    return np.array([x, y])


def jacobian_planar2(arm: ArmModel, angles=None) -> np.ndarray:
    l1, l2 = arm.link_lengths
    a1, a2 = arm.joint_angles if angles is None else angles
    s1, c1 = math.sin(a1), math.cos(a1)
    s12, c12 = math.sin(a1 + a2), math.cos(a1 + a2)
    return np.array([[-l1 * s1 - l2 * s12, -l2 * s12], [l1 * c1 + l2 * c12, l2 * c12]])


def manipulability(J, rank_tol=1e-12) -> float:
    """Product of the singular values of J; 0 at singular configurations."""
    sv = np.linalg.svd(np.atleast_2d(np.asarray(J, dtype=float)), compute_uv=False)
    if sv.size == 0 or sv[-1] <= rank_tol * max(sv[0], 1.0):
        return 0.0
    return float(np.prod(sv))


def planar2_manipulability(arm: ArmModel, angles=None) -> float:
    """Closed form l1 * l2 * |sin a2| for the two-link arm."""
    l1, l2 = arm.link_lengths
    a2 = (arm.joint_angles if angles is None else angles)[1]
    return l1 * l2 * abs(math.sin(a2))


def mount_position(pose, arm: ArmModel):
    x, y, th = pose
    ox, oy = arm.mount_offset
    c, s = math.cos(th), math.sin(th)
    return np.array([x + c * ox - s * oy, y + s * ox + c * oy])


def best_arm_config(arm: ArmModel, target, pose=(0.0, 0.0, 0.0)):
    """Elbow at +-pi/2 (maximum manipulability) with the end effector aimed at ``target``.

    Returns (joint_angles, x_zeta) with x_zeta in the world frame. The end effector
    lands on the ray from the mount to the target at distance sqrt(l1^2 + l2^2);
    the elbow sign follows the side of the heading axis the target is on.
    """
    l1, l2 = arm.link_lengths
    mount = mount_position(pose, arm)
    rel = np.asarray(target, dtype=float)[:2] - mount
    th = pose[2]
    dist = float(np.hypot(*rel))
    bearing = math.atan2(rel[1], rel[0]) - th if dist > 0 else 0.0
    bearing = math.atan2(math.sin(bearing), math.cos(bearing))
    a2 = math.pi / 2 if bearing >= 0 else -math.pi / 2
    a1 = bearing - math.atan2(l2 * math.sin(a2), l1 + l2 * math.cos(a2))
    a1 = math.atan2(math.sin(a1), math.cos(a1))
    ee = forward_kinematics(arm, (a1, a2))
    c, s = math.cos(th), math.sin(th)
    x_zeta = mount + np.array([c * ee[0] - s * ee[1], s * ee[0] + c * ee[1]])
    return (a1, a2), x_zeta


def manipulation_control(x_target, pose, arm: ArmModel, alpha=1.0, r_manip=0.1):
    """Body displacement command alpha * (x_D - x_zeta), in the world frame.

    Returns (u, x_zeta, success). ``u`` is the planar vector the body should move
    along; the caller maps it to (v, gamma_d).
    """
    _, x_zeta = best_arm_config(arm, x_target, pose)
    err = np.asarray(x_target, dtype=float)[:2] - x_zeta
    success = float(np.hypot(*err)) < r_manip
    u = np.zeros(3)
    if not success:
        u[:2] = alpha * err
    return u, x_zeta, success
