"""Quaternion basics: composition, axis-angle round trips and attitude error.

Run: python demos/01_rotations.py
"""

import numpy as np

from poseforge.rotmath import (
    AxisAngle,
    angular_distance,
    quat_conj,
    quat_from_axis_angle,
    quat_mult,
    quat_to_axis_angle,
    quat_to_rotmat,
    random_quaternions,
    rotate_vector,
)

# 90 deg about z sends x to y
qz = quat_from_axis_angle(AxisAngle(np.array([0.0, 0.0, 1.0]), 90.0))
print("q(z, 90)        =", np.round(qz.as_array(), 6))
print("rotate x        =", np.round(rotate_vector(qz, [1.0, 0.0, 0.0]), 6))
print("matrix          =\n", np.round(quat_to_rotmat(qz), 6))

# two quarter turns make a half turn
half = quat_mult(qz, qz)
aa = quat_to_axis_angle(half)
print("q * q           -> axis", np.round(aa.axis, 6), "angle", round(aa.angle, 6))

# attitude error between a pose and a perturbed copy
rng = np.random.default_rng(0)
q = random_quaternions(1, rng)[0]
tilt = quat_from_axis_angle(AxisAngle(np.array([1.0, 1.0, 0.0]) / np.sqrt(2.0), 7.5))
print("error of 7.5 deg tilt =", round(angular_distance(q, quat_mult(q, tilt)), 6), "deg")
print("q * conj(q)     =", np.round(quat_mult(q, quat_conj(q)).as_array(), 12))
