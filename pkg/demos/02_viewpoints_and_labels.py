"""Spread viewpoints on a sphere, build pose labels and assign a pose to one.

Run: python demos/02_viewpoints_and_labels.py
"""

import numpy as np

from poseforge.posespace import (
    CameraPose,
    DiscretizationSpec,
    assign_label,
    distribute_points,
    generate_labels,
    hull_edges,
    label_pose,
    labels_checksum,
    subdivide,
    thomson_energy,
)
from poseforge.rotmath import AxisAngle, quat_from_axis_angle, quat_mult

for n in (6, 12, 32):
    pts = distribute_points(n, seed=0)
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    nearest = np.sort(d, axis=1)[:, 1]
    print(f"n={n:3d}  energy={thomson_energy(pts):10.6f}  nearest-neighbour spread={nearest.max() - nearest.min():.2e}")

# one midpoint subdivision of the icosahedron gives 42 points
ico = distribute_points(12, seed=0)
print("hull edges of 12 points:", len(hull_edges(ico)), " subdivided:", len(subdivide(ico)))

spec = DiscretizationSpec(radii=(3.0, 5.0), n=6, m=3)
labels = generate_labels(spec)
print(f"{spec.label_count} labels, checksum {labels_checksum(labels)[:16]}...")
for lab in labels[:4]:
    print(" ", lab.id, lab.range, np.round(lab.attitude.as_array(), 4))

# a pose 10 deg off label 7 at 3.4 m lands on label 7
base = label_pose(labels[7])
tilt = quat_from_axis_angle(AxisAngle(np.array([0.0, 1.0, 0.0]), 10.0))
pose = CameraPose(quat_mult(base.attitude, tilt), np.array([0.0, 0.0, 3.4]))
print("assigned label:", assign_label(pose, labels))
