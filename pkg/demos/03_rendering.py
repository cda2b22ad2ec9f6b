"""Render the mock spacecraft, add sensor noise and store the result as PGM.

Run: python demos/03_rendering.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from poseforge.posespace import DiscretizationSpec, generate_labels, label_pose
from poseforge.renderer import add_gaussian_noise, apply_offset, hflip, make_mock_spacecraft, read_pgm, render, write_pgm

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_render")
out.mkdir(parents=True, exist_ok=True)

craft = make_mock_spacecraft()
labels = generate_labels(DiscretizationSpec(radii=(3.0,), n=6, m=1))
pose = label_pose(labels[0])

clean = render(craft, pose)
print("image", clean.shape, "lit pixels", int((clean > 0).sum()), "max", clean.max())

for var in (0.0, 0.01, 0.1):
    img = add_gaussian_noise(clean, var, seed=0)
    write_pgm(out / f"view0_var{var}.pgm", img)
    print(f"var={var:<5} mean abs change {np.abs(img - clean).mean():.4f}")

# off-boresight target: silhouette moves right and down
shifted = render(craft, apply_offset(pose, (0.3, 0.2, 3.0)))
ys, xs = np.nonzero(shifted)
print("centroid of offset view (x, y):", round(xs.mean(), 1), round(ys.mean(), 1))

write_pgm(out / "view0_flipped.pgm", hflip(clean))
assert np.array_equal(read_pgm(out / "view0_var0.0.pgm"), clean)
print("wrote", sorted(p.name for p in out.glob("*.pgm")))
