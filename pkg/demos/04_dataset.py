"""Build a small labelled dataset with a stratified split and verify it on disk.

Run: python demos/04_dataset.py [out_dir]
"""

import sys
from collections import Counter
from pathlib import Path

from poseforge.dataset import DatasetSpec, PoseSampling, build_dataset, read_manifest
from poseforge.posespace import DiscretizationSpec, generate_labels

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_dataset")

disc = DiscretizationSpec(radii=(3.0,), n=6, m=1)
spec = DatasetSpec(
    name="clean",
    poses=PoseSampling(mode="on-grid", count=120, jitter_deg=20.0),
    discretization=disc,
    seed=0,
)
man = build_dataset(spec, generate_labels(disc), out_dir=out)
print("images:", len(man.entries))
print("split sizes:", dict(Counter(e.split for e in man.entries)))
print("test per label:", dict(sorted(Counter(e.labels["labels"] for e in man.select("test")).items())))

# reread with hash verification
again = read_manifest(out / "manifest.jsonl", verify=True)
print("verified", len(again.entries), "entries from", out / "manifest.jsonl")
