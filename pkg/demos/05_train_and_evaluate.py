"""Train the pose-label classifier on a small dataset and print the metrics table.

Run: python demos/05_train_and_evaluate.py [dataset_dir]
Uses the dataset written by 04_dataset.py (built here if missing).
"""

import subprocess
import sys
from pathlib import Path

from poseforge.classifier import Model, ModelConfig, TrainConfig, predict_features, train
from poseforge.dataset import load_split, read_manifest
from poseforge.evaluation import report
from poseforge.posespace import DiscretizationSpec, generate_labels

root = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_dataset")
if not (root / "manifest.jsonl").exists():
    subprocess.run([sys.executable, str(Path(__file__).with_name("04_dataset.py")), str(root)], check=True)

man = read_manifest(root / "manifest.jsonl")
labels = generate_labels(DiscretizationSpec(radii=(3.0,), n=6, m=1))

side = 32
X, y, X_flip = load_split(man, "train", side, with_flip=True)
X_val, y_val, _ = load_split(man, "validation", side)
model = Model.init(ModelConfig(num_classes=len(labels), input_side=side, hidden_units=64))
model, hist = train(model, X, y, TrainConfig(epochs=15, learning_rate=0.01), X_flip, X_val, y_val)
print("last epochs (loss, val acc):", [(round(l, 3), round(a, 3)) for l, a in zip(hist.train_loss[-3:], hist.val_accuracy[-3:])])

test = man.select("test")
X_test, _, _ = load_split(man, "test", side)
rep = report(test, predict_features(model, X_test), labels)
print(rep.to_text("clean test split"))
