"""
Distilling gains into a selector
================================

Synthetic groups of 16 candidates carry raw gains that fall as the retrieval
score rises. Gains become labels via -log(1 + v), and the selector is fitted
so that the softmax of its scores matches the softmax of the labels.
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from fixtures import synthetic_groups  # noqa: E402

from gainrag import TrainConfig, train  # noqa: E402
from gainrag.selector import group_features  # noqa: E402

groups = synthetic_groups(1000, seed=1)
g = groups[0]
print("first group, gains :", np.round([m.record.gain for m in g.members[:5]], 2))
print("first group, labels:", np.round(g.labels[:5], 3))

model = train(groups, TrainConfig())
print("loss per epoch:", [round(x, 4) for x in model.metadata["loss_curve"]])

held_out = synthetic_groups(200, seed=2, prefix="h")
agree = np.mean([np.argmax(model.forward(group_features(h, model.features))) == np.argmax(h.labels)
                 for h in held_out])
print(f"held-out argmax agreement: {agree:.3f}")
