#!/usr/bin/env python3
# A miniature training run: watch the loss fall and matches appear.
# (A few minutes of CPU; the real recipe is `slimmatch synth` + `slimmatch train`.)

from slimmatch.pipeline import init_model, match_pair, tiny_config, train
from slimmatch.synth import make_pair

cfg = tiny_config(seed=0, learning_rate=0.6, epochs=6)
scenes = [make_pair(64, 64, seed) for seed in range(24)]
test_scene = make_pair(64, 64, seed=999)

params = init_model(cfg)
coarse, fine = match_pair(test_scene.image_a, test_scene.image_b, params, cfg)
print(f"untrained: {len(coarse)} coarse matches")

params, history = train(scenes, cfg, params=params, log=print)

coarse, fine = match_pair(test_scene.image_a, test_scene.image_b, params, cfg)
gt = {tuple(p) for p in test_scene.gt_labels.match_indices}
correct = sum(1 for p in coarse.index_pairs if tuple(p) in gt)
print(f"trained: {len(coarse)} coarse matches, {correct} of them ground truth, "
      f"{len(fine)} fine matches")
if len(fine):
    print("first fine match:", fine.points_a[0].round(2), "->",
          fine.points_b[0].round(2), f"(confidence {fine.confidence[0]:.2f})")
