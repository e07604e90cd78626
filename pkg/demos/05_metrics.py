#!/usr/bin/env python3
# The evaluation toolbox: DLT homography estimation, pose error, AUC, MMA, CCM.

import numpy as np

from slimmatch.geometry import (
    auc_at_thresholds,
    ccm,
    homography_apply_batch,
    homography_dlt,
    mma,
    pose_error,
)
from slimmatch.synth import sample_homography

rng = np.random.default_rng(3)

# estimate a homography back from noiseless correspondences
h_true = sample_homography(64, 64, seed=5)
pts = rng.uniform(0, 64, (8, 2))
h_est = homography_dlt(pts, homography_apply_batch(h_true, pts))
print("max |H_est - H_true|:", np.abs(h_est - h_true).max())

# pose error: a 90 degree rotation about z
rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
t = np.array([1.0, 0.0, 0.0])
delta = pose_error(np.eye(3), t, rz, t)
print("rotation error:", delta.rotation_deg, "deg; max:", delta.max_deg)

# AUC over a toy error list
print("pose AUC:", auc_at_thresholds([2.0, 7.0, 12.0, 40.0]))

# MMA: two pairs, one perfect and one noisy
pa = rng.uniform(0, 64, (20, 2))
noisy = homography_apply_batch(h_true, pa) + rng.normal(0, 2.0, (20, 2))
exact = homography_apply_batch(h_true, pa)
scores = mma([(pa, exact), (pa, noisy)], [h_true, h_true], thresholds=(1, 3, 5))
print("MMA:", scores)

# CCM: corner agreement between true and estimated homographies
print("CCM:", ccm([h_true], [h_est], [(64, 64)]))
