"""
Rigid fitting: weighted Procrustes and RANSAC
=============================================

Weighted Kabsch gives the least-squares rotation and translation for weighted
correspondences.  With outliers, RANSAC over 3-point samples finds the
inlier set first.
"""

# %%
import numpy as np

from posmatch.geometry import rotation_angle
from posmatch.procrustes import weighted_cost, weighted_kabsch
from posmatch.ransac import ransac_points
from posmatch.synth import random_rigid

rng = np.random.default_rng(2)
gt = random_rigid(rng, max_translation=1.0)
P = rng.uniform(-1, 1, (200, 3))
Q = gt.apply(P) + rng.normal(scale=0.005, size=P.shape)

fit = weighted_kabsch(P, Q)
print("clean data: rotation error (deg)", np.degrees(rotation_angle(fit.R.T @ gt.R)))

# %%
# Replace 40% of targets by random points.
Q_bad = Q.copy()
Q_bad[:80] = rng.uniform(-2, 2, (80, 3))
naive = weighted_kabsch(P, Q_bad)
robust, inliers = ransac_points(P, Q_bad, iterations=1000, inlier_sigma=0.05, seed=0)
print("naive fit error (deg) :", np.degrees(rotation_angle(naive.R.T @ gt.R)))
print("RANSAC fit error (deg):", np.degrees(rotation_angle(robust.R.T @ gt.R)), "inliers:", inliers.sum())

# %%
# The fit is the minimiser of the weighted squared error.
w = rng.uniform(0.1, 1, 200)
best = weighted_kabsch(P, Q, w)
print("cost at fit:", weighted_cost(best, P, Q, w), " at GT:", weighted_cost(gt, P, Q, w))
