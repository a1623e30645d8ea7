"""
Two-pass matching with repositioning
====================================

Layer 1 matches with the input positions and fits a rigid transform from its
soft matches.  The source is then moved by that transform, so in layer 2 the
positional term of the score agrees with the true correspondence.
"""

# %%
import numpy as np

from posmatch.geometry import rotation_angle
from posmatch.metrics import inlier_ratio
from posmatch.pipeline import PipelineWeights, run_pipeline
from posmatch.synth import coordinate_features, repetitive_features, synth_rigid_pair

d = 96
pair = synth_rigid_pair(seed=4, n_points=300, overlap_fraction=0.8, noise_sigma=0.01)
fs = coordinate_features(pair.S_canonical, d, seed=4, bandwidth=0.1)
ft = coordinate_features(pair.T_canonical, d, seed=4, bandwidth=0.1)

out = run_pipeline(pair.S, pair.T, fs, ft, PipelineWeights.identity(d))
for li, (T, lo) in enumerate(zip(out.transforms, out.layers), 1):
    p, q = lo.matches.points(pair.S, pair.T)
    print(f"layer {li}: rotation error {np.degrees(rotation_angle(T.R.T @ pair.transform.R)):.3f} deg, "
          f"{len(lo.matches)} matches, IR {inlier_ratio(p, q, pair.transform, 0.1):.3f}")

# %%
# With repeated structure the descriptors alone are ambiguous one period
# apart; the repositioned positions in layer 2 help separate the copies.
fs = repetitive_features(pair.S_canonical, d, seed=4)
ft = repetitive_features(pair.T_canonical, d, seed=4)
for enabled in (False, True):
    out = run_pipeline(pair.S, pair.T, fs, ft, PipelineWeights.identity(d), reposition_enabled=enabled)
    p, q = out.matches.points(pair.S, pair.T)
    print(f"repositioning {'on ' if enabled else 'off'}: layer-2 IR {inlier_ratio(p, q, pair.transform, 0.1):.3f}")
