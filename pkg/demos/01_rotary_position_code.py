"""
Rotary position code in 3-D
===========================

A feature vector is rotated, block by block, by angles proportional to the
point's coordinates.  The dot product of two encoded vectors then depends only
on the *difference* of their positions.
"""

# %%
import numpy as np

from posmatch.rope import EncodingConfig, PositionCode, dense_theta, encode, relative_dot, theta_frequencies

cfg = EncodingConfig(d=96)
print("frequencies (first 4):", theta_frequencies(cfg)[:4])

# %%
# Encoding is a rotation, so it keeps lengths.
rng = np.random.default_rng(0)
x = rng.normal(size=96)
p = np.array([0.3, -1.2, 2.0])
print("norm before / after:", np.linalg.norm(x), np.linalg.norm(encode(p, x, cfg)))

# %%
# Relative identity: <Theta(p) a, Theta(q) b> == a^T Theta(q - p) b.
a, b = rng.normal(size=(2, 96))
q = np.array([1.0, 0.5, -0.4])
print("encoded dot     :", relative_dot(a, p, b, q, cfg))
print("relative form   :", a @ dense_theta(q - p, cfg) @ b)
print("shifted by (5,5,5):", relative_dot(a, p + 5, b, q + 5, cfg))

# %%
# Batches go through ``PositionCode``, which precomputes the cos/sin tables.
P = rng.normal(size=(1000, 3))
X = rng.normal(size=(1000, 96))
code = PositionCode(P, cfg)
print("batched == single:", np.allclose(code.apply(X)[7], encode(P[7], X[7], cfg)))
