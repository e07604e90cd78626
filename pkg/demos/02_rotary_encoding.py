#!/usr/bin/env python3
# Rotary position encoding in action: rotations keep token norms, and dot
# products of encoded tokens depend only on the relative grid offset.

import numpy as np

from slimmatch.attention import rope_encode
from slimmatch.tensor import DiffTensor

rng = np.random.default_rng(1)
channels = 16

f = rng.standard_normal((1, channels))
g = rng.standard_normal((1, channels))

pos_i = np.array([[3, 7]])   # (row, col)
pos_j = np.array([[9, 2]])

fe = rope_encode(DiffTensor(f), pos_i).data
ge = rope_encode(DiffTensor(g), pos_j).data

print("norm before:", np.linalg.norm(f), " after:", np.linalg.norm(fe))

lhs = float((fe * ge).sum())
rhs = float((f * rope_encode(DiffTensor(g), pos_j - pos_i).data).sum())
print("<enc(f,i), enc(g,j)>          =", lhs)
print("<f, enc(g, j-i)>              =", rhs)
print("difference:", abs(lhs - rhs))

# shifting both tokens by the same offset leaves the dot product unchanged
shift = np.array([[5, 5]])
fe2 = rope_encode(DiffTensor(f), pos_i + shift).data
ge2 = rope_encode(DiffTensor(g), pos_j + shift).data
print("dot product after common shift:", float((fe2 * ge2).sum()))
