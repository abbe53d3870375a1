"""
Routing inside one adaptive attention layer
===========================================

Every (stream, head, token) slice gets its own top-2 mixture over the
contextualization experts. Here we look at a single untrained layer.
"""

import numpy as np

from moce.attention import init_attention
from moce.contextualization import init_pool
from moce.router import ada_msha_forward, init_router, topk_gate
from moce.tensor import Tensor

rng = np.random.default_rng(0)
d_model, heads, max_delta = 32, 4, 5
d_k = d_model // heads

attn = init_attention(d_model, heads, rng)
pool = init_pool(max_delta, d_k, rng)
router = init_router(d_k, max_delta + 1, rng, top_k=2)
print("expert radii:", pool.radii)

# the gate softmaxes the two largest probabilities again
g = topk_gate([0.5, 0.3, 0.1, 0.05, 0.03, 0.02], 2)
print("indices", g.indices, "weights", np.round(g.weights, 4))

x = Tensor(rng.standard_normal((1, 7, d_model)).astype(np.float32))
y, gate = ada_msha_forward(x, attn, pool, router, return_gate=True)
print("output shape:", y.shape)

# indices are (stream, batch, head, position, k)
for s, name in enumerate("qkv"):
    print(name, "head 0 picks per token:", gate.indices[s, 0, 0].tolist())
