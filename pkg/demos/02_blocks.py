"""The building blocks: dense blocks, the two attention gates and the residual modules."""

import numpy as np

from twostage_denoise import blocks
from twostage_denoise.network import param_count, parameters
from twostage_denoise.tensor import Tensor

rng = np.random.default_rng(1)
x = Tensor(rng.standard_normal((1, 16, 12, 12)).astype(np.float32))

# %% dense block: each of the 8 layers sees the input plus every earlier output
db = blocks.init_dense_block(rng, 16, 8)
print("layer input widths:", [l.in_ch for l in db.layers], "fusion:", db.fusion.in_ch, "->", db.fusion.out_ch)
print("dense block out:", blocks.dense_block(x, db).shape)

# %% hybrid dilated variant, rates chosen so neighbouring layers do not grid
hd = blocks.init_dense_block(rng, 16, 8, blocks.DEFAULT_DILATIONS)
print("rates:", hd.dilations, "params:", param_count(hd))

# %% attention gates stay inside (0, 1)
sab = blocks.init_spatial_attention(rng)
cab = blocks.init_channel_attention(rng, 16, ratio=8)
amap = blocks.spatial_attention_map(x, sab).data
vec = blocks.channel_attention_vector(x, cab).data
print("spatial map range %.3f..%.3f, channel gate range %.3f..%.3f" % (amap.min(), amap.max(), vec.min(), vec.max()))

# %% residual modules reduce to the identity when the inner block is zero
rd = blocks.init_rdam(rng, 16, 8)
for t in parameters(rd.dense):
    t.data[...] = 0
print("rdam(x) == x with a zero block:", np.array_equal(blocks.rdam(x, rd).data, x.data))
