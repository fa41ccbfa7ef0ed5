"""Overfit a tiny two-stage model on one noisy patch, then denoise it.

Takes a few minutes on one CPU core.
"""

import sys
import time

import numpy as np

from twostage_denoise.losses import LossConfig
from twostage_denoise.metrics import psnr
from twostage_denoise.network import ModelConfig, build, forward, param_count
from twostage_denoise.tensor import Tensor, no_grad
from twostage_denoise.trainer import Schedule, TrainConfig, train

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 2000

# %% one clean 64x64 patch and a fixed noisy copy at sigma 25
yy, xx = np.mgrid[0:64, 0:64] / 63
clean = np.clip(0.2 + 0.3 * xx + 0.3 * np.exp(-((xx - 0.4) ** 2 + (yy - 0.4) ** 2) / 0.05), 0, 1)
clean = clean[None, None].astype(np.float32)
noisy = (clean + np.random.default_rng(0).standard_normal(clean.shape) * 25 / 255).astype(np.float32)

# %% tiny model: one module per stage, no resampling
params = build(ModelConfig(k=1, m=0, width=16, growth=8), seed=0)
print("parameters:", param_count(params))
cfg = TrainConfig(total_iterations=iters, batch=1, patch=64,
                  schedule=Schedule("step", 1e-3, period=iters), loss=LossConfig("mse"), log_every=200)


def batches():
    while True:
        yield Tensor(noisy), Tensor(clean)


t0 = time.time()
result = train(params, batches(), cfg)
for it, loss, lr in result.log:
    print(f"iter {it:5d}  loss {loss:.3e}  lr {lr:.1e}")

# %% both stage outputs against the clean patch
with no_grad():
    x1, x2 = forward(params, Tensor(noisy))
print(f"noisy {psnr(noisy, clean):.2f} dB, stage 1 {psnr(x1.data, clean):.2f} dB, "
      f"stage 2 {psnr(x2.data, clean):.2f} dB  ({time.time() - t0:.0f} s)")
