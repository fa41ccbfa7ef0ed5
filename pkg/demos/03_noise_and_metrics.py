"""Synthetic noise levels and how PSNR / SSIM respond to them."""

import numpy as np

from twostage_denoise.data import Image, add_awgn
from twostage_denoise.metrics import psnr, ssim

yy, xx = np.mgrid[0:256, 0:256] / 255
clean = Image((0.25 + 0.5 * xx * yy + 0.2 * np.sin(6 * xx))[None].astype(np.float32))

# %% sigma is quoted on the 0-255 scale; noisy values are not clipped
for sigma in (15, 25, 50):
    noisy = add_awgn(clean, sigma, np.random.default_rng(sigma))
    closed = 20 * np.log10(255 / sigma)
    print(f"sigma {sigma:2d}: psnr {psnr(noisy, clean):6.2f} dB (closed form {closed:.2f}), ssim {ssim(noisy, clean):.4f}")

# %% one grey level of error everywhere
print("1/255 offset:", round(psnr(clean.pixels + 1 / 255, clean), 2), "dB")
print("identical images:", psnr(clean, clean), "(sentinel)")
