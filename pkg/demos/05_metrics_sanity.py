"""Metric sanity checks with known answers."""

import numpy as np

from projcgan.data import blob_images
from projcgan.metrics import GaussianStats, fid, inception_style_score, ms_ssim
from projcgan.resize import downsample_box, upsample_bicubic, upsample_bilinear
from projcgan.tensor import Rng
from projcgan.training import tabular_optimal_discriminator

one = lambda mu, var: GaussianStats(np.array([mu]), np.array([[var]]), 2)
print("FID N(0,1) vs N(1,1):", fid(one(0, 1), one(1, 1)))
print("FID N(0,1) vs N(0,4):", fid(one(0, 1), one(0, 4)), " (sigma gap squared)")

print("score, uniform predictions over 10 classes:", inception_style_score(np.full((50, 10), 0.1)))
print("score, balanced one-hot over 10 classes:   ", inception_style_score(np.tile(np.eye(10), (5, 1))))

imgs, _ = blob_images(Rng(0), 8, 4, size=64, noise=0.0, dtype=np.float64)
print("\nmean MS-SSIM of 32 blob images after 4x box down / up:")
for name, up in (("bilinear", upsample_bilinear), ("bicubic", upsample_bicubic)):
    vals = [ms_ssim(x, np.clip(up(downsample_box(x, 4), 4), -1, 1), data_range=(-1, 1))
            for x in imgs]
    print(f"  {name:9s}{np.mean(vals):.4f}")
print(f"  self     {ms_ssim(imgs[0], imgs[0], data_range=(-1, 1)):.4f}")

# the optimal discriminator of the standard loss is log q/p, which splits into
# a conditional ratio plus a marginal ratio
rng = np.random.default_rng(0)
q, p = rng.uniform(0.05, 1, (8, 4)), rng.uniform(0.05, 1, (8, 4))
q, p = q / q.sum(), p / p.sum()
res = tabular_optimal_discriminator(q, p)
print(f"\ntabular optimum vs log(q/p): max error {np.abs(res.f - res.log_ratio).max():.1e} "
      f"after {res.steps} steps")
print(f"log r(y|x) + log r(x) - log(q/p): {np.abs(res.r_y_given_x + res.r_x - res.log_ratio).max():.1e}")
