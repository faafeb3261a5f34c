"""Projection vs hidden-concat discriminators on the 8-class ring mixture.

A shortened schedule (the acceptance runs use 20K updates). Writes a scatter
plot of class-conditional samples per variant to demo_out/.
"""

import sys
from pathlib import Path

import numpy as np

from projcgan import tensor as T
from projcgan.data import gen_synth_mixture
from projcgan.experiments import evaluate_ring, ring_spec
from projcgan.models import build_discriminator, build_generator, generator_forward
from projcgan.plot import scatter_plot
from projcgan.tensor import Rng, Tensor
from projcgan.training import LossConfig, Trainer, TrainSchedule

updates = int(sys.argv[1]) if len(sys.argv) > 1 else 1500
out = Path("demo_out")
out.mkdir(exist_ok=True)

for variant in ("projection", "concat_hidden"):
    rng = Rng(0)
    data = gen_synth_mixture(rng.spawn(1), 8, 2000, "vector2d")
    spec = ring_spec(variant)
    model_rng = rng.spawn(2)
    G, D = build_generator(model_rng, spec), build_discriminator(model_rng, spec)
    schedule = TrainSchedule(total=updates, decay_start=int(updates * 0.75), batch_size=64)
    Trainer(G, D, data, schedule, rng.spawn(3), LossConfig(), z_dim=spec.z_dim).run(log_every=0)

    ev = evaluate_ring(G, data, spec.z_dim, rng.spawn(4))
    print(f"{variant:14s} mean intra-FID {ev['intra_fid'].mean():.4f}  "
          f"min mode share {ev['coverage'].min():.3f}  score {ev['score']:.3f}")

    labels = np.repeat(np.arange(8), 100)
    G.eval()
    with T.no_grad():
        xs = generator_forward(G, Tensor(rng.spawn(5).normal((len(labels), spec.z_dim))), labels).data
    scatter_plot(out / f"ring_{variant}.png", xs, labels, "x", "y", f"{variant}, {updates} updates")

print(f"scatter plots in {out}/")
