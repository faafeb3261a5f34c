"""Desk-scale experiment drivers shared by the harness, demos and acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import RING_SIGMA, gen_synth_mixture
from .metrics import RingPosterior, inception_style_score, intra_fids, mode_coverage
from .models import ModelSpec, build_discriminator, build_generator, generator_forward
from .tensor import Rng, Tensor
from .training import LossConfig, Trainer, TrainSchedule


@dataclass
class RingResult:
    variant: str
    seed: int
    intra_fid: np.ndarray       # per class
    coverage: np.ndarray        # per class fraction of uniform-class samples near each center
    score: float

    @property
    def mean_intra_fid(self) -> float:
        return float(self.intra_fid.mean())

    def covers_all(self, threshold: float = 0.02) -> bool:
        return bool((self.coverage >= threshold).all())


def class_sampler(G, z_dim: int, rng: Rng, dtype=np.float32):
    """``sample(c, n)`` drawing n eval-mode generator outputs of class c."""
    def sample(c: int, n: int) -> np.ndarray:
        G.eval()
        with T.no_grad():
            z = Tensor(rng.normal((n, z_dim)), dtype=dtype)
            return generator_forward(G, z, np.full(n, c)).data
    return sample


def evaluate_ring(G, data, z_dim: int, rng: Rng, n_gen: int = 1000) -> dict:
    post = RingPosterior(data.centers, data.sigma)
    sample = class_sampler(G, z_dim, rng)
    fids = intra_fids(sample, data.x, data.labels, data.n_classes, n_gen, post)
    C = data.n_classes
    labels = np.repeat(np.arange(C), n_gen // C)
    G.eval()
    with T.no_grad():
        xs = generator_forward(G, Tensor(rng.normal((len(labels), z_dim))), labels).data
    cov = mode_coverage(xs, data.centers, 3 * data.sigma)
    return {"intra_fid": fids, "coverage": cov, "score": inception_style_score(post.probs(xs))}


def ring_spec(variant: str, width: int = 64, n_classes: int = 8) -> ModelSpec:
    return ModelSpec(kind="vector", variant=variant, n_classes=n_classes, g_width=width,
                     d_width=width, embed_dim=width)


def run_ring(variant: str, seed: int, updates: int = 20000, width: int = 64,
             n_classes: int = 8, n_per_class: int = 2000, batch_size: int = 64,
             lam_cls: float = 1.0, n_gen: int = 1000) -> RingResult:
    """Train one variant on the ring mixture and evaluate it."""
    rng = Rng(seed)
    # disjoint streams: 1 data, 2 init, 3 training, 4 evaluation
    data = gen_synth_mixture(rng.spawn(1), n_classes, n_per_class, "vector2d")
    spec = ring_spec(variant, width, n_classes)
    model_rng = rng.spawn(2)
    G = build_generator(model_rng, spec)
    D = build_discriminator(model_rng, spec)
    decay = int(round(updates * 0.75))
    schedule = TrainSchedule(total=updates, decay_start=decay, batch_size=batch_size)
    trainer = Trainer(G, D, data, schedule, rng.spawn(3), LossConfig(lam_cls=lam_cls),
                      z_dim=spec.z_dim)
    trainer.run(log_every=0)
    ev = evaluate_ring(G, data, spec.z_dim, rng.spawn(4), n_gen)
    return RingResult(variant, seed, ev["intra_fid"], ev["coverage"], ev["score"])


__all__ = ["RingResult", "class_sampler", "evaluate_ring", "ring_spec", "run_ring", "RING_SIGMA"]
