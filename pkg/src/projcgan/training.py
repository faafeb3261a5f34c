"""Adversarial objectives, Adam, update scheduling and checkpoints."""

from __future__ import annotations

import contextlib
import io
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .layers import Module, one_hot
from .tensor import Rng, Tensor


class TrainingDiverged(FloatingPointError):
    pass


class ContractError(RuntimeError):
    pass


# -- losses ------------------------------------------------------------------------

def standard_adversarial_d_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """-E log sigmoid(d_real) - E log(1 - sigmoid(d_fake)), in log-sigmoid form."""
    return -(T.mean(T.log_sigmoid(d_real)) + T.mean(T.log_sigmoid(-d_fake)))


def standard_adversarial_g_loss(d_fake: Tensor) -> Tensor:
    """Non-saturating generator objective."""
    return -T.mean(T.log_sigmoid(d_fake))


def hinge_d_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    return T.mean(T.relu(1.0 - d_real)) + T.mean(T.relu(1.0 + d_fake))


def hinge_g_loss(d_fake: Tensor) -> Tensor:
    return -T.mean(d_fake)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    mask = Tensor(one_hot(labels, logits.shape[1], dtype=logits.dtype), dtype=logits.dtype)
    return -T.mean(T.tsum(T.log_softmax(logits, 1) * mask, 1))


def acgan_d_loss(adv_real, adv_fake, cls_real, cls_fake, y_real, y_fake, lam_cls=1.0):
    loss = hinge_d_loss(adv_real, adv_fake)
    if lam_cls:
        loss = loss + lam_cls * (cross_entropy(cls_real, y_real) + cross_entropy(cls_fake, y_fake))
    return loss


def acgan_g_loss(adv_fake, cls_fake, y_fake, lam_cls=1.0):
    loss = hinge_g_loss(adv_fake)
    if lam_cls:
        loss = loss + lam_cls * cross_entropy(cls_fake, y_fake)
    return loss


def acgan_losses(adv_logits, class_logits, labels, is_real, lam_cls=1.0):
    """(d_loss, g_loss) for one mixed batch; ``is_real`` flags the real rows."""
    is_real = np.asarray(is_real, dtype=bool)
    labels = np.asarray(labels)
    r, f = np.flatnonzero(is_real), np.flatnonzero(~is_real)
    adv_r, adv_f = T.take_rows(adv_logits, r), T.take_rows(adv_logits, f)
    cls_r, cls_f = T.take_rows(class_logits, r), T.take_rows(class_logits, f)
    d = acgan_d_loss(adv_r, adv_f, cls_r, cls_f, labels[r], labels[f], lam_cls)
    g = acgan_g_loss(adv_f, cls_f, labels[f], lam_cls)
    return d, g


def aux_classifier_g_loss(d_fake: Tensor, class_logits: Tensor, labels, lam_aux: float,
                          classifier: Module | None = None) -> Tensor:
    """-E[d_fake - lam_aux * CE(classifier(G(z, y)), y)] with a frozen classifier."""
    if classifier is not None and any(p.requires_grad for p in classifier.parameters()):
        raise ContractError("auxiliary classifier must be frozen")
    if not lam_aux:
        return hinge_g_loss(d_fake)
    return -(T.mean(d_fake) - lam_aux * cross_entropy(class_logits, labels))


# -- optimizer & schedule -----------------------------------------------------------

class Adam:
    """Bias-corrected Adam over a fixed list of parameters.

    Moments live in flat buffers so one update is a handful of vector ops
    regardless of how many parameter tensors there are.
    """

    def __init__(self, params, lr=2e-4, beta1=0.0, beta2=0.9, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self._layout()
        self.t = 0

    def _layout(self):
        sizes = [p.size for p in self.params]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        dtype = self.params[0].dtype if self.params else np.float32
        self.m = np.zeros(self.offsets[-1], dtype=dtype)
        self.v = np.zeros(self.offsets[-1], dtype=dtype)

    def step(self, grads=None, lr=None):
        lr = self.lr if lr is None else lr
        if grads is None:
            grads = T.parameters_grad(self.params)
        g = np.concatenate([np.ravel(x) for x in grads]).astype(self.m.dtype, copy=False)
        if not np.all(np.isfinite(g)):
            bad = [i for i, x in enumerate(grads) if not np.all(np.isfinite(x))]
            shapes = [self.params[i].shape for i in bad]
            raise TrainingDiverged(f"non-finite gradient for parameters of shape {shapes}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        self.m *= b1
        self.m += (1 - b1) * g
        self.v *= b2
        self.v += (1 - b2) * (g * g)
        step = (lr / c1) * self.m / (np.sqrt(self.v / c2) + self.eps)
        for p, a, b in zip(self.params, self.offsets[:-1], self.offsets[1:]):
            p.data = p.data - step[a:b].reshape(p.shape).astype(p.dtype, copy=False)

    def state(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array([self.t], dtype=np.float32)}
        for i, (a, b) in enumerate(zip(self.offsets[:-1], self.offsets[1:])):
            out[f"{prefix}.m.{i}"] = self.m[a:b]
            out[f"{prefix}.v.{i}"] = self.v[a:b]
        return out

    def load_state(self, entries: dict, prefix: str):
        self.t = int(entries[f"{prefix}.t"][0])
        for i, (a, b) in enumerate(zip(self.offsets[:-1], self.offsets[1:])):
            self.m[a:b] = entries[f"{prefix}.m.{i}"].ravel()
            self.v[a:b] = entries[f"{prefix}.v.{i}"].ravel()


def adam_step(state: Adam, params, grads, lr):
    params = list(params)
    if [id(p) for p in params] != [id(p) for p in state.params]:
        raise ValueError("parameters do not match the optimizer state")
    state.step(grads, lr)
    return params


@dataclass
class TrainSchedule:
    total: int = 20000          # generator updates
    decay_start: int = 15000
    n_dis: int = 5
    batch_size: int = 64
    lr: float = 2e-4

    def __post_init__(self):
        if self.decay_start > self.total:
            raise ValueError("decay_start must not exceed total")
        if self.n_dis < 1:
            raise ValueError("n_dis must be at least 1")


def lr_at(schedule: TrainSchedule, it: int) -> float:
    """Constant until decay_start, then linear to zero at total."""
    if it < 0 or it > schedule.total:
        raise ValueError(f"iteration {it} outside [0, {schedule.total}]")
    if it <= schedule.decay_start:
        return schedule.lr
    return schedule.lr * (schedule.total - it) / (schedule.total - schedule.decay_start)


# -- checkpoints --------------------------------------------------------------------

MAGIC = b"PJGN"
VERSION = 1


def save_checkpoint(path, iteration: int, rng: Rng, entries: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", VERSION, iteration))
    blob = rng.state_blob()
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(entries)))
    for name in sorted(entries):
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        T.write_tensor(buf, entries[name])
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    """Returns (iteration, rng, entries)."""
    f = io.BytesIO(Path(path).read_bytes())
    if f.read(4) != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, iteration = struct.unpack("<IQ", f.read(12))
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (n,) = struct.unpack("<I", f.read(4))
    rng = Rng.from_blob(f.read(n))
    (count,) = struct.unpack("<I", f.read(4))
    entries = {}
    for _ in range(count):
        (k,) = struct.unpack("<I", f.read(4))
        name = f.read(k).decode()
        entries[name] = T.read_tensor(f)
    return iteration, rng, entries


# -- training loop --------------------------------------------------------------------

@contextlib.contextmanager
def frozen(module: Module, params=None):
    params = module.parameters() if params is None else params
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield module
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


@dataclass
class LossConfig:
    kind: str = "hinge"             # hinge | standard
    lam_cls: float = 1.0            # acgan classification weight
    lam_aux: float = 0.0            # auxiliary frozen-classifier weight
    aux_fraction: float = 0.0       # final fraction of updates using the aux loss
    aux_classifier: Module | None = None


@dataclass
class LogRow:
    iter: int
    wall_s: float
    d_loss: float
    g_loss: float
    metric_name: str = ""
    metric_value: float | None = None

    def csv(self, wall: bool = True) -> str:
        val = "" if self.metric_value is None else repr(float(self.metric_value))
        w = f"{self.wall_s:.3f}" if wall else "0"
        return f"{self.iter},{w},{self.d_loss!r},{self.g_loss!r},{self.metric_name},{val}"


CSV_HEADER = "iter,wall_s,d_loss,g_loss,metric_name,metric_value"


class Trainer:
    """Alternating hinge-loss GAN updates with n_dis discriminator steps per G step.

    ``data.sample(rng, n)`` returns (x, condition); ``data.sample_condition(rng, n)``
    returns conditions for fake batches. Conditions are integer labels for class
    tasks and low-resolution images for super-resolution.
    """

    def __init__(self, G: Module, D: Module, data, schedule: TrainSchedule, rng: Rng,
                 losses: LossConfig | None = None, beta1=0.0, beta2=0.9, z_dim: int = 16):
        self.G, self.D, self.data = G, D, data
        self.schedule = schedule
        self.rng = rng
        self.losses = losses or LossConfig()
        self.z_dim = z_dim
        self.g_params = G.parameters()
        self.d_params = D.parameters()
        self.opt_g = Adam(self.g_params, schedule.lr, beta1, beta2)
        self.opt_d = Adam(self.d_params, schedule.lr, beta1, beta2)
        self.iteration = 0
        self.d_steps = 0
        self.log: list[LogRow] = []
        self._t0 = time.perf_counter()
        self.acgan = getattr(D, "variant", "") == "acgan"

    # -- single updates --
    def _z(self, n):
        return Tensor(self.rng.normal((n, self.z_dim)))

    def _d_out(self, x, c):
        out = self.D(x, c)
        return out if self.acgan else (out, None)

    def d_step(self, lr: float) -> float:
        B = self.schedule.batch_size
        x_real, c_real = self.data.sample(self.rng, B)
        c_fake = self.data.sample_condition(self.rng, B)
        z = self._z(B)
        with T.no_grad():
            x_fake = self.G(z, c_fake)
        x_all = T.concat([Tensor(x_real), x_fake.detach()], axis=0)
        c_all = np.concatenate([np.asarray(c_real), np.asarray(c_fake)], axis=0)
        for p in self.d_params:
            p.grad = None
        adv, cls = self._d_out(x_all, c_all)
        real, fake = np.arange(B), np.arange(B, 2 * B)
        d_real, d_fake = T.take_rows(adv, real), T.take_rows(adv, fake)
        if self.acgan:
            loss = acgan_d_loss(d_real, d_fake, T.take_rows(cls, real), T.take_rows(cls, fake),
                                c_real, c_fake, self.losses.lam_cls)
        elif self.losses.kind == "standard":
            loss = standard_adversarial_d_loss(d_real, d_fake)
        else:
            loss = hinge_d_loss(d_real, d_fake)
        self._guard(loss, "discriminator")
        loss.backward()
        self.opt_d.step(lr=lr)
        self.d_steps += 1
        return loss.item()

    def g_step(self, lr: float) -> tuple[float, float | None]:
        B = self.schedule.batch_size
        c = self.data.sample_condition(self.rng, B)
        z = self._z(B)
        for p in self.g_params:
            p.grad = None
        cls_loss = None
        with frozen(self.D, self.d_params):
            x_fake = self.G(z, c)
            adv, cls = self._d_out(x_fake, c)
            if self.acgan:
                loss = hinge_g_loss(adv)
                if self.losses.lam_cls:
                    ce = cross_entropy(cls, c)
                    cls_loss = ce.item()
                    loss = loss + self.losses.lam_cls * ce
            elif self.losses.kind == "standard":
                loss = standard_adversarial_g_loss(adv)
            elif self._aux_active():
                clf = self.losses.aux_classifier
                loss = aux_classifier_g_loss(adv, clf.logits(x_fake), c, self.losses.lam_aux, clf)
            else:
                loss = hinge_g_loss(adv)
        self._guard(loss, "generator")
        loss.backward()
        self.opt_g.step(lr=lr)
        return loss.item(), cls_loss

    def _aux_active(self) -> bool:
        lc = self.losses
        if not lc.lam_aux or lc.aux_classifier is None:
            return False
        start = self.schedule.total - int(round(lc.aux_fraction * self.schedule.total))
        return self.iteration >= start

    @staticmethod
    def _guard(loss: Tensor, who: str):
        if not np.isfinite(loss.data).all():
            raise TrainingDiverged(f"{who} loss became non-finite")

    def step(self):
        """One generator update preceded by n_dis discriminator updates."""
        lr = lr_at(self.schedule, self.iteration)
        self.G.train()
        self.D.train()
        d_losses = [self.d_step(lr) for _ in range(self.schedule.n_dis)]
        g_loss, cls_loss = self.g_step(lr)
        self.iteration += 1
        return float(np.mean(d_losses)), g_loss, cls_loss

    def run(self, until: int | None = None, log_every: int = 100,
            evaluate: Callable[["Trainer"], dict] | None = None, eval_every: int = 0,
            on_checkpoint: Callable[["Trainer"], None] | None = None, checkpoint_every: int = 0):
        until = self.schedule.total if until is None else until
        while self.iteration < until:
            d_loss, g_loss, cls_loss = self.step()
            it = self.iteration
            if log_every and it % log_every == 0:
                self._record(it, d_loss, g_loss)
                if cls_loss is not None:
                    self._record(it, d_loss, g_loss, "cls_loss", cls_loss)
            if evaluate is not None and eval_every and it % eval_every == 0:
                for name, value in evaluate(self).items():
                    self._record(it, d_loss, g_loss, name, value)
            if on_checkpoint is not None and checkpoint_every and it % checkpoint_every == 0:
                on_checkpoint(self)
        return self

    def _record(self, it, d_loss, g_loss, name="", value=None):
        self.log.append(LogRow(it, time.perf_counter() - self._t0, d_loss, g_loss, name, value))

    # -- persistence --
    def entries(self) -> dict[str, np.ndarray]:
        out = {f"G.{k}": v for k, v in self.G.state_dict().items()}
        out.update({f"D.{k}": v for k, v in self.D.state_dict().items()})
        out.update(self.opt_g.state("opt_g"))
        out.update(self.opt_d.state("opt_d"))
        return out

    def save(self, path) -> None:
        save_checkpoint(path, self.iteration, self.rng, self.entries())

    def load(self, path) -> None:
        iteration, rng, entries = load_checkpoint(path)
        self.G.load_state_dict({k[2:]: v for k, v in entries.items() if k.startswith("G.")})
        self.D.load_state_dict({k[2:]: v for k, v in entries.items() if k.startswith("D.")})
        self.opt_g.load_state(entries, "opt_g")
        self.opt_d.load_state(entries, "opt_d")
        self.iteration = iteration
        self.rng = rng


def train_loop(G, D, data, schedule: TrainSchedule, rng: Rng, losses: LossConfig | None = None,
               **kwargs) -> Trainer:
    run_kwargs = {k: kwargs.pop(k) for k in list(kwargs)
                  if k in ("log_every", "evaluate", "eval_every", "on_checkpoint",
                           "checkpoint_every")}
    return Trainer(G, D, data, schedule, rng, losses, **kwargs).run(**run_kwargs)


# -- tabular optimal discriminator ------------------------------------------------------

@dataclass
class TabularResult:
    f: np.ndarray
    log_ratio: np.ndarray
    r_y_given_x: np.ndarray
    r_x: np.ndarray
    steps: int
    losses: list = field(default_factory=list)


def tabular_optimal_discriminator(q: np.ndarray, p: np.ndarray, lr: float = 4.0,
                                  tol: float = 1e-7, max_steps: int = 200_000) -> TabularResult:
    """Minimize the standard discriminator loss over a free table f(x, y).

    Tables are indexed [x, y]. The gradient of each cell is scaled by
    1 / (q + p), a diagonal preconditioner that keeps light cells from
    stalling; the fixed point is unchanged.
    """
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q.shape != p.shape:
        raise ValueError("q and p tables differ in shape")
    if (q <= 0).any() or (p <= 0).any():
        raise ValueError("zero-probability cell")
    for name, t in (("q", q), ("p", p)):
        if abs(t.sum() - 1) > 1e-9:
            raise ValueError(f"{name} does not sum to 1")
    f = Tensor(np.zeros_like(q), requires_grad=True, dtype=np.float64)
    qt, pt = Tensor(q, dtype=np.float64), Tensor(p, dtype=np.float64)
    precond = 1.0 / (q + p)
    losses = []
    step = 0
    for step in range(1, max_steps + 1):
        f.grad = None
        loss = -(T.tsum(qt * T.log_sigmoid(f)) + T.tsum(pt * T.log_sigmoid(-f)))
        loss.backward()
        g = f.grad * precond
        f.data = f.data - lr * g
        if step % 100 == 0:
            losses.append(loss.item())
        if np.abs(g).max() < tol:
            break
    r_yx = np.log((q / q.sum(1, keepdims=True)) / (p / p.sum(1, keepdims=True)))
    r_x = np.log(q.sum(1) / p.sum(1))[:, None] * np.ones_like(q)
    return TabularResult(f.data.copy(), np.log(q / p), r_yx, r_x, step, losses)
