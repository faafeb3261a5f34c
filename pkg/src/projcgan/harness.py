"""Experiment commands: train, sweep, eval, morph and superres.

Every command takes a RunConfig, writes into ``cfg.out_dir`` and returns a
small summary dict. Random streams are spawned from ``cfg.seed`` with fixed
keys so that any artifact can be regenerated from the echoed config.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data import Dataset, SRDataset, blob_images, gen_synth_mixture, load_cifar_binary, sr_pairs
from .experiments import class_sampler
from .imageio import make_grid, write_image
from .metrics import (FeatureExtractor, RingPosterior, accuracy, fid, gaussian_stats,
                      inception_style_score_splits, intra_fid, mc_ensemble_predict, ms_ssim,
                      train_classifier)
from .models import build_discriminator, build_generator, generator_forward, morph_generator
from .plot import line_plot, scatter_plot
from .resize import upsample
from .tensor import Rng, Tensor
from .training import CSV_HEADER, Trainer, load_checkpoint

# spawn keys for the per-run random streams
DATA, MODEL, TRAIN, PANEL, CLASSIFIER, TEST, SR_Z = 1, 2, 3, 5, 6, 7, 8
EVAL_BASE = 1_000_000


def thread_count() -> int | None:
    v = os.environ.get("PROJCGAN_THREADS", "").strip()
    return int(v) if v else None


def single_threaded() -> bool:
    return thread_count() == 1


def _metadata(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "seed": cfg.seed, "threads": thread_count(),
            "numpy": np.__version__}


def _prepare_out(cfg: RunConfig, command: str) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.txt")
    (out / "meta.json").write_text(json.dumps(_metadata(cfg, command), indent=1) + "\n")
    return out


# -- datasets & models -----------------------------------------------------------------

def build_dataset(cfg: RunConfig):
    rng = Rng(cfg.seed).spawn(DATA)
    if cfg.task == "superres":
        hi, labels = blob_images(rng, cfg.n_classes, cfg.n_per_class,
                                 cfg.image_size * cfg.sr_factor, cfg.blob_noise)
        return sr_pairs(hi, labels, cfg.n_classes, cfg.sr_factor)
    if cfg.dataset == "ring":
        return gen_synth_mixture(rng, cfg.n_classes, cfg.n_per_class, "vector2d")
    if cfg.dataset == "blobs":
        return gen_synth_mixture(rng, cfg.n_classes, cfg.n_per_class, "blob_images",
                                 size=cfg.image_size, noise=cfg.blob_noise)
    data = load_cifar_binary(cfg.dataset_path)
    if data.n_classes != cfg.n_classes:
        raise ValueError(f"dataset has {data.n_classes} classes, config says {cfg.n_classes}")
    return data


def build_models(cfg: RunConfig):
    spec = cfg.model_spec()
    rng = Rng(cfg.seed).spawn(MODEL)
    return build_generator(rng, spec), build_discriminator(rng, spec)


def build_extractor(cfg: RunConfig, data):
    """Frozen feature/posterior source for the local metrics."""
    if isinstance(data, Dataset) and data.kind == "vector":
        return RingPosterior(data.centers, data.sigma)
    x = data.hi if isinstance(data, SRDataset) else data.x
    return train_classifier(x, data.labels, data.n_classes, Rng(cfg.seed).spawn(CLASSIFIER),
                            steps=cfg.classifier_steps)


def load_generator(cfg: RunConfig, data=None):
    if not cfg.checkpoint:
        raise ValueError("this command needs checkpoint = <path>")
    iteration, _, entries = load_checkpoint(cfg.checkpoint)
    G, _ = build_models(cfg)
    g_entries = {k[2:]: v for k, v in entries.items() if k.startswith("G.")}
    tables = [v for k, v in g_entries.items() if k.endswith("gamma_table")]
    if data is not None and tables and cfg.task == "classgen":
        if tables[0].shape[0] != data.n_classes:
            raise ValueError(f"checkpoint has {tables[0].shape[0]} classes, "
                             f"dataset has {data.n_classes}")
    G.load_state_dict(g_entries)
    return G.eval(), iteration


# -- metric reports ------------------------------------------------------------------

@dataclass
class MetricReport:
    run_id: str
    iteration: int
    records: list = field(default_factory=list)

    def add(self, metric: str, value: float, cls: int | None = None, **extra):
        rec = {"run_id": self.run_id, "iteration": self.iteration, "metric": metric,
               "class": cls, "value": float(value)}
        rec.update(extra)
        self.records.append(rec)

    def value(self, metric: str, cls: int | None = None) -> float:
        for r in self.records:
            if r["metric"] == metric and r["class"] == cls:
                return r["value"]
        raise KeyError(metric)

    def write_jsonl(self, path) -> None:
        Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records))


def _run_id(cfg: RunConfig) -> str:
    return f"{cfg.task}-{cfg.variant}-seed{cfg.seed}"


# -- train ---------------------------------------------------------------------------

class _RunMetrics:
    """Periodic local metrics and sample panels for one training run."""

    def __init__(self, cfg: RunConfig, data, out: Path):
        self.cfg, self.data, self.out = cfg, data, out
        self.sr = cfg.task == "superres"
        self.extractor = None if self.sr else build_extractor(cfg, data)
        prng = Rng(cfg.seed).spawn(PANEL)
        self.panel_z = prng.normal((cfg.panel_size, cfg.z_dim))
        if self.sr:
            self.test_hi, self.test_lo = _sr_test_set(cfg)
            self.panel_c = self.test_lo[: cfg.panel_size]
            self.panel_z = self.panel_z[: len(self.panel_c)]
        else:
            self.panel_c = np.arange(cfg.panel_size) % cfg.n_classes
            if isinstance(data, Dataset) and data.kind == "image":
                self.real_feats = self.extractor.features(data.x)

    def __call__(self, trainer: Trainer) -> dict:
        G = trainer.G
        it = trainer.iteration
        rng = Rng(self.cfg.seed).spawn(EVAL_BASE + it)
        G.eval()
        try:
            self.write_panel(G, it)
            if self.sr:
                with T.no_grad():
                    z = Tensor(rng.normal((len(self.test_lo), self.cfg.z_dim)))
                    sr = G(z, self.test_lo).data
                return {"ms_ssim": _mean_ms_ssim(sr, self.test_hi)}
            return self.class_metrics(G, rng)
        finally:
            G.train()

    def class_metrics(self, G, rng: Rng) -> dict:
        cfg, data = self.cfg, self.data
        n_gen = max(cfg.n_gen, 2)
        sample = class_sampler(G, cfg.z_dim, rng)
        feats = data.x if data.kind == "vector" else self.real_feats
        fids = [intra_fid(sample, feats, data.labels, c, n_gen, self.extractor)
                for c in range(data.n_classes)]
        labels = np.arange(n_gen) % data.n_classes
        with T.no_grad():
            xs = generator_forward(G, Tensor(rng.normal((n_gen, cfg.z_dim))), labels).data
        score, _ = inception_style_score_splits(self.extractor.probs(xs), cfg.score_splits)
        return {"local_intra_fid": float(np.mean(fids)), "local_score": score}

    def write_panel(self, G, it: int) -> None:
        with T.no_grad():
            x = G(Tensor(self.panel_z), self.panel_c).data
        path = self.out / "samples" / f"iter_{it:06d}"
        path.parent.mkdir(exist_ok=True)
        if x.ndim == 2:
            scatter_plot(path.with_suffix(".png"), x, self.panel_c, "x1", "x2", f"iter {it}")
        else:
            write_image(path.with_suffix(".png"), make_grid(x, 8, pad=1))


def _checkpoints(out: Path) -> list[Path]:
    return sorted((out / "checkpoints").glob("ckpt_*.pjgn"))


def _write_metrics(out: Path, lines: list[str]) -> None:
    (out / "metrics.csv").write_text(CSV_HEADER + "\n" + "".join(l + "\n" for l in lines))


def cmd_train(cfg: RunConfig) -> dict:
    out = _prepare_out(cfg, "train")
    data = build_dataset(cfg)
    G, D = build_models(cfg)
    losses = cfg.losses()
    metrics = _RunMetrics(cfg, data, out)
    if cfg.lam_aux and cfg.task == "classgen":
        if not isinstance(metrics.extractor, FeatureExtractor):
            raise ValueError("lam_aux needs an image dataset (the classifier is trained in-repo)")
        losses.aux_classifier = metrics.extractor.net
    trainer = Trainer(G, D, data, cfg.schedule(), Rng(cfg.seed).spawn(TRAIN), losses,
                      beta1=cfg.beta1, beta2=cfg.beta2, z_dim=cfg.z_dim)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    wall = not single_threaded()
    lines: list[str] = []

    existing = _checkpoints(out) if cfg.resume else []
    if existing:
        trainer.load(existing[-1])
        old = (out / "metrics.csv").read_text().splitlines()[1:] if (out / "metrics.csv").exists() else []
        lines = [l for l in old if int(l.split(",", 1)[0]) <= trainer.iteration]
    else:
        for stale in _checkpoints(out):
            stale.unlink()
        trainer.save(ckpt_dir / "ckpt_000000.pjgn")
    if cfg.iterations == 0:
        return {"iteration": 0, "out_dir": str(out)}

    def flush():
        _write_metrics(out, lines + [r.csv(wall) for r in trainer.log])

    def checkpoint(tr: Trainer):
        tr.save(ckpt_dir / f"ckpt_{tr.iteration:06d}.pjgn")
        flush()

    trainer.run(log_every=cfg.log_every, evaluate=metrics, eval_every=cfg.metric_every,
                on_checkpoint=checkpoint, checkpoint_every=cfg.checkpoint_every)
    final = {}
    if not cfg.metric_every or trainer.iteration % cfg.metric_every:
        final = metrics(trainer)
        for k, v in final.items():
            trainer._record(trainer.iteration, float("nan"), float("nan"), k, v)
    if not (ckpt_dir / f"ckpt_{trainer.iteration:06d}.pjgn").exists():
        trainer.save(ckpt_dir / f"ckpt_{trainer.iteration:06d}.pjgn")
    flush()
    summary = _summarize(out)
    summary.update({"iteration": trainer.iteration, "out_dir": str(out)})
    _plot_metrics(out)
    return summary


def _read_metric_rows(out: Path) -> list[dict]:
    rows = []
    for line in (out / "metrics.csv").read_text().splitlines()[1:]:
        it, _, d, g, name, val = line.split(",")
        rows.append({"iter": int(it), "d_loss": float(d), "g_loss": float(g), "name": name,
                     "value": float(val) if val else None})
    return rows


def _summarize(out: Path) -> dict:
    """Last logged value of every named metric."""
    last = {}
    for r in _read_metric_rows(out):
        if r["name"]:
            last[r["name"]] = r["value"]
    return last


def _plot_metrics(out: Path) -> None:
    rows = _read_metric_rows(out)
    names = sorted({r["name"] for r in rows if r["name"] and r["name"] != "cls_loss"})
    for name in names:
        pts = [(r["iter"], r["value"]) for r in rows if r["name"] == name]
        if pts:
            x, y = zip(*pts)
            line_plot(out / f"{name}.png", {name: (x, y)}, "iter", name)
    loss = [(r["iter"], r["d_loss"], r["g_loss"]) for r in rows if not r["name"]]
    if loss:
        it, d, g = zip(*loss)
        line_plot(out / "losses.png", {"d_loss": (it, d), "g_loss": (it, g)}, "iter", "loss",
                  markers=False)


# -- sweep ----------------------------------------------------------------------------

def sweep_points(cfg: RunConfig) -> list[tuple[str, float, float, Path]]:
    root = Path(cfg.out_dir)
    pts = [(v, lr, b1, root / f"{v}_lr{lr:g}_beta1{b1:g}")
           for v in cfg.sweep_variants for lr in cfg.sweep_lr for b1 in cfg.sweep_beta1]
    dirs = [p[3] for p in pts]
    if len(set(dirs)) != len(dirs):
        dup = sorted({str(d) for d in dirs if dirs.count(d) > 1})
        raise ValueError(f"sweep grid maps several points to the same output dir: {dup}")
    return pts


def cmd_sweep(cfg: RunConfig) -> dict:
    pts = sweep_points(cfg)
    out = _prepare_out(cfg, "sweep")
    rows, ran = [], 0
    for variant, lr, b1, run_dir in pts:
        done = run_dir / "result.json"
        if done.exists():
            res = json.loads(done.read_text())
        else:
            res = cmd_train(cfg.replace(variant=variant, lr=lr, beta1=b1, out_dir=str(run_dir),
                                        resume=False))
            done.write_text(json.dumps(res, sort_keys=True) + "\n")
            ran += 1
        rows.append({"variant": variant, "lr": lr, "beta1": b1,
                     **{k: v for k, v in res.items() if k not in ("out_dir", "iteration")}})
    metric_names = sorted({k for r in rows for k in r} - {"variant", "lr", "beta1"})
    head = ["variant", "lr", "beta1"] + metric_names
    text = ",".join(head) + "\n" + "".join(
        ",".join(_cell(r.get(h, "")) for h in head) + "\n" for r in rows)
    (out / "sweep.csv").write_text(text)
    key = "local_score" if "local_score" in metric_names else (metric_names or [None])[0]
    if key:
        _plot_sweep(out, rows, key)
    return {"rows": rows, "ran": ran, "out_dir": str(out)}


def _cell(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _plot_sweep(out: Path, rows: list[dict], key: str) -> None:
    for param, other in (("lr", "beta1"), ("beta1", "lr")):
        series = {}
        for r in rows:
            name = f"{r['variant'][:10]} {other}={r[other]:g}"
            series.setdefault(name, ([], []))
            series[name][0].append(r[param])
            series[name][1].append(r[key])
        line_plot(out / f"{key}_vs_{param}.png", series, param, key)


# -- eval -------------------------------------------------------------------------------

def cmd_eval(cfg: RunConfig) -> MetricReport:
    if cfg.task != "classgen":
        raise ValueError("eval runs on classgen checkpoints")
    out = _prepare_out(cfg, "eval")
    data = build_dataset(cfg)
    G, iteration = load_generator(cfg, data)
    if cfg.n_gen < 2:
        raise ValueError("empty generated set: n_gen must be at least 2")
    extractor = build_extractor(cfg, data)
    real_feats = extractor.features(data.x)
    rng = Rng(cfg.seed).spawn(EVAL_BASE + iteration)
    sample = class_sampler(G, cfg.z_dim, rng)
    report = MetricReport(_run_id(cfg), iteration)
    split_rng = Rng(cfg.seed).spawn(TEST)
    per_class = []
    for c in range(data.n_classes):
        f_gen = intra_fid(sample, real_feats, data.labels, c, cfg.n_gen, extractor)
        own = real_feats[data.labels == c]
        perm = split_rng.gen.permutation(len(own))
        half = len(own) // 2
        base = fid(gaussian_stats(own[perm[:half]]), gaussian_stats(own[perm[half:]]))
        report.add("local_intra_fid", f_gen, c)
        report.add("split_half_fid", base, c)
        per_class.append((c, f_gen, base))
    labels = np.arange(cfg.n_gen * data.n_classes) % data.n_classes
    with T.no_grad():
        xs = generator_forward(G, Tensor(rng.normal((len(labels), cfg.z_dim))), labels).data
    mean, std = inception_style_score_splits(extractor.probs(xs), cfg.score_splits)
    # real rows are stored class by class; shuffle so every split sees all classes
    shuffled = data.x[split_rng.gen.permutation(len(data.x))]
    real_score, _ = inception_style_score_splits(extractor.probs(shuffled), cfg.score_splits)
    report.add("local_intra_fid_mean", np.mean([r[1] for r in per_class]))
    report.add("split_half_fid_mean", np.mean([r[2] for r in per_class]))
    report.add("local_score", mean, std=std)
    report.add("real_local_score", real_score)
    report.write_jsonl(out / "report.jsonl")
    (out / "per_class.csv").write_text("class,local_intra_fid,split_half_fid\n" + "".join(
        f"{c},{a!r},{b!r}\n" for c, a, b in per_class))
    pts = np.array([[b, a] for _, a, b in per_class])
    scatter_plot(out / "per_class.png", pts, np.arange(len(pts)), "split-half", "intra-fid",
                 diagonal=True)
    return report


# -- morph ------------------------------------------------------------------------------

def morph_strips(G, z: np.ndarray, classes, steps: int) -> list[np.ndarray]:
    """One [steps, ...] batch of outputs per consecutive class pair."""
    if steps < 2:
        raise ValueError("morph needs at least 2 steps")
    if len(classes) < 2:
        raise ValueError("morph needs at least two classes")
    z = Tensor(np.asarray(z).reshape(1, -1))
    strips = []
    with T.no_grad():
        for a, b in zip(classes[:-1], classes[1:]):
            strips.append(np.stack([morph_generator(G, z, a, b, i / (steps - 1)).data[0]
                                    for i in range(steps)]))
    return strips


def cmd_morph(cfg: RunConfig) -> dict:
    out = _prepare_out(cfg, "morph")
    G, _ = load_generator(cfg)
    result = {}
    for s in cfg.morph_z_seeds:
        z = Rng(s).normal((cfg.z_dim,))
        strips = morph_strips(G, z, cfg.morph_classes, cfg.morph_steps)
        result[s] = strips
        if strips[0].ndim == 4:
            row = np.concatenate([make_grid(st, len(st)) for st in strips], axis=2)
            write_image(out / f"morph_seed{s}.png", row)
        else:
            lines = ["pair,step,lambda," + ",".join(f"x{i}" for i in range(strips[0].shape[1]))]
            for k, st in enumerate(strips):
                for i, x in enumerate(st):
                    lam = i / (len(st) - 1)
                    lines.append(f"{k},{i},{lam!r}," + ",".join(repr(float(v)) for v in x))
            (out / f"morph_seed{s}.csv").write_text("\n".join(lines) + "\n")
    return {"strips": result, "out_dir": str(out)}


# -- superres ----------------------------------------------------------------------------

def _sr_test_set(cfg: RunConfig):
    hi, _ = blob_images(Rng(cfg.seed).spawn(TEST), cfg.n_classes,
                        max(1, -(-cfg.n_test // cfg.n_classes)),
                        cfg.image_size * cfg.sr_factor, cfg.blob_noise)
    sel = np.arange(len(hi))[: cfg.n_test]
    from .resize import downsample_box

    return hi[sel], downsample_box(hi[sel], cfg.sr_factor).astype(hi.dtype)


def _sr_test_labels(cfg: RunConfig) -> np.ndarray:
    per = max(1, -(-cfg.n_test // cfg.n_classes))
    return np.repeat(np.arange(cfg.n_classes), per)[: cfg.n_test]


def _mean_ms_ssim(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean([ms_ssim(x, y, data_range=(-1.0, 1.0)) for x, y in zip(a, b)]))


def cmd_superres(cfg: RunConfig) -> MetricReport:
    if cfg.task != "superres":
        raise ValueError("superres needs task = superres")
    out = _prepare_out(cfg, "superres")
    G, iteration = load_generator(cfg)
    if cfg.sr_inputs:
        lo = np.load(cfg.sr_inputs).astype(np.float32)
        hi = labels = None
        if cfg.metrics:
            raise ValueError("metrics requested but sr_inputs carries no ground truth; "
                             "set metrics = false")
    else:
        hi, lo = _sr_test_set(cfg)
        labels = _sr_test_labels(cfg)
    rng = Rng(cfg.seed).spawn(SR_Z)
    with T.no_grad():
        sr = G(Tensor(rng.normal((len(lo), cfg.z_dim))), lo).data
    outs = {"sr": sr,
            "bilinear": np.clip(upsample(lo, cfg.sr_factor, "bilinear"), -1, 1),
            "bicubic": np.clip(upsample(lo, cfg.sr_factor, "bicubic"), -1, 1)}
    nearest = np.repeat(np.repeat(lo, cfg.sr_factor, axis=2), cfg.sr_factor, axis=3)
    n_show = min(8, len(lo))
    panels = [nearest[:n_show], outs["bilinear"][:n_show], outs["bicubic"][:n_show],
              outs["sr"][:n_show]] + ([hi[:n_show]] if hi is not None else [])
    write_image(out / "superres.png", make_grid(np.concatenate(panels), n_show, pad=1))
    np.save(out / "sr_outputs.npy", sr)
    report = MetricReport(_run_id(cfg), iteration)
    if cfg.metrics:
        data = build_dataset(cfg)
        clf = build_extractor(cfg, data)
        for name, x in outs.items():
            report.add("ms_ssim", _mean_ms_ssim(x, hi), method=name)
            report.add("accuracy", accuracy(clf, x, labels), method=name)
        pred = mc_ensemble_predict(G, clf, lo, cfg.n_mc, Rng(cfg.seed).spawn(SR_Z + 1), cfg.z_dim)
        report.add("accuracy", float((pred == labels).mean()), method=f"sr_mc{cfg.n_mc}")
        report.add("accuracy", accuracy(clf, hi, labels), method="ground_truth")
        report.write_jsonl(out / "report.jsonl")
        rows = [r for r in report.records]
        (out / "summary.csv").write_text("metric,method,value\n" + "".join(
            f"{r['metric']},{r['method']},{r['value']!r}\n" for r in rows))
    return report
