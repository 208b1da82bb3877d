"""Margin-softmax objective, Adam with an exponential lr schedule, the
synthetic speaker corpus, and the minibatch training loop.

The corpus replaces real speech at desk scale: each speaker is a fixed
64-dim template; each utterance adds per-frame Gaussian noise and a slow
sinusoidal drift shared across dims (both scaled by ``noise_scale``), so
utterance means separate speakers by construction and the task difficulty
is one knob.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import ops
from .autograd import Node, backward, zero_grads
from .errors import NumericError, ValidationError
from .model import Model
from .tensor import write_btf

# ---------------------------------------------------------------------------
# objective


def am_softmax_loss(emb: Node, class_weights: Node, labels: np.ndarray,
                    m: float = 0.15, s: float = 30.0) -> tuple[Node, np.ndarray]:
    """Additive-margin softmax: cross-entropy over s * (cos - m at the label).

    Embeddings and class-weight rows are unit-normalized at use, so the loss
    sees only directions. Returns (loss node, raw cosine matrix) — the cosines
    drive the accuracy readout.
    """
    if m < 0:
        raise ValidationError(f"margin must be >= 0, got {m}")
    if s <= 0:
        raise ValidationError(f"scale must be > 0, got {s}")
    n, k = emb.shape[0], class_weights.shape[0]
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValidationError(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValidationError(f"labels must lie in [0, {k})")
    e = ops.l2_normalize(emb, axis=1)
    w = ops.l2_normalize(class_weights, axis=1)
    cos = ops.linear(e, w)
    margin = np.zeros((n, k), dtype=emb.dtype)
    margin[np.arange(n), labels] = -m
    logits = ops.scale(ops.add_const(cos, margin), s)
    return ops.softmax_cross_entropy(logits, labels), cos.value


# ---------------------------------------------------------------------------
# optimizer


def lr_schedule(step: int, total_steps: int, lr_start: float, lr_end: float) -> float:
    """Exponential decay; step 0 gives lr_start, step total_steps-1 lr_end."""
    if total_steps <= 1:
        return lr_start
    frac = step / (total_steps - 1)
    return lr_start * (lr_end / lr_start) ** frac


class Adam:
    """Bias-corrected Adam over named parameters, lr from lr_schedule."""

    def __init__(self, params: dict[str, Node], total_steps: int,
                 lr_start: float = 1e-3, lr_end: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr_start <= 0 or lr_end <= 0:
            raise ValidationError("learning rates must be > 0")
        self.params = params
        self.total_steps = total_steps
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.value) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.value) for n, p in params.items()}

    def step(self) -> float:
        """Apply one update from the parameters' .grad fields; returns the lr
        used. A non-finite gradient rejects the whole step, mutating nothing."""
        grads = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in {name}; step rejected")
            grads[name] = g
        lr = lr_schedule(self.t, self.total_steps, self.lr_start, self.lr_end)
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.value -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return lr


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass
class SyntheticCorpusConfig:
    n_speakers: int = 20
    utts_per_speaker: int = 50
    min_frames: int = 200
    max_frames: int = 400
    noise_scale: float = 0.5
    eval_utts_per_speaker: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.n_speakers < 2:
            raise ValidationError(f"n_speakers must be >= 2, got {self.n_speakers}")
        if self.utts_per_speaker < 1:
            raise ValidationError("utts_per_speaker must be >= 1")
        if self.noise_scale < 0:
            raise ValidationError(f"noise_scale must be >= 0, got {self.noise_scale}")
        lo, hi = (self.min_frames + 1) // 2, self.max_frames // 2
        if self.min_frames < 2 or lo > hi:
            raise ValidationError(
                f"frame range [{self.min_frames}, {self.max_frames}] holds no even length"
            )
        if not 0 <= self.eval_utts_per_speaker < self.utts_per_speaker:
            raise ValidationError("eval_utts_per_speaker must be < utts_per_speaker")


def gen_corpus(cfg: SyntheticCorpusConfig, out_dir) -> dict[str, list]:
    """Write feature files plus manifests under *out_dir*.

    Produces feats/<utt>.btf (one (1,1,T,64) float32 tensor each, T even),
    manifest.txt with every utterance, a train/eval split (the last
    eval_utts_per_speaker utterances of each speaker are held out), and
    trials.txt with all unordered pairs of held-out utterances.

    Frame t of an utterance: template[speaker] + N(0, noise_scale) per bin
    + noise_scale * sin(2*pi*t/period + phase) added to every bin.
    """
    rng = np.random.default_rng(cfg.seed)
    feat_dir = os.path.join(out_dir, "feats")
    os.makedirs(feat_dir, exist_ok=True)
    templates = rng.normal(0.0, 1.0, (cfg.n_speakers, 64))
    entries, train_entries, eval_entries = [], [], []
    n_train = cfg.utts_per_speaker - cfg.eval_utts_per_speaker
    for spk_i in range(cfg.n_speakers):
        spk = f"spk{spk_i:03d}"
        for utt_i in range(cfg.utts_per_speaker):
            utt = f"{spk}_utt{utt_i:03d}"
            t = 2 * int(rng.integers((cfg.min_frames + 1) // 2, cfg.max_frames // 2 + 1))
            phase = rng.uniform(0.0, 2.0 * np.pi)
            period = rng.uniform(150.0, 450.0)
            drift = cfg.noise_scale * np.sin(2.0 * np.pi * np.arange(t) / period + phase)
            frames = (
                templates[spk_i]
                + rng.normal(0.0, 1.0, (t, 64)) * cfg.noise_scale
                + drift[:, None]
            )
            rel = os.path.join("feats", f"{utt}.btf")
            write_btf(os.path.join(out_dir, rel),
                      frames.astype(np.float32).reshape(1, 1, t, 64))
            entry = (utt, spk, rel)
            entries.append(entry)
            (train_entries if utt_i < n_train else eval_entries).append(entry)
    trials = []
    for i in range(len(eval_entries)):
        for j in range(i + 1, len(eval_entries)):
            trials.append((
                eval_entries[i][0],
                eval_entries[j][0],
                eval_entries[i][1] == eval_entries[j][1],
            ))
    return {"all": entries, "train": train_entries, "eval": eval_entries,
            "trials": trials}


# ---------------------------------------------------------------------------
# training loop


def train(model: Model, utts: list[tuple[str, int, np.ndarray]], steps: int,
          batch: int, crop: int, seed: int, lr_start: float = 1e-3,
          lr_end: float = 1e-4, m: float = 0.15, s: float = 30.0,
          log=None) -> list[tuple[int, float, float, float]]:
    """Minibatch loop over (utt_id, label, (T,64) feature) records.

    Each step samples the next ``batch`` utterances of a per-epoch shuffle
    and a random ``crop``-frame window from each. Returns per-step records
    (step, lr, loss, batch accuracy). steps=0 leaves the model untouched.
    """
    if model.classifier is None:
        raise ValidationError("model was built without a classifier head")
    if steps < 0 or batch < 1:
        raise ValidationError(f"need steps >= 0 and batch >= 1, got {steps}, {batch}")
    if crop < 2 or crop % 2 != 0:
        raise ValidationError(f"crop must be even and >= 2, got {crop}")
    if not utts:
        raise ValidationError("empty training set")
    short = [u for u, _, f in utts if f.shape[0] < crop]
    if short:
        raise ValidationError(f"{len(short)} utterances shorter than crop {crop}, "
                              f"e.g. {short[0]!r}")
    n_classes = model.classifier.shape[0]
    labels_all = np.array([label for _, label, _ in utts])
    if labels_all.min() < 0 or labels_all.max() >= n_classes:
        raise ValidationError(f"labels must lie in [0, {n_classes})")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(utts))
    cursor = 0
    params = model.params
    opt = Adam(params, total_steps=steps, lr_start=lr_start, lr_end=lr_end)
    model.set_mode("train")
    metrics = []
    for step in range(steps):
        idx = []
        while len(idx) < batch:
            if cursor == len(order):
                order = rng.permutation(len(utts))
                cursor = 0
            idx.append(order[cursor])
            cursor += 1
        x = np.empty((batch, 1, crop, 64), dtype=np.float32)
        y = np.empty(batch, dtype=np.int64)
        for b, i in enumerate(idx):
            _, label, feats = utts[i]
            off = int(rng.integers(0, feats.shape[0] - crop + 1))
            x[b, 0] = feats[off:off + crop]
            y[b] = label
        zero_grads(params.values())
        emb = model.embed(Node(x))
        loss, cos = am_softmax_loss(emb, model.classifier, y, m=m, s=s)
        loss_val = float(loss.value)
        if not np.isfinite(loss_val):
            raise NumericError(f"training diverged at step {step}: loss={loss_val}")
        backward(loss)
        lr = opt.step()
        acc = float(np.mean(cos.argmax(axis=1) == y))
        metrics.append((step + 1, lr, loss_val, acc))
        if log is not None:
            log(step + 1, lr, loss_val, acc)
    return metrics
