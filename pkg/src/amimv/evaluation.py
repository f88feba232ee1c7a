"""Frozen-feature evaluation: linear probe, classification metrics,
alignment/uniformity, and PCA projection for reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from . import tensor as T
from .datasets import ImageDataset
from .errors import ValidationError
from .tensor import Tensor
from .trainer import OptimState, adamw_step
from .views import normalize_view


@dataclass
class ProbeConfig:
    lr: float = 0.005
    epochs: int = 100
    batch_size: int = 128
    weight_decay: float = 0.0
    seed: int = 0


@dataclass
class EvalReport:
    accuracy: float
    per_class_accuracy: list[float]
    macro_auc: float
    confusion: np.ndarray  # rows: truth, columns: prediction

    def to_json(self) -> str:
        return json.dumps(
            {
                "accuracy": self.accuracy,
                "per_class_accuracy": self.per_class_accuracy,
                "macro_auc": self.macro_auc,
                "confusion": self.confusion.tolist(),
            },
            indent=2,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["metric", "class", "value"])
        w.writerow(["accuracy", "", f"{self.accuracy:.6f}"])
        w.writerow(["macro_auc", "", f"{self.macro_auc:.6f}"])
        for c, acc in enumerate(self.per_class_accuracy):
            w.writerow(["per_class_accuracy", c, f"{acc:.6f}" if not math.isnan(acc) else "nan"])
        return buf.getvalue()

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        for row in self.confusion:
            w.writerow([int(v) for v in row])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# feature extraction


def extract_features(
    pair: M.EncoderPair, dataset: ImageDataset, split: str, batch_size: int = 256
) -> tuple[np.ndarray, np.ndarray]:
    """Pre-projector query-encoder features on normalized views only."""
    if split not in dataset.splits:
        raise ValidationError(f"unknown split {split!r}; have {sorted(dataset.splits)}")
    images, labels = dataset.splits[split]
    size = pair.config.input_size
    stats = dataset.channel_stats
    chunks = []
    for start in range(0, images.shape[0], batch_size):
        stack = np.stack(
            [normalize_view(im, stats, size).data for im in images[start : start + batch_size]]
        )
        with T.no_grad():
            feats, _ = M.encode(pair.q_params, Tensor(stack, dtype=np.float32), pair.config)
        chunks.append(feats.data)
    return np.concatenate(chunks), labels.copy()


# ---------------------------------------------------------------------------
# linear probe


@dataclass
class ProbeResult:
    weights: np.ndarray  # [D, C]
    bias: np.ndarray  # [C]
    missing_classes: list[int] = field(default_factory=list)

    def scores(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights + self.bias


def _probe_lr(epoch: int, total: int, base: float) -> float:
    # cosine without warmup, per the linear-evaluation protocol
    return base * 0.5 * (1.0 + math.cos(math.pi * epoch / total))


def linear_probe(
    train_features: np.ndarray,
    train_labels: np.ndarray,
    config: ProbeConfig | None = None,
    num_classes: int | None = None,
) -> ProbeResult:
    """Train one linear layer with softmax cross-entropy over frozen features."""
    config = config or ProbeConfig()
    n, d = train_features.shape
    c = num_classes or int(train_labels.max()) + 1
    missing = sorted(set(range(c)) - set(int(x) for x in np.unique(train_labels)))
    x = train_features.astype(np.float32)

    w = Tensor(np.zeros((d, c), dtype=np.float32), requires_grad=True)
    b = Tensor(np.zeros(c, dtype=np.float32), requires_grad=True)
    onehot_all = np.eye(c, dtype=np.float32)[train_labels]
    opt = OptimState(kind="adamw", weight_decay=config.weight_decay)
    rng = np.random.default_rng(np.random.PCG64(config.seed))

    for epoch in range(config.epochs):
        lr = _probe_lr(epoch, config.epochs, config.lr)
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb = Tensor(x[idx])
            yb = Tensor(onehot_all[idx])
            with T.Tape() as tape:
                logits = T.add(T.matmul(xb, w), T.reshape(b, (1, c)))
                nll = T.sub(T.logsumexp(logits), T.sum_(T.mul(logits, yb), axis=1))
                loss = T.mean(nll)
            T.backward(loss, tape)
            adamw_step({"w": w, "b": b}, opt, lr)

    return ProbeResult(
        weights=w.data.astype(np.float64), bias=b.data.astype(np.float64), missing_classes=missing
    )


# ---------------------------------------------------------------------------
# classification metrics


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _binary_auc(scores: np.ndarray, positives: np.ndarray) -> float:
    """Mann-Whitney rank statistic with half-credit ties."""
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = _average_ranks(scores)
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def classification_metrics(scores: np.ndarray, labels: np.ndarray) -> EvalReport:
    """Argmax predictions (ties to the lowest index), one-vs-rest macro AUC."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim == 1:  # binary positive-class scores
        scores = np.column_stack([-scores, scores])
    n, c = scores.shape
    if n < 1:
        raise ValidationError("need at least one sample")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("scores must be finite")

    predictions = np.argmax(scores, axis=1)
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    accuracy = float(np.trace(confusion) / n)
    per_class = []
    for k in range(c):
        row = confusion[k].sum()
        per_class.append(float(confusion[k, k] / row) if row > 0 else math.nan)
    aucs = [_binary_auc(scores[:, k], labels == k) for k in range(c)]
    present = [a for a in aucs if not math.isnan(a)]
    macro = float(np.mean(present)) if present else math.nan
    return EvalReport(
        accuracy=accuracy, per_class_accuracy=per_class, macro_auc=macro, confusion=confusion
    )


# ---------------------------------------------------------------------------
# representation quality


def alignment_uniformity(z_left: np.ndarray, z_right: np.ndarray) -> tuple[float, float]:
    """Positive-pair squared distance, and the log-mean Gaussian potential
    over distinct pairs of the pooled, L2-normalized embeddings."""
    z_left = np.asarray(z_left, dtype=np.float64)
    z_right = np.asarray(z_right, dtype=np.float64)
    if z_left.shape != z_right.shape:
        raise ValidationError(f"pair shapes disagree: {z_left.shape} vs {z_right.shape}")

    def unit(z):
        return z / np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-12)

    zl, zr = unit(z_left), unit(z_right)
    align = float(((zl - zr) ** 2).sum(axis=1).mean())

    pool = np.concatenate([zl, zr])
    m = pool.shape[0]
    if m < 2:
        raise ValidationError("uniformity needs at least 2 pooled points")
    sq = ((pool[:, None, :] - pool[None, :, :]) ** 2).sum(axis=-1)
    iu = np.triu_indices(m, k=1)
    uniform = float(np.log(np.mean(np.exp(-2.0 * sq[iu]))))
    return align, uniform


def pca_project(features: np.ndarray, k: int = 2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean-centered projection onto the top-k right singular directions.

    Returns (coords [N,k], explained variance per component, components [k,D])."""
    x = np.asarray(features, dtype=np.float64)
    n, d = x.shape
    if n < 2:
        raise ValidationError("PCA needs at least 2 samples")
    if d < k:
        raise ValidationError(f"feature dim {d} < requested components {k}")
    centered = x - x.mean(axis=0)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    coords = u[:, :k] * s[:k]
    explained = (s**2) / (n - 1)
    return coords, explained[:k], vt[:k]
