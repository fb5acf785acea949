"""Dynamic soft-label contrastive loss across image, text, and graph modalities.

Intra-modal cosine similarity matrices are thresholded, rescaled to [0, 1],
and row-normalized into row-stochastic soft-label matrices; cross-modal
temperature-scaled softmax distributions are then pulled toward those labels
with a KL divergence, one term per (query modality, key modality, label
stream).  Thresholding uses a strict inequality: a similarity exactly at the
threshold contributes nothing.  The diagonal of a similarity matrix is 1, so
every row keeps at least its own entry and normalization is always defined.

Soft labels are targets, not parameters: no gradient flows through the label
construction (stop-gradient semantics).  The text and graph blocks stack the
paired half on top of the hard-negative half; directions involving the image
use only the paired half on the non-image side and, when the keys are
images, the corresponding square label block renormalized row-wise.

With all three modalities and all three label streams active there are
3 * 2 ordered modality pairs times 3 streams = 18 weighted KL terms.  An
empty stream set degenerates to plain InfoNCE: one-hot targets with unit
weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .numerics import kl_rows, softmax_rows
from .report_nlp import normalize_label_vector

__all__ = [
    "MODALITY_ORDER",
    "STREAM_ORDER",
    "ConfigurationError",
    "LossConfig",
    "BatchEmbeddings",
    "similarity_matrix",
    "soft_labels",
    "cross_modal_probs",
    "direction_loss",
    "build_soft_labels",
    "total_loss_given_labels",
    "total_loss",
    "gradients_given_labels",
    "loss_gradients",
]

MODALITY_ORDER: Tuple[str, ...] = ("image", "text", "graph")
STREAM_ORDER: Tuple[str, ...] = ("t", "c", "g")
INFONCE_STREAM = "nce"


class ConfigurationError(ValueError):
    """Loss configuration inconsistent with the inputs provided."""


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.1
    tau_t: float = 0.9
    tau_c: float = 0.8
    tau_g: float = 0.7
    w_t: float = 0.167
    w_c: float = 0.167
    w_g: float = 0.167
    modalities: Tuple[str, ...] = ("image", "text")
    streams: Tuple[str, ...] = ("t", "c")
    hard_negatives: bool = True

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ConfigurationError("temperature must be positive")
        for name, tau in (("tau_t", self.tau_t), ("tau_c", self.tau_c), ("tau_g", self.tau_g)):
            if not 0.0 <= tau < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1), got {tau}")
        for name, w in (("w_t", self.w_t), ("w_c", self.w_c), ("w_g", self.w_g)):
            if w < 0.0:
                raise ConfigurationError(f"{name} must be non-negative, got {w}")
        bad = set(self.modalities) - set(MODALITY_ORDER)
        if bad:
            raise ConfigurationError(f"unknown modalities {sorted(bad)}")
        if "image" not in self.modalities or "text" not in self.modalities:
            raise ConfigurationError("image and text modalities are always active")
        bad = set(self.streams) - set(STREAM_ORDER)
        if bad:
            raise ConfigurationError(f"unknown streams {sorted(bad)}")

    @property
    def ordered_modalities(self) -> Tuple[str, ...]:
        return tuple(m for m in MODALITY_ORDER if m in self.modalities)

    @property
    def ordered_streams(self) -> Tuple[str, ...]:
        return tuple(s for s in STREAM_ORDER if s in self.streams)

    def stream_weight(self, stream: str) -> float:
        if stream == INFONCE_STREAM:
            return 1.0
        return {"t": self.w_t, "c": self.w_c, "g": self.w_g}[stream]


@dataclass
class BatchEmbeddings:
    """Embedding blocks for one batch.

    ``texts`` and ``graphs`` stack the paired half (rows 0..B-1) on top of
    the hard-negative half (rows B..2B-1) when hard negatives are in play.
    """

    images: np.ndarray
    texts: np.ndarray
    graphs: np.ndarray | None = None

    @property
    def batch_size(self) -> int:
        return self.images.shape[0]

    @property
    def block_rows(self) -> int:
        return self.texts.shape[0]

    def validate(self, cfg: LossConfig) -> None:
        b = self.batch_size
        expected = 2 * b if cfg.hard_negatives else b
        if self.texts.shape[0] != expected:
            raise ConfigurationError(
                f"text block has {self.texts.shape[0]} rows; expected {expected} "
                f"(hard_negatives={cfg.hard_negatives}, B={b})"
            )
        if self.graphs is not None and self.graphs.shape != self.texts.shape:
            raise ConfigurationError("graph block must match the text block shape")
        needs_graphs = "graph" in cfg.modalities or "g" in cfg.streams
        if needs_graphs and self.graphs is None:
            raise ConfigurationError("configuration uses graphs but none were provided")


def similarity_matrix(rows: np.ndarray) -> np.ndarray:
    """Cosine similarity matrix of unit rows, symmetrized exactly."""
    m = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        worst = float(np.abs(norms - 1.0).max())
        raise ValueError(f"rows must be unit-norm (worst deviation {worst:.2e})")
    s = m @ m.T
    return (s + s.T) / 2.0


def soft_labels(similarity: np.ndarray, threshold: float) -> np.ndarray:
    """Threshold (strictly), rescale to [0, 1], and row-normalize.

    y[i, j] = (S[i, j] - tau) / (1 - tau) when S[i, j] > tau, else 0; each
    row is then divided by its sum.  The unit diagonal survives any valid
    threshold, so rows are never all-zero.
    """
    if not 0.0 <= threshold < 1.0:
        raise ValueError(f"threshold must lie in [0, 1), got {threshold}")
    s = np.asarray(similarity, dtype=np.float64)
    y = np.where(s > threshold, (s - threshold) / (1.0 - threshold), 0.0)
    sums = y.sum(axis=1, keepdims=True)
    if np.any(sums <= 0.0):
        raise ValueError("soft label row summed to zero; diagonal should survive thresholding")
    return y / sums


def cross_modal_probs(
    queries: np.ndarray, keys: np.ndarray, temperature: float
) -> np.ndarray:
    """Softmax over keys of query-key dot products divided by temperature."""
    q = np.asarray(queries, dtype=np.float64)
    k = np.asarray(keys, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
        raise ValueError(f"shape mismatch: queries {q.shape} vs keys {k.shape}")
    return softmax_rows(q @ k.T, temperature)


def direction_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean KL(labels_row || probs_row) over the query rows."""
    return kl_rows(labels, probs)


def _renormalize_rows(block: np.ndarray) -> np.ndarray:
    sums = block.sum(axis=1, keepdims=True)
    if np.any(sums <= 0.0):
        raise ValueError("label block row summed to zero after slicing")
    return block / sums


def build_soft_labels(
    emb: BatchEmbeddings, clinical: np.ndarray | None, cfg: LossConfig
) -> Dict[str, np.ndarray]:
    """Label matrix per active stream, from the full stacked blocks.

    ``clinical`` is the stacked binary label matrix (paired half first); its
    rows are L2-normalized here before the similarity product.
    """
    labels: Dict[str, np.ndarray] = {}
    for stream in cfg.ordered_streams:
        if stream == "t":
            labels["t"] = soft_labels(similarity_matrix(emb.texts), cfg.tau_t)
        elif stream == "c":
            if clinical is None:
                raise ConfigurationError("clinical stream active but no clinical labels given")
            if clinical.shape[0] != emb.block_rows:
                raise ConfigurationError(
                    f"clinical labels have {clinical.shape[0]} rows; expected {emb.block_rows}"
                )
            rows = np.stack([normalize_label_vector(r) for r in np.asarray(clinical, dtype=np.float64)])
            labels["c"] = soft_labels(similarity_matrix(rows), cfg.tau_c)
        elif stream == "g":
            if emb.graphs is None:
                raise ConfigurationError("graph stream active but no graph embeddings given")
            labels["g"] = soft_labels(similarity_matrix(emb.graphs), cfg.tau_g)
    if not labels:
        labels[INFONCE_STREAM] = np.eye(emb.block_rows)
    return labels


def _grad_key(mod: str) -> str:
    return {"image": "images", "text": "texts", "graph": "graphs"}[mod]


def _directions(emb: BatchEmbeddings, cfg: LossConfig):
    """Ordered direction specs per active modality pair.

    Each entry carries the query/key matrices, the label row/col slices into
    the full label matrix (renorm marks sliced blocks that must be
    row-renormalized), and which rows of which embedding block the query/key
    gradients belong to.
    """
    b = emb.batch_size
    blocks = {"image": emb.images, "text": emb.texts, "graph": emb.graphs}
    out = []
    mods = cfg.ordered_modalities
    for qm in mods:
        for km in mods:
            if qm == km:
                continue
            if qm == "image":
                queries, rows, q_rows = blocks["image"], slice(0, b), slice(None)
            elif km == "image":
                queries, rows, q_rows = blocks[qm][:b], slice(0, b), slice(0, b)
            else:
                queries, rows, q_rows = blocks[qm], slice(None), slice(None)
            if km == "image":
                keys, cols, renorm = blocks["image"], slice(0, b), True
            else:
                keys, cols, renorm = blocks[km], slice(None), False
            out.append(
                {
                    "name": f"{qm}->{km}",
                    "queries": queries,
                    "keys": keys,
                    "rows": rows,
                    "cols": cols,
                    "renorm": renorm,
                    "q_grad": (_grad_key(qm), q_rows),
                    "k_grad": (_grad_key(km), slice(None)),
                }
            )
    return out


def total_loss_given_labels(
    emb: BatchEmbeddings, labels: Dict[str, np.ndarray], cfg: LossConfig
) -> Tuple[float, Dict[str, float]]:
    """Weighted sum of per-direction, per-stream KL terms with fixed order.

    The breakdown maps "query->key/stream" to the weighted term value; the
    total is accumulated over sorted keys so it is bitwise reproducible.
    """
    emb.validate(cfg)
    terms: Dict[str, float] = {}
    for d in _directions(emb, cfg):
        probs = cross_modal_probs(d["queries"], d["keys"], cfg.temperature)
        for stream, full in labels.items():
            block = full[d["rows"], d["cols"]]
            if d["renorm"]:
                block = _renormalize_rows(block)
            terms[f"{d['name']}/{stream}"] = cfg.stream_weight(stream) * direction_loss(
                probs, block
            )
    total = 0.0
    for key in sorted(terms):
        total += terms[key]
    return total, terms


def total_loss(
    emb: BatchEmbeddings, clinical: np.ndarray | None, cfg: LossConfig
) -> Tuple[float, Dict[str, float]]:
    emb.validate(cfg)
    labels = build_soft_labels(emb, clinical, cfg)
    return total_loss_given_labels(emb, labels, cfg)


def gradients_given_labels(
    emb: BatchEmbeddings, labels: Dict[str, np.ndarray], cfg: LossConfig
) -> Tuple[float, Dict[str, float], Dict[str, np.ndarray]]:
    """Loss, breakdown, and exact gradients w.r.t. the embedding blocks.

    For one direction with logits z = Q K^T / temperature and row-stochastic
    labels y, d(loss)/dz = weight * (p - y) / n_rows, which then propagates
    linearly to Q and K.  Labels are constants here by construction.
    """
    emb.validate(cfg)
    grads = {
        "images": np.zeros_like(emb.images),
        "texts": np.zeros_like(emb.texts),
        "graphs": np.zeros_like(emb.graphs) if emb.graphs is not None else None,
    }

    terms: Dict[str, float] = {}
    for d in _directions(emb, cfg):
        queries, keys = d["queries"], d["keys"]
        probs = cross_modal_probs(queries, keys, cfg.temperature)
        n_rows = probs.shape[0]
        d_z = np.zeros_like(probs)
        for stream, full in labels.items():
            block = full[d["rows"], d["cols"]]
            if d["renorm"]:
                block = _renormalize_rows(block)
            weight = cfg.stream_weight(stream)
            terms[f"{d['name']}/{stream}"] = weight * direction_loss(probs, block)
            d_z += weight * (probs - block) / n_rows
        q_key, q_rows = d["q_grad"]
        k_key, k_rows = d["k_grad"]
        grads[q_key][q_rows] += d_z @ keys / cfg.temperature
        grads[k_key][k_rows] += d_z.T @ queries / cfg.temperature

    total = 0.0
    for key in sorted(terms):
        total += terms[key]
    return total, terms, grads


def loss_gradients(
    emb: BatchEmbeddings, clinical: np.ndarray | None, cfg: LossConfig
) -> Tuple[float, Dict[str, float], Dict[str, np.ndarray]]:
    """Forward value plus gradients; soft labels are built once and frozen."""
    emb.validate(cfg)
    labels = build_soft_labels(emb, clinical, cfg)
    return gradients_given_labels(emb, labels, cfg)
