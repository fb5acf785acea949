"""Differentiable toy encoders mapping images, reports, and graphs into one
L2-normalized embedding space.

The image encoder is linear over precomputed feature vectors; the text
encoder is linear over a hashed bag of tokens (so it is exactly invariant to
sentence shuffling); the graph encoder is a two-layer graph convolution with
mean pooling.  All three expose exact analytic gradients, including through
the final L2 normalization, so every loss built on top can be verified by
finite differences.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .graphs import FEATURE_DIM, ReportGraph, featurize_nodes, normalized_adjacency
from .numerics import l2_normalize_rows
from .report_nlp import Report

__all__ = [
    "EncoderConfig",
    "EncoderParams",
    "CheckpointError",
    "VersionMismatchError",
    "ChecksumError",
    "init_params",
    "text_bag",
    "encode_images",
    "encode_texts",
    "encode_graphs",
    "encode_text",
    "encode_graph",
    "backward_images",
    "backward_texts",
    "backward_graphs",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "cxralign-checkpoint"
CHECKPOINT_VERSION = 1
_TOKEN_KEY = b"cxralign-token-v1"


class CheckpointError(RuntimeError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 512
    image_feature_dim: int = 64
    text_hash_dim: int = 4096
    graph_hidden_dim: int = 256
    graph_input_dim: int = FEATURE_DIM

    def __post_init__(self):
        if self.graph_input_dim != FEATURE_DIM:
            raise ValueError(f"graph_input_dim is fixed at {FEATURE_DIM} by node featurization")
        for name in ("embed_dim", "image_feature_dim", "text_hash_dim", "graph_hidden_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass
class EncoderParams:
    w_img: np.ndarray  # (image_feature_dim, embed_dim)
    w_txt: np.ndarray  # (text_hash_dim, embed_dim)
    w_g1: np.ndarray   # (graph_input_dim, graph_hidden_dim)
    w_g2: np.ndarray   # (graph_hidden_dim, embed_dim)

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {"w_img": self.w_img, "w_txt": self.w_txt, "w_g1": self.w_g1, "w_g2": self.w_g2}

    def copy(self) -> "EncoderParams":
        return EncoderParams(**{k: v.copy() for k, v in self.as_dict().items()})


def init_params(cfg: EncoderConfig, seed: int) -> EncoderParams:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    rng = np.random.default_rng(seed)

    def uniform(fan_in: int, fan_out: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    return EncoderParams(
        w_img=uniform(cfg.image_feature_dim, cfg.embed_dim),
        w_txt=uniform(cfg.text_hash_dim, cfg.embed_dim),
        w_g1=uniform(cfg.graph_input_dim, cfg.graph_hidden_dim),
        w_g2=uniform(cfg.graph_hidden_dim, cfg.embed_dim),
    )


def _token_index(token: str, n_bins: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=_TOKEN_KEY).digest()
    return int.from_bytes(digest, "big") % n_bins


def text_bag(report: Report, n_bins: int) -> np.ndarray:
    """Hashed token-count vector; independent of sentence order by construction."""
    v = np.zeros(n_bins, dtype=np.float64)
    for sentence in report.sentences:
        for token in sentence.tokens:
            v[_token_index(token, n_bins)] += 1.0
    return v


def _normalize_with_cache(raw: np.ndarray):
    out, zero = l2_normalize_rows(raw)
    return out, zero


def _backprop_normalize(d_out: np.ndarray, raw: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Gradient through row-wise x -> x/|x|: (I - x_hat x_hat^T)/|x| applied per row.

    Zero rows pass the upstream gradient through unchanged (normalization is
    the identity there).
    """
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    proj = (d_out * out).sum(axis=1, keepdims=True)
    return (d_out - proj * out) / safe


@dataclass
class ImageCache:
    features: np.ndarray
    raw: np.ndarray
    out: np.ndarray
    zero_rows: np.ndarray


def encode_images(features: np.ndarray, params: EncoderParams) -> Tuple[np.ndarray, ImageCache]:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.w_img.shape[0]:
        raise ValueError(
            f"image features must be (B, {params.w_img.shape[0]}), got {features.shape}"
        )
    raw = features @ params.w_img
    out, zero = _normalize_with_cache(raw)
    return out, ImageCache(features, raw, out, zero)


@dataclass
class TextCache:
    bags: np.ndarray
    raw: np.ndarray
    out: np.ndarray


def encode_texts(
    reports: Sequence[Report], params: EncoderParams, cfg: EncoderConfig
) -> Tuple[np.ndarray, TextCache]:
    bags = np.stack([text_bag(r, cfg.text_hash_dim) for r in reports])
    raw = bags @ params.w_txt
    out, _ = _normalize_with_cache(raw)
    return out, TextCache(bags, raw, out)


def encode_text(report: Report, params: EncoderParams, cfg: EncoderConfig) -> np.ndarray:
    return encode_texts([report], params, cfg)[0][0]


@dataclass
class GraphForward:
    x: np.ndarray
    a_hat: np.ndarray
    ax: np.ndarray
    pre1: np.ndarray
    h1: np.ndarray
    ah1: np.ndarray
    h2: np.ndarray


@dataclass
class GraphCache:
    per_graph: List[GraphForward]
    raw: np.ndarray
    out: np.ndarray


def encode_graphs(
    graphs: Sequence[ReportGraph], params: EncoderParams
) -> Tuple[np.ndarray, GraphCache]:
    """Two graph convolutions, relu between, mean pooling, L2 normalization."""
    pooled: List[np.ndarray] = []
    per_graph: List[GraphForward] = []
    for g in graphs:
        x = g.node_features if g.node_features is not None else featurize_nodes(g)
        a_hat = normalized_adjacency(g)
        ax = a_hat @ x
        pre1 = ax @ params.w_g1
        h1 = np.maximum(pre1, 0.0)
        ah1 = a_hat @ h1
        h2 = ah1 @ params.w_g2
        pooled.append(h2.mean(axis=0))
        per_graph.append(GraphForward(x, a_hat, ax, pre1, h1, ah1, h2))
    raw = np.stack(pooled)
    out, _ = _normalize_with_cache(raw)
    return out, GraphCache(per_graph, raw, out)


def encode_graph(graph: ReportGraph, params: EncoderParams) -> np.ndarray:
    return encode_graphs([graph], params)[0][0]


def backward_images(d_out: np.ndarray, cache: ImageCache) -> np.ndarray:
    """Gradient of the loss w.r.t. w_img given d(loss)/d(image embeddings)."""
    d_raw = _backprop_normalize(d_out, cache.raw, cache.out)
    return cache.features.T @ d_raw


def backward_texts(d_out: np.ndarray, cache: TextCache) -> np.ndarray:
    d_raw = _backprop_normalize(d_out, cache.raw, cache.out)
    return cache.bags.T @ d_raw


def backward_graphs(
    d_out: np.ndarray, cache: GraphCache, params: EncoderParams
) -> Tuple[np.ndarray, np.ndarray]:
    d_raw = _backprop_normalize(d_out, cache.raw, cache.out)
    d_w1 = np.zeros_like(params.w_g1)
    d_w2 = np.zeros_like(params.w_g2)
    for i, fwd in enumerate(cache.per_graph):
        n = fwd.h2.shape[0]
        d_h2 = np.tile(d_raw[i] / n, (n, 1))
        d_w2 += fwd.ah1.T @ d_h2
        d_h1 = fwd.a_hat.T @ (d_h2 @ params.w_g2.T)
        d_pre1 = d_h1 * (fwd.pre1 > 0.0)
        d_w1 += fwd.ax.T @ d_pre1
    return d_w1, d_w2


def _format_row(row: np.ndarray) -> str:
    return " ".join(repr(float(x)) for x in row)


def save_checkpoint(
    path,
    params: EncoderParams,
    cfg: EncoderConfig,
    extra: Dict | None = None,
) -> None:
    """Plain-text checkpoint: version line, config echo, parameters, checksum.

    Floats are written with shortest round-trip repr, so write -> read ->
    write is byte-identical.
    """
    lines = [f"{CHECKPOINT_FORMAT} {CHECKPOINT_VERSION}"]
    config = {"encoder": asdict(cfg), "extra": extra or {}}
    lines.append("config " + json.dumps(config, sort_keys=True))
    for name, value in params.as_dict().items():
        lines.append(f"param {name} {value.shape[0]} {value.shape[1]}")
        for row in value:
            lines.append(_format_row(row))
    body = "\n".join(lines) + "\n"
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    with open(path, "w", encoding="utf-8") as f:
        f.write(body)
        f.write(f"checksum {digest}\n")


def load_checkpoint(path) -> Tuple[EncoderParams, EncoderConfig, Dict]:
    with open(path, "r", encoding="utf-8") as f:
        content = f.read()
    lines = content.splitlines()
    if not lines or not lines[-1].startswith("checksum "):
        raise ChecksumError(f"{path}: missing checksum line")
    body = "\n".join(lines[:-1]) + "\n"
    expected = lines[-1].split(" ", 1)[1].strip()
    actual = hashlib.sha256(body.encode("utf-8")).hexdigest()
    if actual != expected:
        raise ChecksumError(f"{path}: checksum mismatch (file corrupted)")

    header = lines[0].split()
    if len(header) != 2 or header[0] != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    version = int(header[1])
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"{path}: checkpoint version {version} unsupported; this build reads "
            f"version {CHECKPOINT_VERSION}"
        )
    if not lines[1].startswith("config "):
        raise CheckpointError(f"{path}: missing config line")
    config = json.loads(lines[1][len("config ") :])
    cfg = EncoderConfig(**config["encoder"])

    arrays: Dict[str, np.ndarray] = {}
    i = 2
    while i < len(lines) - 1:
        parts = lines[i].split()
        if len(parts) != 4 or parts[0] != "param":
            raise CheckpointError(f"{path}: malformed parameter header on line {i + 1}")
        name, rows, cols = parts[1], int(parts[2]), int(parts[3])
        block = lines[i + 1 : i + 1 + rows]
        if len(block) != rows:
            raise CheckpointError(f"{path}: truncated parameter {name!r}")
        arrays[name] = np.array(
            [[float(tok) for tok in line.split()] for line in block], dtype=np.float64
        ).reshape(rows, cols)
        i += 1 + rows
    missing = {"w_img", "w_txt", "w_g1", "w_g2"} - set(arrays)
    if missing:
        raise CheckpointError(f"{path}: missing parameters {sorted(missing)}")
    return EncoderParams(**arrays), cfg, config.get("extra", {})
