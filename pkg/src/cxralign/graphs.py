"""Entity/anatomy graphs extracted from annotated reports.

One observation node per entity mention (class set by polarity), one anatomy
node per anatomy-phrase match, and an edge between every observation and
every anatomy node of the same sentence.  Node features are 772-dim: a
768-dim hashed character-trigram embedding of the phrase concatenated with a
4-dim class one-hot.  Externally produced graphs can be loaded from a
line-delimited file and substituted for the rule extractor.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .report_nlp import NEGATED, POSITIVE, UNCERTAIN, Report

__all__ = [
    "NODE_CLASSES",
    "PHRASE_DIM",
    "FEATURE_DIM",
    "ReportGraph",
    "extract_graph",
    "phrase_feature",
    "featurize_nodes",
    "normalized_adjacency",
    "write_graph_records",
    "load_graph_records",
]

NODE_CLASSES: Tuple[str, ...] = ("ANAT-DP", "OBS-DP", "OBS-DA", "OBS-U")
PHRASE_DIM = 768
FEATURE_DIM = PHRASE_DIM + len(NODE_CLASSES)

_POLARITY_CLASS = {POSITIVE: "OBS-DP", NEGATED: "OBS-DA", UNCERTAIN: "OBS-U"}
_HASH_KEY = b"cxralign-trigram-v1"
_SENTINEL = ("GLOBAL", "ANAT-DP")


@dataclass
class ReportGraph:
    nodes: Tuple[Tuple[str, str], ...]  # (phrase, class)
    edges: Tuple[Tuple[int, int], ...]  # undirected, i < j, no self-edges
    node_features: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for phrase, cls in self.nodes:
            if cls not in NODE_CLASSES:
                raise ValueError(f"unknown node class {cls!r}")
        n = len(self.nodes)
        for i, j in self.edges:
            if i == j:
                raise ValueError("self-edges are not allowed")
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) out of range for {n} nodes")


def extract_graph(report: Report) -> ReportGraph:
    """Rule-based graph extraction from an annotated report.

    Reports with no lexicon hits at all get a single sentinel node so the
    graph encoder always has input.
    """
    nodes: List[Tuple[str, str]] = []
    edges: set = set()
    for sentence in report.sentences:
        obs_idx: List[int] = []
        anat_idx: List[int] = []
        for m in sentence.mentions:
            nodes.append((m.phrase, _POLARITY_CLASS[m.polarity]))
            obs_idx.append(len(nodes) - 1)
        for _, _, phrase in sentence.anatomy_spans:
            nodes.append((phrase, "ANAT-DP"))
            anat_idx.append(len(nodes) - 1)
        for o in obs_idx:
            for a in anat_idx:
                edges.add((min(o, a), max(o, a)))
    if not nodes:
        nodes = [_SENTINEL]
    return ReportGraph(nodes=tuple(nodes), edges=tuple(sorted(edges)))


def phrase_feature(phrase: str) -> np.ndarray:
    """Deterministic 768-dim unit vector from character trigrams.

    The phrase is padded with boundary markers; each trigram scatters +/-1
    into 8 keyed-hash coordinates, and the sum is L2-normalized.  Any
    non-empty phrase yields at least one trigram, so the result is never the
    zero vector.
    """
    v = np.zeros(PHRASE_DIM, dtype=np.float64)
    padded = "^" + phrase.lower() + "$"
    for i in range(len(padded) - 2):
        tri = padded[i : i + 3]
        digest = hashlib.blake2b(tri.encode("utf-8"), digest_size=24, key=_HASH_KEY).digest()
        for k in range(8):
            coord = int.from_bytes(digest[2 * k : 2 * k + 2], "big") % PHRASE_DIM
            sign = 1.0 if digest[16 + k] & 1 else -1.0
            v[coord] += sign
    norm = np.linalg.norm(v)
    if norm == 0.0:
        # Signs cancelled exactly; fall back to a single deterministic coordinate.
        v[int.from_bytes(hashlib.blake2b(padded.encode(), digest_size=2, key=_HASH_KEY).digest(), "big") % PHRASE_DIM] = 1.0
        norm = 1.0
    return v / norm


def featurize_nodes(graph: ReportGraph) -> np.ndarray:
    """Fill and return the (n, 772) node feature matrix."""
    n = len(graph.nodes)
    x = np.zeros((n, FEATURE_DIM), dtype=np.float64)
    for i, (phrase, cls) in enumerate(graph.nodes):
        x[i, :PHRASE_DIM] = phrase_feature(phrase)
        x[i, PHRASE_DIM + NODE_CLASSES.index(cls)] = 1.0
    graph.node_features = x
    return x


def normalized_adjacency(graph: ReportGraph) -> np.ndarray:
    """Symmetric degree-normalized adjacency with self-loops.

    A_hat = D^(-1/2) (A + I) D^(-1/2); its eigenvalues lie in [-1, 1].
    """
    n = len(graph.nodes)
    if n < 1:
        raise ValueError("graph must have at least one node")
    a = np.eye(n, dtype=np.float64)
    for i, j in graph.edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    d = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def write_graph_records(path, graphs: Dict[str, ReportGraph]) -> None:
    """Line-delimited JSON keyed by report text, substitutable for the extractor."""
    with open(path, "w", encoding="utf-8") as f:
        for key in graphs:
            g = graphs[key]
            row = {
                "key": key,
                "nodes": [[p, c] for p, c in g.nodes],
                "edges": [[i, j] for i, j in g.edges],
            }
            f.write(json.dumps(row) + "\n")


def load_graph_records(path) -> Dict[str, ReportGraph]:
    out: Dict[str, ReportGraph] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                out[row["key"]] = ReportGraph(
                    nodes=tuple((p, c) for p, c in row["nodes"]),
                    edges=tuple((int(i), int(j)) for i, j in row["edges"]),
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}: malformed graph record on line {lineno}: {exc}")
    return out
