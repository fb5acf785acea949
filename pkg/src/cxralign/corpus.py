"""Seeded synthetic image-report corpora with the pathologies of real CXR data.

Normal cases dominate (configurable fraction) and reuse a small set of
verbatim templates, so the corpus is full of exact duplicates; abnormal
cases draw entities from a long-tailed prevalence profile; absent entities
are often explicitly negated.  Image "features" are a fixed seeded linear
mix of the latent entity vector plus Gaussian noise; there are no pixels
because nothing downstream needs them.

Every generated report uses only lexicon vocabulary, so the labeler
reproduces the latent entity vector exactly; that guarantee is what makes
hard-negative validation airtight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .report_nlp import FINDINGS, Lexicon, Report, default_lexicon, split_sentences

__all__ = [
    "CorpusSpec",
    "Sample",
    "CorpusFormatError",
    "DEFAULT_ENTITY_WEIGHTS",
    "NORMAL_TEMPLATES",
    "NATURAL_NEGATION_TEMPLATES",
    "POSITIVE_FRAMES",
    "generate_corpus",
    "write_corpus",
    "load_corpus",
    "annotate_corpus",
]

CORPUS_FORMAT = "cxralign-corpus"
CORPUS_VERSION = 1

# Long-tailed prevalence per finding, in FINDINGS order: a few common
# entities and a thin tail, echoing real chest X-ray datasets.
DEFAULT_ENTITY_WEIGHTS: Tuple[float, ...] = (
    0.24,  # Cardiomegaly
    0.32,  # Lung Opacity
    0.26,  # Atelectasis
    0.05,  # Lung Lesion
    0.30,  # Pleural Effusion
    0.03,  # Fracture
    0.16,  # Support Devices
    0.04,  # Enlarged Cardiomediastinum
    0.02,  # Pleural Other
    0.10,  # Consolidation
    0.18,  # Edema
    0.06,  # Pneumothorax
    0.08,  # Pneumonia
)

# Verbatim normal-report templates; the duplicate_template_count first ones
# are used, reproducing the heavy template duplication of real data.  The
# first three are findings-style (long, negation-rich, naming entities they
# rule out) and the last two are impression one-liners.
NORMAL_TEMPLATES: Tuple[str, ...] = (
    "Heart size is normal. The pulmonary vasculature is normal. Lungs are clear. "
    "No pleural effusion or pneumothorax is seen. There are no acute osseous abnormalities.",
    "There is no focal consolidation. The cardiomediastinal silhouette is normal. "
    "Imaged osseous structures are intact. No free air below the right hemidiaphragm is seen.",
    "The lungs are clear without focal consolidation. No pleural effusion or pneumothorax is seen. "
    "The cardiac and mediastinal silhouettes are unremarkable.",
    "No acute cardiopulmonary process.",
    "No acute intrathoracic process.",
)

# Positive sentences use the canonical surface form inside function-word
# frames that reuse the same verbs the negated constructions use (seen,
# observed, evidence of).  A positive mention and its negation then differ
# by little more than the negation word itself, the way real reports flip
# "evidence of X" into "no evidence of X".
POSITIVE_FRAMES: Tuple[str, ...] = (
    "There is (finding).",
    "(Finding) is present.",
    "(Finding) is seen.",
    "(Finding) is observed.",
    "There is evidence of (finding).",
)


def _positive_sentence(entity: str, frame_index: int, lexicon: Lexicon) -> str:
    surface = lexicon.canonical[entity]
    text = POSITIVE_FRAMES[frame_index]
    return text.replace("(Finding)", surface.capitalize()).replace("(finding)", surface)

# Natural in-report negation phrasing mixes the dominant canonical "No ..."
# constructions with the diverse forms radiologists also use (resolved, free
# of, not seen).
NATURAL_NEGATION_TEMPLATES: Tuple[str, ...] = (
    "No (finding) is seen.",
    "There is no (finding).",
    "(Finding) is not seen.",
    "(Finding) has resolved.",
    "The chest is free of (finding).",
)

# Closing boilerplate for abnormal reports; none of these mention an entity.
# They keep the rate of "no"-bearing sentences comparable between normal and
# abnormal reports, the way real reports rule things out in both.
ABNORMAL_CLOSERS: Tuple[str, ...] = (
    "There is no additional abnormality.",
    "No further abnormality is identified.",
    "No other acute abnormality is seen.",
)


class CorpusFormatError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusSpec:
    n_samples: int
    normal_fraction: float = 0.6
    entity_weights: Tuple[float, ...] = DEFAULT_ENTITY_WEIGHTS
    duplicate_template_count: int = 3
    negation_mention_prob: float = 0.5
    image_feature_dim: int = 64
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")
        if not 0.0 <= self.normal_fraction <= 1.0:
            raise ValueError("normal_fraction must lie in [0, 1]")
        if not 0.0 <= self.negation_mention_prob <= 1.0:
            raise ValueError("negation_mention_prob must lie in [0, 1]")
        if len(self.entity_weights) != len(FINDINGS):
            raise ValueError(f"entity_weights must have {len(FINDINGS)} entries")
        if any(not 0.0 <= w <= 1.0 for w in self.entity_weights):
            raise ValueError("entity_weights must lie in [0, 1]")
        if not 1 <= self.duplicate_template_count <= len(NORMAL_TEMPLATES):
            raise ValueError(
                f"duplicate_template_count must lie in 1..{len(NORMAL_TEMPLATES)}"
            )
        if self.image_feature_dim < 1:
            raise ValueError("image_feature_dim must be positive")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be non-negative")


@dataclass
class Sample:
    id: str
    latent: np.ndarray          # (13,) 0/1 entity presence
    image_features: np.ndarray  # (image_feature_dim,)
    report_text: str

    @property
    def is_normal(self) -> bool:
        return self.latent.sum() == 0.0


def _natural_negation(entity: str, template_index: int, lexicon: Lexicon) -> str:
    surface = lexicon.canonical[entity]
    text = NATURAL_NEGATION_TEMPLATES[template_index]
    return text.replace("(Finding)", surface.capitalize()).replace("(finding)", surface)


def _abnormal_report(
    z: np.ndarray, rng: np.random.Generator, negation_prob: float, lexicon: Lexicon
) -> str:
    sentences: List[str] = []
    for i, entity in enumerate(FINDINGS):
        if z[i]:
            idx = int(rng.integers(len(POSITIVE_FRAMES)))
            sentences.append(_positive_sentence(entity, idx, lexicon))
    for i, entity in enumerate(FINDINGS):
        if z[i]:
            continue
        if rng.random() < negation_prob:
            idx = int(rng.integers(len(NATURAL_NEGATION_TEMPLATES)))
            sentences.append(_natural_negation(entity, idx, lexicon))
    first = int(rng.integers(len(ABNORMAL_CLOSERS)))
    sentences.append(ABNORMAL_CLOSERS[first])
    if rng.random() < 0.5:
        second = (first + 1 + int(rng.integers(len(ABNORMAL_CLOSERS) - 1))) % len(ABNORMAL_CLOSERS)
        sentences.append(ABNORMAL_CLOSERS[second])
    return " ".join(sentences)


def generate_corpus(spec: CorpusSpec, lexicon: Lexicon | None = None) -> List[Sample]:
    """Deterministic corpus for a spec; same spec, same bytes."""
    lex = lexicon or default_lexicon()
    rng = np.random.default_rng(spec.seed)
    n_findings = len(FINDINGS)
    mixing = rng.normal(0.0, 1.0, size=(spec.image_feature_dim, n_findings))
    weights = np.asarray(spec.entity_weights, dtype=np.float64)
    samples: List[Sample] = []
    for i in range(spec.n_samples):
        is_normal = rng.random() < spec.normal_fraction
        if is_normal:
            z = np.zeros(n_findings)
            text = NORMAL_TEMPLATES[int(rng.integers(spec.duplicate_template_count))]
        else:
            z = (rng.random(n_findings) < weights).astype(np.float64)
            if z.sum() == 0.0:
                z[int(rng.choice(n_findings, p=weights / weights.sum()))] = 1.0
            text = _abnormal_report(z, rng, spec.negation_mention_prob, lex)
        noise = rng.normal(0.0, 1.0, size=spec.image_feature_dim)
        features = mixing @ z + spec.noise_sigma * noise
        samples.append(
            Sample(
                id=f"synth-{i:06d}",
                latent=z,
                image_features=features,
                report_text=text,
            )
        )
    return samples


def write_corpus(path, samples: Sequence[Sample], feature_dim: int | None = None) -> None:
    """Header line plus one JSON record per sample, exact float round-trip."""
    if feature_dim is None:
        feature_dim = samples[0].image_features.shape[0] if samples else 0
    header = {"format": CORPUS_FORMAT, "version": CORPUS_VERSION, "feature_dim": feature_dim}
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header) + "\n")
        for s in samples:
            row = {
                "id": s.id,
                "report": s.report_text,
                "features": [float(x) for x in s.image_features],
                "latent": [int(x) for x in s.latent],
            }
            f.write(json.dumps(row) + "\n")


def load_corpus(path) -> List[Sample]:
    samples: List[Sample] = []
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
        try:
            header = json.loads(first)
            if header.get("format") != CORPUS_FORMAT:
                raise ValueError(f"not a {CORPUS_FORMAT} file")
            if header.get("version") != CORPUS_VERSION:
                raise ValueError(
                    f"corpus version {header.get('version')} unsupported; this build "
                    f"reads version {CORPUS_VERSION}"
                )
        except (json.JSONDecodeError, ValueError) as exc:
            raise CorpusFormatError(f"{path}: bad header line: {exc}")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                samples.append(
                    Sample(
                        id=row["id"],
                        latent=np.asarray(row["latent"], dtype=np.float64),
                        image_features=np.asarray(row["features"], dtype=np.float64),
                        report_text=row["report"],
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusFormatError(f"{path}: malformed record on line {lineno}: {exc}")
    return samples


def annotate_corpus(
    samples: Sequence[Sample], lexicon: Lexicon | None = None
) -> List[Tuple[str, Report]]:
    lex = lexicon or default_lexicon()
    return [(s.id, split_sentences(s.report_text, lex, s.id)) for s in samples]
