"""Hard-negative report generation and negation-benchmark triplet construction.

For an abnormal report, one positive entity is selected, every sentence
mentioning it is removed (``r_r``), and a templated negation of it is
inserted at the beginning, middle, or end (``r_n``).  For normal reports the
hard negative is instead drawn from a pool of reports carrying exactly one
positive entity.  Either way the hard negative differs from the original by
exactly one entity, which is what makes it hard.

Benchmark triplets (image, r, r_n) and (image, r, r_r) are emitted as
line-delimited JSON with a fixed field order and can be re-validated through
the labeler at any time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .report_nlp import (
    FINDINGS,
    POSITIVE,
    Lexicon,
    Report,
    annotate_sentence,
    default_lexicon,
    label_report,
    split_sentences,
)

__all__ = [
    "MEDIASTINAL_TEMPLATES",
    "GENERAL_TEMPLATES",
    "POSITIONS",
    "PRIORITY_ENTITIES",
    "NEUTRAL_FILLER",
    "NotEligibleError",
    "PoolExhaustedError",
    "TripletRecord",
    "HardNegativePool",
    "derived_rng",
    "empirical_entity_weights",
    "select_entity",
    "remove_entity_sentences",
    "insert_negation",
    "make_hard_negative",
    "build_cxr_align_set",
    "validate_triplet",
    "cleared_labels",
    "write_triplets",
    "load_triplets",
]

MEDIASTINAL_TEMPLATES: Tuple[str, ...] = (
    "The cardiomediastinal silhouette is normal.",
    "The cardiac silhouette is unremarkable.",
    "The heart size is normal.",
    "The cardiomediastinal silhouette is within normal limits.",
    "No cardiomegaly.",
)
GENERAL_TEMPLATES: Tuple[str, ...] = (
    "No (finding) is seen.",
    "No (finding) is observed.",
    "There is no (finding).",
    "No evidence of (finding).",
)
POSITIONS: Tuple[str, ...] = ("beginning", "middle", "end")

# Entities whose negations are most common in real reports get a sampling
# boost when building the benchmark.
PRIORITY_ENTITIES: Tuple[str, ...] = (
    "Cardiomegaly",
    "Atelectasis",
    "Edema",
    "Pleural Effusion",
    "Pneumothorax",
    "Consolidation",
)

NEUTRAL_FILLER = "The remainder of the exam is unremarkable."


class NotEligibleError(ValueError):
    """Report has no positive entity to select (normal reports are excluded)."""


class PoolExhaustedError(RuntimeError):
    """No single-positive-entity report available to serve as hard negative."""


@dataclass(frozen=True)
class TripletRecord:
    image_id: str
    original: Report
    removed: Report
    negated: Report
    selected_entity: str
    insertion_position: str
    template_index: int
    filler_inserted: bool = False


def derived_rng(seed: int, key: str) -> np.random.Generator:
    """Generator derived from a base seed and a string key, stable across runs."""
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return np.random.default_rng([int(seed), int.from_bytes(digest[:8], "big")])


def empirical_entity_weights(
    reports: Iterable[Report], priority_multiplier: float = 1.0
) -> Dict[str, float]:
    """Positive-entity frequencies over a corpus, optionally boosting the
    prioritized entities."""
    counts = {e: 0.0 for e in FINDINGS}
    for r in reports:
        for e in r.positive_entities():
            counts[e] += 1.0
    for e in PRIORITY_ENTITIES:
        counts[e] *= priority_multiplier
    return counts


def select_entity(
    report: Report,
    rng: np.random.Generator,
    weights: Dict[str, float] | None = None,
) -> str:
    """Sample one positive entity of the report, weighted if weights given."""
    candidates = report.positive_entities()
    if not candidates:
        raise NotEligibleError(f"report {report.id!r} has no positive entity")
    if weights is None:
        p = np.ones(len(candidates))
    else:
        p = np.array([max(float(weights.get(e, 0.0)), 0.0) for e in candidates])
        if p.sum() <= 0.0:
            p = np.ones(len(candidates))
    p = p / p.sum()
    return candidates[int(rng.choice(len(candidates), p=p))]


def remove_entity_sentences(
    report: Report, entity: str, lexicon: Lexicon | None = None
) -> Tuple[Report, bool]:
    """Drop every sentence mentioning ``entity`` (any polarity), keeping order.

    If removal empties the report a neutral filler sentence is substituted
    and flagged via the second return value.
    """
    pol = report.entity_polarities()
    if pol.get(entity) != POSITIVE:
        raise ValueError(f"entity {entity!r} is not positive in report {report.id!r}")
    kept = tuple(s for s in report.sentences if not s.has_entity(entity))
    if kept:
        return Report(id=report.id, sentences=kept), False
    filler = annotate_sentence(NEUTRAL_FILLER, lexicon or default_lexicon())
    return Report(id=report.id, sentences=(filler,)), True


def render_negation(entity: str, template_index: int, lexicon: Lexicon | None = None) -> str:
    """The negation sentence inserted for ``entity`` under a template index."""
    lex = lexicon or default_lexicon()
    if entity in lex.mediastinal_entities:
        templates = MEDIASTINAL_TEMPLATES
    else:
        templates = GENERAL_TEMPLATES
    if not 0 <= template_index < len(templates):
        raise ValueError(
            f"template_index {template_index} out of range for {entity!r} "
            f"(valid 0..{len(templates) - 1})"
        )
    return templates[template_index].replace("(finding)", lex.canonical[entity])


def insertion_index(position: str, n_sentences: int) -> int:
    if position == "beginning":
        return 0
    if position == "middle":
        return n_sentences // 2
    if position == "end":
        return n_sentences
    raise ValueError(f"unknown position {position!r}")


def insert_negation(
    report_removed: Report,
    entity: str,
    position: str,
    template_index: int,
    lexicon: Lexicon | None = None,
) -> Report:
    """Insert the templated negation of ``entity`` into an entity-free report."""
    lex = lexicon or default_lexicon()
    labels = label_report(report_removed)
    if labels[FINDINGS.index(entity)] != 0.0:
        raise ValueError(f"entity {entity!r} still positive in report {report_removed.id!r}")
    sentence = annotate_sentence(render_negation(entity, template_index, lex), lex)
    idx = insertion_index(position, len(report_removed.sentences))
    sentences = (
        report_removed.sentences[:idx] + (sentence,) + report_removed.sentences[idx:]
    )
    return Report(id=report_removed.id, sentences=sentences)


class HardNegativePool:
    """Pool of reports with exactly one positive entity, filtered once."""

    def __init__(self, reports: Sequence[Report]):
        self.reports: List[Report] = []
        for r in reports:
            labels = label_report(r)
            if labels[: len(FINDINGS)].sum() == 1.0:
                self.reports.append(r)

    def __len__(self) -> int:
        return len(self.reports)

    def draw(self, rng: np.random.Generator) -> Report:
        if not self.reports:
            raise PoolExhaustedError("no single-positive-entity report available")
        return self.reports[int(rng.integers(len(self.reports)))]


def make_hard_negative(
    report: Report,
    rng: np.random.Generator,
    normal_pool: HardNegativePool | Sequence[Report],
    lexicon: Lexicon | None = None,
    weights: Dict[str, float] | None = None,
) -> Report:
    """Hard negative differing from ``report`` by exactly one entity.

    Abnormal reports get a negated variant of one of their positive entities;
    normal reports are swapped for a pool report with a single positive
    entity.
    """
    lex = lexicon or default_lexicon()
    if report.positive_entities():
        entity = select_entity(report, rng, weights)
        removed, _ = remove_entity_sentences(report, entity, lex)
        position = POSITIONS[int(rng.integers(len(POSITIONS)))]
        n_templates = (
            len(MEDIASTINAL_TEMPLATES)
            if entity in lex.mediastinal_entities
            else len(GENERAL_TEMPLATES)
        )
        template_index = int(rng.integers(n_templates))
        return insert_negation(removed, entity, position, template_index, lex)
    pool = normal_pool if isinstance(normal_pool, HardNegativePool) else HardNegativePool(normal_pool)
    return pool.draw(rng)


def build_cxr_align_set(
    corpus: Sequence[Tuple[str, Report]],
    seed: int,
    weights: Dict[str, float] | None = None,
    priority_multiplier: float = 1.0,
    lexicon: Lexicon | None = None,
) -> Tuple[List[TripletRecord], int, Dict[str, int]]:
    """One validated triplet per abnormal report; normal reports are skipped.

    Entity selection uses corpus-frequency weights (with the configured
    priority boost) unless explicit weights are given.  Each report draws
    randomness from a generator derived from (seed, image_id), so records
    are independent of corpus order.
    """
    lex = lexicon or default_lexicon()
    if weights is None:
        weights = empirical_entity_weights((r for _, r in corpus), priority_multiplier)
    records: List[TripletRecord] = []
    skipped = 0
    entity_counts: Dict[str, int] = {e: 0 for e in FINDINGS}
    for image_id, report in corpus:
        if not report.positive_entities():
            skipped += 1
            continue
        rng = derived_rng(seed, image_id)
        entity = select_entity(report, rng, weights)
        removed, filler = remove_entity_sentences(report, entity, lex)
        position = POSITIONS[int(rng.integers(len(POSITIONS)))]
        n_templates = (
            len(MEDIASTINAL_TEMPLATES)
            if entity in lex.mediastinal_entities
            else len(GENERAL_TEMPLATES)
        )
        template_index = int(rng.integers(n_templates))
        negated = insert_negation(removed, entity, position, template_index, lex)
        records.append(
            TripletRecord(
                image_id=image_id,
                original=report,
                removed=removed,
                negated=negated,
                selected_entity=entity,
                insertion_position=position,
                template_index=template_index,
                filler_inserted=filler,
            )
        )
        entity_counts[entity] += 1
    return records, skipped, entity_counts


def cleared_labels(labels: np.ndarray, entity: str) -> np.ndarray:
    """Label vector with one finding cleared and "No Findings" recomputed."""
    v = np.array(labels, dtype=np.float64, copy=True)
    v[FINDINGS.index(entity)] = 0.0
    v[-1] = 1.0 if v[: len(FINDINGS)].sum() == 0.0 else 0.0
    return v


def validate_triplet(
    record: TripletRecord, lexicon: Lexicon | None = None
) -> Tuple[bool, str]:
    """Check the three triplet invariants through the labeler.

    Returns (True, "ok") or (False, reason) naming the first violation.
    """
    lex = lexicon or default_lexicon()
    orig = label_report(record.original)
    removed = label_report(record.removed)
    expected = cleared_labels(orig, record.selected_entity)
    if not np.array_equal(removed, expected):
        return False, (
            f"labels of removed report differ from original beyond "
            f"{record.selected_entity!r}"
        )
    negated = label_report(record.negated)
    if not np.array_equal(negated, removed):
        return False, "labels of negated report differ from removed report"
    n = len(record.removed.sentences)
    if len(record.negated.sentences) != n + 1:
        return False, "negated report does not contain exactly one extra sentence"
    idx = insertion_index(record.insertion_position, n)
    expected_sentence = render_negation(record.selected_entity, record.template_index, lex)
    if record.negated.sentences[idx].text != expected_sentence:
        return False, (
            f"inserted sentence at index {idx} does not match the "
            f"{record.selected_entity!r} template"
        )
    rest = record.negated.sentences[:idx] + record.negated.sentences[idx + 1 :]
    if tuple(s.text for s in rest) != tuple(s.text for s in record.removed.sentences):
        return False, "negated report does not preserve the removed report around the insertion"
    return True, "ok"


def write_triplets(path, records: Sequence[TripletRecord]) -> None:
    """Line-delimited JSON, one record per line, fixed field order."""
    with open(path, "w", encoding="utf-8") as f:
        for t in records:
            row = {
                "image_id": t.image_id,
                "r": t.original.text,
                "r_r": t.removed.text,
                "r_n": t.negated.text,
                "entity": t.selected_entity,
                "position": t.insertion_position,
                "template_index": t.template_index,
            }
            f.write(json.dumps(row) + "\n")


def load_triplets(path, lexicon: Lexicon | None = None) -> List[TripletRecord]:
    lex = lexicon or default_lexicon()
    records: List[TripletRecord] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                records.append(
                    TripletRecord(
                        image_id=row["image_id"],
                        original=split_sentences(row["r"], lex, row["image_id"]),
                        removed=split_sentences(row["r_r"], lex, row["image_id"]),
                        negated=split_sentences(row["r_n"], lex, row["image_id"]),
                        selected_entity=row["entity"],
                        insertion_position=row["position"],
                        template_index=int(row["template_index"]),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}: malformed triplet record on line {lineno}: {exc}")
    return records
