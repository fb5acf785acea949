"""Rule-based chest X-ray report processing.

Sentence splitting, tokenization, lexicon-driven entity mention detection
with negation/uncertainty scoping, and the clinical labeler that produces a
14-dim binary label vector: 13 findings plus a derived "No Findings" flag
that is 1 exactly when every finding flag is 0.

The lexicon (entity phrases, anatomy phrases, cue lists) ships embedded but
uses a plain-text format so it can be loaded from a file and extended; see
``parse_lexicon`` for the format.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

__all__ = [
    "FINDINGS",
    "NO_FINDINGS",
    "LABELS",
    "POSITIVE",
    "NEGATED",
    "UNCERTAIN",
    "LexiconError",
    "Lexicon",
    "Mention",
    "Sentence",
    "Report",
    "default_lexicon",
    "parse_lexicon",
    "load_lexicon",
    "tokenize",
    "split_sentences",
    "annotate_sentence",
    "detect_negation_scope",
    "label_report",
    "normalize_label_vector",
]

# Finding order is fixed; "No Findings" is always the last label slot.
FINDINGS: Tuple[str, ...] = (
    "Cardiomegaly",
    "Lung Opacity",
    "Atelectasis",
    "Lung Lesion",
    "Pleural Effusion",
    "Fracture",
    "Support Devices",
    "Enlarged Cardiomediastinum",
    "Pleural Other",
    "Consolidation",
    "Edema",
    "Pneumothorax",
    "Pneumonia",
)
NO_FINDINGS = "No Findings"
LABELS: Tuple[str, ...] = FINDINGS + (NO_FINDINGS,)

POSITIVE = "positive"
NEGATED = "negated"
UNCERTAIN = "uncertain"

_WORD_RE = re.compile(r"[a-z0-9]+(?:-[a-z0-9]+)*")
_WORD_OR_BREAK_RE = re.compile(r"[a-z0-9]+(?:-[a-z0-9]+)*|[,;:]")
_CLAUSE_BREAK_WORDS = frozenset(
    {"but", "however", "although", "though", "whereas", "while", "yet", "except"}
)
_ABBREVIATIONS = ("e.g.", "i.e.", "etc.", "dr.", "mr.", "mrs.", "vs.", "approx.", "cf.", "a.m.", "p.m.")


class LexiconError(ValueError):
    """Malformed lexicon file or unknown entity name."""


def tokenize(text: str) -> Tuple[str, ...]:
    """Lowercase word tokens; non-alphanumerics split, hyphenated terms kept."""
    return tuple(_WORD_RE.findall(text.lower()))


def _phrase(text: str) -> Tuple[str, ...]:
    toks = tokenize(text)
    if not toks:
        raise LexiconError(f"phrase has no tokens: {text!r}")
    return toks


@dataclass(frozen=True)
class Lexicon:
    """Phrase and cue tables driving mention detection and polarity scoping."""

    entity_phrases: Dict[str, Tuple[Tuple[str, ...], ...]]
    canonical: Dict[str, str]
    anatomy: Tuple[Tuple[str, ...], ...]
    neg_forward: Tuple[Tuple[str, ...], ...]
    neg_backward: Tuple[Tuple[str, ...], ...]
    neg_both: Tuple[Tuple[str, ...], ...]
    mediastinal_cues: Tuple[Tuple[str, ...], ...]
    unc_forward: Tuple[Tuple[str, ...], ...]
    unc_backward: Tuple[Tuple[str, ...], ...]
    mediastinal_entities: frozenset

    def __post_init__(self):
        unknown = set(self.entity_phrases) - set(FINDINGS)
        if unknown:
            raise LexiconError(f"unknown entities: {sorted(unknown)}")
        missing = set(FINDINGS) - set(self.entity_phrases)
        if missing:
            raise LexiconError(f"entities without phrases: {sorted(missing)}")
        bad_medi = self.mediastinal_entities - set(FINDINGS)
        if bad_medi:
            raise LexiconError(f"unknown mediastinal entities: {sorted(bad_medi)}")


# The embedded default, written in the external lexicon file format.  Every
# phrase is matched as a whole-token sequence after tokenization.
DEFAULT_LEXICON_TEXT = """\
# cxralign lexicon, format 1
# keys: entity / canonical / phrase / anatomy / negation-forward /
#       negation-backward / negation-both / mediastinal-cue /
#       uncertainty-forward / uncertainty-backward / mediastinal-entity

entity Cardiomegaly
canonical cardiomegaly
phrase cardiomegaly
phrase enlarged heart
phrase heart is enlarged
phrase cardiac enlargement
phrase heart size
phrase cardiac silhouette

entity Lung Opacity
canonical lung opacity
phrase lung opacity
phrase opacity
phrase opacities
phrase opacification
phrase infiltrate
phrase infiltrates

entity Atelectasis
canonical atelectasis
phrase atelectasis
phrase atelectatic

entity Lung Lesion
canonical lung lesion
phrase lung lesion
phrase nodule
phrase nodules
phrase mass
phrase masses
phrase lesion
phrase lesions

entity Pleural Effusion
canonical pleural effusion
phrase pleural effusion
phrase pleural effusions
phrase effusion
phrase effusions
phrase pleural fluid

entity Fracture
canonical fracture
phrase fracture
phrase fractures
phrase rib fracture
phrase rib fractures

entity Support Devices
canonical support device
phrase support device
phrase support devices
phrase endotracheal tube
phrase et tube
phrase feeding tube
phrase chest tube
phrase tube
phrase catheter
phrase central line
phrase picc line
phrase picc
phrase pacemaker

entity Enlarged Cardiomediastinum
canonical enlarged cardiomediastinum
phrase enlarged cardiomediastinum
phrase cardiomediastinal silhouette
phrase widened mediastinum
phrase mediastinum is widened
phrase mediastinal widening
phrase mediastinal contour
phrase mediastinal contours

entity Pleural Other
canonical pleural thickening
phrase pleural thickening
phrase pleural plaque
phrase pleural plaques
phrase pleural scarring

entity Consolidation
canonical consolidation
phrase consolidation
phrase consolidations
phrase airspace consolidation
phrase focal consolidation

entity Edema
canonical pulmonary edema
phrase pulmonary edema
phrase edema
phrase vascular congestion
phrase interstitial edema

entity Pneumothorax
canonical pneumothorax
phrase pneumothorax
phrase pneumothoraces

entity Pneumonia
canonical pneumonia
phrase pneumonia
phrase infectious process

mediastinal-entity Cardiomegaly
mediastinal-entity Enlarged Cardiomediastinum

anatomy lung
anatomy lungs
anatomy lobe
anatomy lobes
anatomy pleura
anatomy pleural
anatomy heart
anatomy cardiac
anatomy cardiomediastinal
anatomy mediastinum
anatomy mediastinal
anatomy hilar
anatomy hila
anatomy hilum
anatomy chest
anatomy chest wall
anatomy thorax
anatomy rib
anatomy ribs
anatomy diaphragm
anatomy hemidiaphragm
anatomy costophrenic angle
anatomy base
anatomy bases
anatomy apex
anatomy apices
anatomy osseous structures
anatomy bony thorax

negation-forward no
negation-forward not
negation-forward without
negation-forward free of
negation-forward clear of
negation-forward negative for
negation-forward rule out
negation-forward rules out

negation-backward resolved
negation-backward removed
negation-backward ruled out
negation-backward not seen
negation-backward not observed
negation-backward not identified
negation-backward not demonstrated
negation-backward not present
negation-backward not visualized

negation-both absent

mediastinal-cue normal
mediastinal-cue unremarkable
mediastinal-cue within normal limits

uncertainty-forward may
uncertainty-forward possible
uncertainty-forward possibly
uncertainty-forward cannot exclude
uncertainty-forward suspected
uncertainty-forward suspicious for

uncertainty-backward suspected
uncertainty-backward cannot be excluded
"""


def parse_lexicon(text: str) -> Lexicon:
    """Parse the key-value lexicon format.

    One directive per line, ``<key> <value>``; blank lines and ``#`` comments
    ignored.  ``entity <Name>`` opens a block, ``canonical``/``phrase`` lines
    attach to it.  All other keys are global.  Entity names must come from
    the fixed label set; extension means adding phrases, not labels.
    """
    entity_phrases: Dict[str, List[Tuple[str, ...]]] = {}
    canonical: Dict[str, str] = {}
    anatomy: List[Tuple[str, ...]] = []
    tables: Dict[str, List[Tuple[str, ...]]] = {
        "negation-forward": [],
        "negation-backward": [],
        "negation-both": [],
        "mediastinal-cue": [],
        "uncertainty-forward": [],
        "uncertainty-backward": [],
    }
    mediastinal: set = set()
    current: str | None = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" ")
        value = value.strip()
        if not value:
            raise LexiconError(f"line {lineno}: missing value for {key!r}")
        if key == "entity":
            if value not in FINDINGS:
                raise LexiconError(f"line {lineno}: unknown entity {value!r}")
            current = value
            entity_phrases.setdefault(current, [])
        elif key == "canonical":
            if current is None:
                raise LexiconError(f"line {lineno}: canonical outside an entity block")
            canonical[current] = value.lower()
        elif key == "phrase":
            if current is None:
                raise LexiconError(f"line {lineno}: phrase outside an entity block")
            entity_phrases[current].append(_phrase(value))
        elif key == "anatomy":
            anatomy.append(_phrase(value))
        elif key == "mediastinal-entity":
            if value not in FINDINGS:
                raise LexiconError(f"line {lineno}: unknown entity {value!r}")
            mediastinal.add(value)
        elif key in tables:
            tables[key].append(_phrase(value))
        else:
            raise LexiconError(f"line {lineno}: unknown key {key!r}")

    def by_length(phrases: Iterable[Tuple[str, ...]]) -> Tuple[Tuple[str, ...], ...]:
        return tuple(sorted(set(phrases), key=lambda p: (-len(p), p)))

    for name in entity_phrases:
        canonical.setdefault(name, " ".join(entity_phrases[name][0]))
    return Lexicon(
        entity_phrases={n: by_length(ps) for n, ps in entity_phrases.items()},
        canonical=canonical,
        anatomy=by_length(anatomy),
        neg_forward=by_length(tables["negation-forward"]),
        neg_backward=by_length(tables["negation-backward"]),
        neg_both=by_length(tables["negation-both"]),
        mediastinal_cues=by_length(tables["mediastinal-cue"]),
        unc_forward=by_length(tables["uncertainty-forward"]),
        unc_backward=by_length(tables["uncertainty-backward"]),
        mediastinal_entities=frozenset(mediastinal),
    )


def load_lexicon(path) -> Lexicon:
    with open(path, "r", encoding="utf-8") as f:
        return parse_lexicon(f.read())


_DEFAULT: Lexicon | None = None


def default_lexicon() -> Lexicon:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = parse_lexicon(DEFAULT_LEXICON_TEXT)
    return _DEFAULT


@dataclass(frozen=True)
class Mention:
    """One lexicon phrase match inside a sentence (token span, half-open)."""

    entity: str
    polarity: str
    start: int
    end: int
    phrase: str


@dataclass(frozen=True)
class Sentence:
    text: str
    tokens: Tuple[str, ...]
    mentions: Tuple[Mention, ...]
    anatomy_spans: Tuple[Tuple[int, int, str], ...]

    @property
    def entities(self) -> frozenset:
        """Set of (entity, polarity) pairs, one per entity in this sentence."""
        return frozenset(self.entity_polarities().items())

    def entity_polarities(self) -> Dict[str, str]:
        """Per-entity polarity; positive wins over uncertain wins over negated."""
        rank = {POSITIVE: 2, UNCERTAIN: 1, NEGATED: 0}
        out: Dict[str, str] = {}
        for m in self.mentions:
            if m.entity not in out or rank[m.polarity] > rank[out[m.entity]]:
                out[m.entity] = m.polarity
        return out

    def has_entity(self, entity: str) -> bool:
        return any(m.entity == entity for m in self.mentions)


@dataclass(frozen=True)
class Report:
    id: str
    sentences: Tuple[Sentence, ...]

    @property
    def text(self) -> str:
        return " ".join(s.text for s in self.sentences)

    def entity_polarities(self) -> Dict[str, str]:
        rank = {POSITIVE: 2, UNCERTAIN: 1, NEGATED: 0}
        out: Dict[str, str] = {}
        for s in self.sentences:
            for e, p in s.entity_polarities().items():
                if e not in out or rank[p] > rank[out[e]]:
                    out[e] = p
        return out

    def positive_entities(self) -> Tuple[str, ...]:
        pol = self.entity_polarities()
        return tuple(e for e in FINDINGS if pol.get(e) == POSITIVE)


def _match_phrases(
    tokens: Sequence[str], phrases: Sequence[Tuple[str, ...]]
) -> List[Tuple[int, int, str]]:
    """Greedy longest-first, non-overlapping matches over one phrase table."""
    out: List[Tuple[int, int, str]] = []
    i = 0
    n = len(tokens)
    while i < n:
        hit = None
        for p in phrases:  # sorted longest-first
            k = len(p)
            if i + k <= n and tuple(tokens[i : i + k]) == p:
                hit = (i, i + k, " ".join(p))
                break
        if hit is None:
            i += 1
        else:
            out.append(hit)
            i = hit[1]
    return out


def _clauses(text: str) -> List[Tuple[int, int]]:
    """Half-open word-token index ranges delimited by , ; : and break words."""
    spans: List[Tuple[int, int]] = []
    start = 0
    idx = 0
    for m in _WORD_OR_BREAK_RE.finditer(text.lower()):
        tok = m.group(0)
        if tok in ",;:":
            if idx > start:
                spans.append((start, idx))
            start = idx
            continue
        if tok in _CLAUSE_BREAK_WORDS:
            if idx > start:
                spans.append((start, idx))
            idx += 1
            start = idx
            continue
        idx += 1
    if idx > start:
        spans.append((start, idx))
    return spans or [(0, 0)]


def _cue_spans(tokens, phrases):
    out = []
    n = len(tokens)
    for p in phrases:
        k = len(p)
        for i in range(n - k + 1):
            if tuple(tokens[i : i + k]) == p:
                out.append((i, i + k))
    return out


def annotate_sentence(text: str, lexicon: Lexicon | None = None) -> Sentence:
    """Tokenize one sentence and resolve entity mention polarity.

    A mention is negated if a negation cue governs it inside the same clause
    (forward cues precede the mention, backward cues follow it), uncertain if
    an uncertainty cue governs it the same way, otherwise positive.  Cues in
    the mediastinal table apply in either direction but only to mediastinal
    entities.  Negation takes precedence over uncertainty.
    """
    lex = lexicon or default_lexicon()
    text = " ".join(text.split())
    if not text:
        raise ValueError("empty sentence")
    tokens = tokenize(text)
    clauses = _clauses(text)

    def clause_of(i: int) -> Tuple[int, int]:
        for lo, hi in clauses:
            if lo <= i < hi:
                return (lo, hi)
        return clauses[-1]

    neg_f = _cue_spans(tokens, lex.neg_forward)
    neg_b = _cue_spans(tokens, lex.neg_backward)
    neg_2 = _cue_spans(tokens, lex.neg_both)
    medi = _cue_spans(tokens, lex.mediastinal_cues)
    unc_f = _cue_spans(tokens, lex.unc_forward)
    unc_b = _cue_spans(tokens, lex.unc_backward)

    def governed(ms: int, me: int, mediastinal: bool) -> str:
        lo, hi = clause_of(ms)

        def same_clause(cs: int) -> bool:
            return lo <= cs < hi

        for cs, ce in neg_f:
            if same_clause(cs) and ce <= ms:
                return NEGATED
        for cs, ce in neg_b:
            if same_clause(cs) and me <= cs:
                return NEGATED
        for cs, ce in neg_2:
            if same_clause(cs) and (ce <= ms or me <= cs):
                return NEGATED
        if mediastinal:
            for cs, ce in medi:
                if same_clause(cs):
                    return NEGATED
        for cs, ce in unc_f:
            if same_clause(cs) and ce <= ms:
                return UNCERTAIN
        for cs, ce in unc_b:
            if same_clause(cs) and me <= cs:
                return UNCERTAIN
        return POSITIVE

    mentions: List[Mention] = []
    for entity in FINDINGS:
        for s, e, phrase in _match_phrases(tokens, lex.entity_phrases[entity]):
            pol = governed(s, e, entity in lex.mediastinal_entities)
            mentions.append(Mention(entity, pol, s, e, phrase))
    mentions.sort(key=lambda m: (m.start, m.end, m.entity))
    anatomy = tuple(_match_phrases(tokens, lex.anatomy))
    return Sentence(text=text, tokens=tokens, mentions=tuple(mentions), anatomy_spans=anatomy)


def _sentence_boundaries(text: str) -> List[str]:
    lowered = text.lower()
    pieces: List[str] = []
    start = 0
    n = len(text)
    for i, ch in enumerate(text):
        if ch not in ".!?":
            continue
        nxt = text[i + 1] if i + 1 < n else " "
        if not (nxt.isspace() or nxt in "\"')]" or i + 1 == n):
            continue  # internal dot, e.g. "a.m" or "3.9"
        if ch == "." and i > 0 and text[i - 1].isdigit() and i + 1 < n and text[i + 1].isdigit():
            continue
        if ch == "." and any(
            lowered[: i + 1].endswith(a)
            and (i + 1 == len(a) or not lowered[i - len(a)].isalnum())
            for a in _ABBREVIATIONS
        ):
            continue
        piece = text[start : i + 1].strip()
        if piece:
            pieces.append(piece)
        start = i + 1
    tail = text[start:].strip()
    if tail:
        pieces.append(tail)
    return pieces


def split_sentences(text: str, lexicon: Lexicon | None = None, report_id: str = "") -> Report:
    """Split raw report text on . ! ? outside abbreviations and annotate.

    Joining the resulting sentence texts with single spaces reproduces the
    whitespace-normalized input.
    """
    if not text or not text.strip():
        raise ValueError("report text is empty")
    pieces = _sentence_boundaries(" ".join(text.split()))
    lex = lexicon or default_lexicon()
    sentences = tuple(annotate_sentence(p, lex) for p in pieces)
    if not sentences:
        raise ValueError("report text has no sentences")
    return Report(id=report_id, sentences=sentences)


def detect_negation_scope(sentence: Sentence) -> Dict[str, str]:
    """Per-entity polarity for an annotated sentence."""
    return sentence.entity_polarities()


def label_report(report: Report) -> np.ndarray:
    """14-dim binary label vector for a parsed report.

    A finding flag is 1 iff some sentence mentions it with positive polarity;
    uncertain mentions count as absent.  The trailing "No Findings" flag is 1
    iff every finding flag is 0, so the vector is never all-zero.
    """
    v = np.zeros(len(LABELS), dtype=np.float64)
    pol = report.entity_polarities()
    for i, name in enumerate(FINDINGS):
        if pol.get(name) == POSITIVE:
            v[i] = 1.0
    if v[: len(FINDINGS)].sum() == 0.0:
        v[-1] = 1.0
    return v


def normalize_label_vector(v: np.ndarray) -> np.ndarray:
    """L2-normalize a label vector; valid vectors always have a set flag."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError("label vector is all-zero; invariant violated")
    return v / norm
