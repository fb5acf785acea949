"""Tests for sentence splitting, negation scoping, and the clinical labeler."""

import numpy as np
import pytest

from cxralign.corpus import CorpusSpec, generate_corpus
from cxralign.report_nlp import (
    FINDINGS,
    LABELS,
    NEGATED,
    NO_FINDINGS,
    POSITIVE,
    UNCERTAIN,
    DEFAULT_LEXICON_TEXT,
    LexiconError,
    default_lexicon,
    detect_negation_scope,
    label_report,
    load_lexicon,
    normalize_label_vector,
    parse_lexicon,
    split_sentences,
    tokenize,
)


def labels_of(text: str) -> np.ndarray:
    return label_report(split_sentences(text))


class TestLabelSet:
    def test_thirteen_findings_plus_no_findings(self):
        assert len(FINDINGS) == 13
        assert len(LABELS) == 14
        assert LABELS[-1] == NO_FINDINGS


class TestTokenize:
    def test_lowercase_split_keeps_hyphens(self):
        assert tokenize("X-ray shows Mild Cardiomegaly.") == ("x-ray", "shows", "mild", "cardiomegaly")


class TestSplitSentences:
    def test_two_sentences(self):
        report = split_sentences("No pneumothorax. Heart size is normal.")
        assert len(report.sentences) == 2

    def test_single_sentence(self):
        report = split_sentences("No acute cardiopulmonary process.")
        assert len(report.sentences) == 1

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            split_sentences("   ")

    def test_abbreviation_and_decimal_not_split(self):
        report = split_sentences("The ET tube terminates 3.9 cm above the carina.")
        assert len(report.sentences) == 1
        report = split_sentences("Film reviewed by Dr. Smith. No pneumothorax.")
        assert len(report.sentences) == 2

    def test_roundtrip_over_synthetic_corpus(self):
        # Joining sentence texts with single spaces reproduces the
        # whitespace-normalized input.
        samples = generate_corpus(CorpusSpec(n_samples=50, normal_fraction=0.3, seed=9))
        for s in samples:
            report = split_sentences(s.report_text)
            normalized = " ".join(s.report_text.split())
            assert " ".join(sent.text for sent in report.sentences) == normalized


class TestNegationScope:
    def test_coordinated_negation(self):
        report = split_sentences("No pleural effusion or pneumothorax is seen.")
        pol = detect_negation_scope(report.sentences[0])
        assert pol == {"Pleural Effusion": NEGATED, "Pneumothorax": NEGATED}

    def test_plain_positive(self):
        report = split_sentences("There is pneumothorax")
        assert detect_negation_scope(report.sentences[0]) == {"Pneumothorax": POSITIVE}

    def test_clause_boundary_limits_scope(self):
        report = split_sentences("Right pleural effusion, no pneumothorax.")
        pol = detect_negation_scope(report.sentences[0])
        assert pol == {"Pleural Effusion": POSITIVE, "Pneumothorax": NEGATED}

    def test_backward_cues(self):
        report = split_sentences("The pleural effusion has resolved.")
        assert detect_negation_scope(report.sentences[0]) == {"Pleural Effusion": NEGATED}
        report = split_sentences("Pneumothorax is not seen.")
        assert detect_negation_scope(report.sentences[0]) == {"Pneumothorax": NEGATED}

    def test_rule_out_is_negation(self):
        report = split_sentences("Rule out pneumonia.")
        assert detect_negation_scope(report.sentences[0]) == {"Pneumonia": NEGATED}

    def test_uncertainty(self):
        report = split_sentences("Pneumonia cannot be excluded.")
        assert detect_negation_scope(report.sentences[0]) == {"Pneumonia": UNCERTAIN}
        report = split_sentences("There is a possible effusion.")
        assert detect_negation_scope(report.sentences[0]) == {"Pleural Effusion": UNCERTAIN}

    def test_normal_cue_only_for_mediastinal_entities(self):
        report = split_sentences("The heart size is normal.")
        assert detect_negation_scope(report.sentences[0]) == {"Cardiomegaly": NEGATED}


class TestLabelReport:
    def test_all_normal_report(self):
        v = labels_of("No acute cardiopulmonary process.")
        assert v[: len(FINDINGS)].sum() == 0.0
        assert v[-1] == 1.0

    def test_single_finding(self):
        v = labels_of("Mild cardiomegaly. The lungs are clear.")
        assert v[FINDINGS.index("Cardiomegaly")] == 1.0
        assert v.sum() == 1.0  # nothing else set, No Findings stays 0

    def test_two_findings(self):
        v = labels_of("Right pleural effusion. There is cardiomegaly.")
        assert v[FINDINGS.index("Pleural Effusion")] == 1.0
        assert v[FINDINGS.index("Cardiomegaly")] == 1.0
        assert v[-1] == 0.0

    def test_uncertain_counts_as_absent(self):
        v = labels_of("Possible pneumonia.")
        assert v[FINDINGS.index("Pneumonia")] == 0.0
        assert v[-1] == 1.0

    def test_at_least_one_flag_always_set(self):
        samples = generate_corpus(CorpusSpec(n_samples=200, seed=21))
        for s in samples:
            assert labels_of(s.report_text).sum() >= 1.0

    def test_idempotent_through_split_and_join(self):
        samples = generate_corpus(CorpusSpec(n_samples=60, normal_fraction=0.4, seed=5))
        for s in samples:
            report = split_sentences(s.report_text)
            rejoined = " ".join(sent.text for sent in report.sentences)
            np.testing.assert_array_equal(labels_of(s.report_text), labels_of(rejoined))


class TestClinicalVector:
    def test_no_findings_is_last_basis_vector(self):
        v = labels_of("No acute cardiopulmonary process.")
        unit = normalize_label_vector(v)
        expected = np.zeros(len(LABELS))
        expected[-1] = 1.0
        np.testing.assert_array_equal(unit, expected)

    def test_two_flags(self):
        v = labels_of("Right pleural effusion. There is cardiomegaly.")
        unit = normalize_label_vector(v)
        nonzero = unit[unit > 0]
        np.testing.assert_allclose(nonzero, 1.0 / np.sqrt(2.0), atol=1e-12)

    def test_three_flags(self):
        v = labels_of("Right pleural effusion. There is cardiomegaly. There is pulmonary edema.")
        unit = normalize_label_vector(v)
        nonzero = unit[unit > 0]
        np.testing.assert_allclose(nonzero, 1.0 / np.sqrt(3.0), atol=1e-12)

    def test_all_normal_pair_has_cosine_one(self):
        a = normalize_label_vector(labels_of("No acute cardiopulmonary process."))
        b = normalize_label_vector(labels_of("Heart size is normal. The lungs are clear."))
        assert float(a @ b) == pytest.approx(1.0, abs=1e-15)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            normalize_label_vector(np.zeros(len(LABELS)))


class TestLexicon:
    def test_default_parses(self):
        lex = default_lexicon()
        assert set(lex.entity_phrases) == set(FINDINGS)
        assert lex.mediastinal_entities == {"Cardiomegaly", "Enlarged Cardiomediastinum"}

    def test_file_roundtrip(self, tmp_path):
        path = tmp_path / "lexicon.txt"
        path.write_text(DEFAULT_LEXICON_TEXT, encoding="utf-8")
        lex = load_lexicon(path)
        assert lex == default_lexicon()

    def test_unknown_entity_rejected(self):
        with pytest.raises(LexiconError, match="unknown entity"):
            parse_lexicon("entity Dragon Pox\nphrase dragon pox\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(LexiconError, match="unknown key"):
            parse_lexicon("frobnicate yes\n")

    def test_phrase_outside_entity_rejected(self):
        with pytest.raises(LexiconError, match="outside"):
            parse_lexicon("phrase floating\n")

    def test_extension_with_new_phrase(self):
        extended = DEFAULT_LEXICON_TEXT + "\nentity Pneumonia\nphrase lower lobe infection\n"
        lex = parse_lexicon(extended)
        report = split_sentences("There is a lower lobe infection.", lex)
        assert report.sentences[0].entity_polarities() == {"Pneumonia": POSITIVE}
