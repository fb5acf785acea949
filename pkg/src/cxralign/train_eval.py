"""Training loop and the evaluation protocol suite.

Training samples fixed-size batches, builds negation hard negatives on the
fly, applies sentence-shuffle augmentation before text encoding, and runs
AdamW (or SGD) with an optional linear-warmup + cosine schedule.  The whole
trajectory is a pure function of (corpus, configs, seed): shuffling, hard
negatives, and augmentation draw from generators derived from the seed, and
loss terms are reduced in sorted order.

Evaluations are read-only over a checkpoint: prompt-pair zero-shot AUC,
report retrieval with clinical macro scores, negation-benchmark accuracy,
adversarial present/absent prediction, and normal-case detection.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .corpus import Sample
from .encoders import (
    EncoderConfig,
    EncoderParams,
    GraphCache,
    TextCache,
    backward_graphs,
    backward_images,
    backward_texts,
    encode_graphs,
    encode_images,
    init_params,
    load_checkpoint as _load_encoder_checkpoint,
    save_checkpoint as _save_encoder_checkpoint,
    text_bag,
)
from .graphs import ReportGraph, extract_graph, featurize_nodes
from .loss import BatchEmbeddings, ConfigurationError, LossConfig, loss_gradients
from .negatives import HardNegativePool, TripletRecord, make_hard_negative
from .numerics import l2_normalize_rows
from .report_nlp import (
    FINDINGS,
    Lexicon,
    Report,
    default_lexicon,
    label_report,
    split_sentences,
)

__all__ = [
    "TrainConfig",
    "EvalResult",
    "TrainingDivergedError",
    "UndefinedMetricError",
    "train",
    "auc_rank_sum",
    "zero_shot_scores",
    "zero_shot_eval",
    "retrieval_eval",
    "cxr_align_eval",
    "adversarial_eval",
    "build_adversarial_cases",
    "normal_case_detection_eval",
    "save_checkpoint",
    "load_checkpoint",
    "loss_config_from_echo",
    "write_metrics_log",
    "write_eval_result",
]


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries a snapshot of the offending batch."""

    def __init__(self, message: str, snapshot: Dict):
        super().__init__(message)
        self.snapshot = snapshot


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given ground truth (e.g. single-class AUC)."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 10
    learning_rate: float = 4e-6
    warmup_steps: int = 0
    schedule: str = "cosine"          # "cosine" (with linear warmup) or "constant"
    optimizer: str = "adamw"          # "adamw" or "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    shuffle_sentences: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be non-negative")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0 or self.warmup_steps < 0:
            raise ValueError("epochs and warmup_steps must be non-negative")


@dataclass
class EvalResult:
    task: str
    metrics: Dict[str, float]
    breakdown: Dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


class _ReportEncodingCache:
    """Per-report-content caches of things that do not depend on parameters.

    Text bags are keyed by the sentence multiset (sentence order never
    changes a bag), graphs by the report text in original order.
    """

    def __init__(self, cfg: EncoderConfig, graph_overrides: Dict[str, ReportGraph] | None):
        self.cfg = cfg
        self.graph_overrides = graph_overrides or {}
        self._bags: Dict[str, np.ndarray] = {}
        self._graphs: Dict[str, ReportGraph] = {}
        self._labels: Dict[str, np.ndarray] = {}

    @staticmethod
    def _bag_key(report: Report) -> str:
        return "\x00".join(sorted(s.text for s in report.sentences))

    def bag(self, report: Report) -> np.ndarray:
        key = self._bag_key(report)
        if key not in self._bags:
            self._bags[key] = text_bag(report, self.cfg.text_hash_dim)
        return self._bags[key]

    def graph(self, report: Report) -> ReportGraph:
        key = report.text
        if key not in self._graphs:
            g = self.graph_overrides.get(key) or extract_graph(report)
            if g.node_features is None:
                featurize_nodes(g)
            self._graphs[key] = g
        return self._graphs[key]

    def labels(self, report: Report) -> np.ndarray:
        key = report.text
        if key not in self._labels:
            self._labels[key] = label_report(report)
        return self._labels[key]


def _shuffle_sentences(report: Report, rng: np.random.Generator) -> Report:
    if len(report.sentences) < 2:
        return report
    order = rng.permutation(len(report.sentences))
    return Report(id=report.id, sentences=tuple(report.sentences[i] for i in order))


def _lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    lr = cfg.learning_rate
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        lr *= (step + 1) / cfg.warmup_steps
    if cfg.schedule == "cosine":
        start = cfg.warmup_steps
        span = max(total_steps - start, 1)
        progress = min(max(step - start, 0) / span, 1.0)
        lr *= 0.5 * (1.0 + math.cos(math.pi * progress))
    return lr


class _Optimizer:
    def __init__(self, params: EncoderParams, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        if cfg.optimizer == "adamw":
            self.m = {k: np.zeros_like(v) for k, v in params.as_dict().items()}
            self.v = {k: np.zeros_like(v) for k, v in params.as_dict().items()}

    def step(self, params: EncoderParams, grads: Dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        c = self.cfg
        for name, p in params.as_dict().items():
            g = grads[name]
            if c.optimizer == "sgd":
                p -= lr * g
                continue
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            m_hat = m / (1.0 - c.beta1**self.t)
            v_hat = v / (1.0 - c.beta2**self.t)
            p -= lr * (m_hat / (np.sqrt(v_hat) + c.eps) + c.weight_decay * p)


def _encode_text_block(
    reports: Sequence[Report], params: EncoderParams, cache: _ReportEncodingCache
):
    bags = np.stack([cache.bag(r) for r in reports])
    raw = bags @ params.w_txt
    out, _ = l2_normalize_rows(raw)
    return out, bags, raw


def train(
    samples: Sequence[Sample],
    encoder_cfg: EncoderConfig,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    lexicon: Lexicon | None = None,
    graph_overrides: Dict[str, ReportGraph] | None = None,
) -> Tuple[EncoderParams, List[Dict]]:
    """Train the encoders on an image-report corpus.

    Returns the final parameters and the per-step metrics log (step, epoch,
    lr, loss, and every weighted loss term).  Raises TrainingDivergedError
    with a batch snapshot if the loss goes non-finite.
    """
    lex = lexicon or default_lexicon()
    if len(samples) < train_cfg.batch_size:
        raise ValueError(
            f"corpus has {len(samples)} samples; need at least batch_size={train_cfg.batch_size}"
        )
    if encoder_cfg.image_feature_dim != samples[0].image_features.shape[0]:
        raise ConfigurationError(
            f"encoder expects {encoder_cfg.image_feature_dim}-dim image features, corpus "
            f"has {samples[0].image_features.shape[0]}-dim"
        )

    cache = _ReportEncodingCache(encoder_cfg, graph_overrides)
    reports = [split_sentences(s.report_text, lex, s.id) for s in samples]
    pool = HardNegativePool(reports)
    use_graphs = "graph" in loss_cfg.modalities or "g" in loss_cfg.streams

    params = init_params(encoder_cfg, train_cfg.seed)
    optimizer = _Optimizer(params, train_cfg)
    b = train_cfg.batch_size
    steps_per_epoch = len(samples) // b
    total_steps = steps_per_epoch * train_cfg.epochs
    log: List[Dict] = []
    global_step = 0

    for epoch in range(train_cfg.epochs):
        order = np.random.default_rng([train_cfg.seed, 1000 + epoch]).permutation(len(samples))
        for step in range(steps_per_epoch):
            rng = np.random.default_rng([train_cfg.seed, epoch, step])
            idx = order[step * b : (step + 1) * b]
            batch_samples = [samples[i] for i in idx]
            batch_reports = [reports[i] for i in idx]

            if loss_cfg.hard_negatives:
                negatives = [make_hard_negative(r, rng, pool, lex) for r in batch_reports]
                text_reports = batch_reports + negatives
            else:
                text_reports = list(batch_reports)

            if train_cfg.shuffle_sentences:
                shuffled = [_shuffle_sentences(r, rng) for r in text_reports]
            else:
                shuffled = text_reports

            features = np.stack([s.image_features for s in batch_samples])
            images, img_cache = encode_images(features, params)
            texts, bags, raw_txt = _encode_text_block(shuffled, params, cache)
            clinical = np.stack([cache.labels(r) for r in text_reports])

            graph_cache: GraphCache | None = None
            graph_block = None
            if use_graphs:
                batch_graphs = [cache.graph(r) for r in text_reports]
                graph_block, graph_cache = encode_graphs(batch_graphs, params)

            emb = BatchEmbeddings(images=images, texts=texts, graphs=graph_block)
            value, terms, emb_grads = loss_gradients(emb, clinical, loss_cfg)
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"loss is not finite at step {global_step}",
                    snapshot={
                        "step": global_step,
                        "epoch": epoch,
                        "sample_ids": [s.id for s in batch_samples],
                        "loss": value,
                    },
                )

            txt_cache = TextCache(bags, raw_txt, texts)
            grads = {
                "w_img": backward_images(emb_grads["images"], img_cache),
                "w_txt": backward_texts(emb_grads["texts"], txt_cache),
                "w_g1": np.zeros_like(params.w_g1),
                "w_g2": np.zeros_like(params.w_g2),
            }
            if use_graphs and graph_cache is not None:
                d_w1, d_w2 = backward_graphs(emb_grads["graphs"], graph_cache, params)
                grads["w_g1"] = d_w1
                grads["w_g2"] = d_w2

            lr = _lr_at(global_step, total_steps, train_cfg)
            optimizer.step(params, grads, lr)

            row = {"step": global_step, "epoch": epoch, "lr": lr, "total": value}
            for key in sorted(terms):
                row[key] = terms[key]
            log.append(row)
            global_step += 1

    return params, log


# ---------------------------------------------------------------------------
# gradient verification over the full pipeline
# ---------------------------------------------------------------------------


def full_gradient_check(
    seed: int = 0,
    batch_size: int = 4,
    embed_dim: int = 8,
    image_feature_dim: int = 6,
    text_hash_dim: int = 32,
    graph_hidden_dim: int = 4,
    epsilon: float = 1e-5,
):
    """Finite-difference verification of every trainable parameter and every
    embedding input of the full loss (all modalities, all streams, hard
    negatives on), with soft labels frozen at the base point.

    Labels are targets, not parameters, so the analytic gradients
    deliberately ignore the label-construction path; freezing them makes the
    numeric differences measure the same quantity.  Returns a dict with the
    parameter-side report, the embedding-side report, and the combined
    maximum relative error.
    """
    from .corpus import CorpusSpec, generate_corpus
    from .loss import build_soft_labels, gradients_given_labels, total_loss_given_labels
    from .numerics import finite_diff_check

    lex = default_lexicon()
    spec = CorpusSpec(
        n_samples=max(4 * batch_size, 32),
        normal_fraction=0.4,
        image_feature_dim=image_feature_dim,
        seed=seed,
    )
    samples = generate_corpus(spec)[: batch_size]
    pool_reports = [
        split_sentences(s.report_text, lex, s.id) for s in generate_corpus(spec)
    ]
    pool = HardNegativePool(pool_reports)
    reports = [split_sentences(s.report_text, lex, s.id) for s in samples]
    rng = np.random.default_rng(seed)
    negatives = [make_hard_negative(r, rng, pool, lex) for r in reports]
    text_reports = reports + negatives

    enc_cfg = EncoderConfig(
        embed_dim=embed_dim,
        image_feature_dim=image_feature_dim,
        text_hash_dim=text_hash_dim,
        graph_hidden_dim=graph_hidden_dim,
    )
    params = init_params(enc_cfg, seed)
    loss_cfg = LossConfig(
        modalities=("image", "text", "graph"),
        streams=("t", "c", "g"),
        hard_negatives=True,
    )
    features = np.stack([s.image_features for s in samples])
    bags = np.stack([text_bag(r, enc_cfg.text_hash_dim) for r in text_reports])
    graphs = [extract_graph(r) for r in text_reports]
    for g in graphs:
        featurize_nodes(g)
    clinical = np.stack([label_report(r) for r in text_reports])

    def forward(p: EncoderParams):
        images, img_cache = encode_images(features, p)
        raw_txt = bags @ p.w_txt
        texts, _ = l2_normalize_rows(raw_txt)
        txt_cache = TextCache(bags, raw_txt, texts)
        graph_block, graph_cache = encode_graphs(graphs, p)
        emb = BatchEmbeddings(images=images, texts=texts, graphs=graph_block)
        return emb, img_cache, txt_cache, graph_cache

    base_emb, img_cache, txt_cache, graph_cache = forward(params)
    labels = build_soft_labels(base_emb, clinical, loss_cfg)

    # Embedding-input check: the blocks are free variables.
    _, _, emb_grads = gradients_given_labels(base_emb, labels, loss_cfg)

    def emb_loss(blocks):
        e = BatchEmbeddings(images=blocks["images"], texts=blocks["texts"], graphs=blocks["graphs"])
        return total_loss_given_labels(e, labels, loss_cfg)[0]

    emb_report = finite_diff_check(
        emb_loss,
        {"images": base_emb.images, "texts": base_emb.texts, "graphs": base_emb.graphs},
        {"images": emb_grads["images"], "texts": emb_grads["texts"], "graphs": emb_grads["graphs"]},
        epsilon=epsilon,
    )

    # Parameter check: chain through the encoders.
    param_grads = {
        "w_img": backward_images(emb_grads["images"], img_cache),
        "w_txt": backward_texts(emb_grads["texts"], txt_cache),
    }
    param_grads["w_g1"], param_grads["w_g2"] = backward_graphs(
        emb_grads["graphs"], graph_cache, params
    )

    def param_loss(arrays):
        p = EncoderParams(**{k: arrays[k] for k in ("w_img", "w_txt", "w_g1", "w_g2")})
        emb, _, _, _ = forward(p)
        return total_loss_given_labels(emb, labels, loss_cfg)[0]

    param_report = finite_diff_check(
        param_loss, params.as_dict(), param_grads, epsilon=epsilon
    )
    return {
        "params": param_report,
        "embeddings": emb_report,
        "max_rel_error": max(param_report.max_rel_error, emb_report.max_rel_error),
    }


# ---------------------------------------------------------------------------
# shared evaluation helpers
# ---------------------------------------------------------------------------


def _embed_image_features(features: np.ndarray, params: EncoderParams) -> np.ndarray:
    out, _ = encode_images(np.asarray(features, dtype=np.float64), params)
    return out


def _embed_reports(
    reports: Sequence[Report], params: EncoderParams, cfg: EncoderConfig
) -> np.ndarray:
    bags = np.stack([text_bag(r, cfg.text_hash_dim) for r in reports])
    out, _ = l2_normalize_rows(bags @ params.w_txt)
    return out


def auc_rank_sum(scores: np.ndarray, labels: np.ndarray) -> float:
    """AUC by the rank-sum (Mann-Whitney) statistic with midranks for ties.

    Equivalent to the area under the ROC curve computed by the trapezoidal
    rule with tied scores grouped.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC undefined: ground truth has a single class")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum = ranks[labels].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def zero_shot_scores(
    params: EncoderParams,
    cfg: EncoderConfig,
    image_features: np.ndarray,
    entity: str,
    lexicon: Lexicon | None = None,
) -> np.ndarray:
    """Prompt-pair score per image: cos(v, "There is X") - cos(v, "There is no X")."""
    lex = lexicon or default_lexicon()
    surface = lex.canonical[entity]
    pos = split_sentences(f"There is {surface}", lex, "prompt-pos")
    neg = split_sentences(f"There is no {surface}", lex, "prompt-neg")
    prompts = _embed_reports([pos, neg], params, cfg)
    images = _embed_image_features(image_features, params)
    sims = images @ prompts.T
    return sims[:, 0] - sims[:, 1]


def zero_shot_eval(
    params: EncoderParams,
    cfg: EncoderConfig,
    image_features: np.ndarray,
    truth: np.ndarray,
    entity: str,
    lexicon: Lexicon | None = None,
) -> EvalResult:
    scores = zero_shot_scores(params, cfg, image_features, entity, lexicon)
    auc = auc_rank_sum(scores, truth)
    return EvalResult(task="zero-shot", metrics={"auc": auc, "entity_count": float(np.sum(truth))},
                      breakdown={"entity": entity})


def _f1_from_counts(tp: int, fp: int, fn: int) -> float:
    if tp + fp + fn == 0:
        return 1.0  # entity absent on both sides everywhere: perfect agreement
    return 2.0 * tp / (2.0 * tp + fp + fn)


def _precision_from_counts(tp: int, fp: int, fn: int) -> float:
    if tp + fp == 0:
        return 1.0 if fn == 0 else 0.0
    return tp / (tp + fp)


def _recall_from_counts(tp: int, fp: int, fn: int) -> float:
    if tp + fn == 0:
        return 1.0 if fp == 0 else 0.0
    return tp / (tp + fn)


def retrieval_eval(
    params: EncoderParams,
    cfg: EncoderConfig,
    image_features: np.ndarray,
    true_indices: Sequence[int],
    pool_reports: Sequence[Report],
    lexicon: Lexicon | None = None,
    k: int = 5,
) -> EvalResult:
    """Rank the report pool per image by cosine; top-k plus clinical scores.

    Clinical macro F1/recall/precision compare the labeler output of the
    top-1 retrieved report against the true report, per finding (the derived
    "No Findings" flag is excluded), averaged over the findings.
    """
    if len(pool_reports) == 0:
        raise ValueError("report pool is empty")
    images = _embed_image_features(image_features, params)
    pool = _embed_reports(pool_reports, params, cfg)
    sims = images @ pool.T
    pool_labels = [label_report(r) for r in pool_reports]

    hits = 0
    tp = np.zeros(len(FINDINGS), dtype=np.int64)
    fp = np.zeros(len(FINDINGS), dtype=np.int64)
    fn = np.zeros(len(FINDINGS), dtype=np.int64)
    for i in range(images.shape[0]):
        order = np.argsort(-sims[i], kind="stable")
        if true_indices[i] in order[:k]:
            hits += 1
        retrieved = pool_labels[order[0]][: len(FINDINGS)]
        truth = pool_labels[true_indices[i]][: len(FINDINGS)]
        tp += ((retrieved == 1) & (truth == 1)).astype(np.int64)
        fp += ((retrieved == 1) & (truth == 0)).astype(np.int64)
        fn += ((retrieved == 0) & (truth == 1)).astype(np.int64)

    per_entity = {
        name: {
            "f1": _f1_from_counts(tp[i], fp[i], fn[i]),
            "recall": _recall_from_counts(tp[i], fp[i], fn[i]),
            "precision": _precision_from_counts(tp[i], fp[i], fn[i]),
        }
        for i, name in enumerate(FINDINGS)
    }
    n = images.shape[0]
    metrics = {
        f"top_{k}": hits / n,
        "macro_f1": float(np.mean([per_entity[e]["f1"] for e in FINDINGS])),
        "macro_recall": float(np.mean([per_entity[e]["recall"] for e in FINDINGS])),
        "macro_precision": float(np.mean([per_entity[e]["precision"] for e in FINDINGS])),
    }
    return EvalResult(task="retrieval", metrics=metrics, breakdown={"per_entity": per_entity})


def cxr_align_eval(
    params: EncoderParams,
    cfg: EncoderConfig,
    records: Sequence[TripletRecord],
    features_by_image: Dict[str, np.ndarray],
    lexicon: Lexicon | None = None,
) -> EvalResult:
    """Negation benchmark: prefer r over r_n (task A) and r over r_r (task B).

    Ties count as incorrect.  Emits per-entity and per-insertion-position
    accuracy breakdowns; their count-weighted aggregates equal the overall
    accuracies by construction.
    """
    if not records:
        raise ValueError("no triplet records to evaluate")
    features = np.stack([features_by_image[t.image_id] for t in records])
    images = _embed_image_features(features, params)
    originals = _embed_reports([t.original for t in records], params, cfg)
    negated = _embed_reports([t.negated for t in records], params, cfg)
    removed = _embed_reports([t.removed for t in records], params, cfg)

    sim_r = (images * originals).sum(axis=1)
    sim_rn = (images * negated).sum(axis=1)
    sim_rr = (images * removed).sum(axis=1)
    a_correct = sim_r > sim_rn
    b_correct = sim_r > sim_rr

    def grouped(keys):
        out: Dict[str, Dict[str, float]] = {}
        for key in sorted(set(keys)):
            mask = np.array([k == key for k in keys])
            out[key] = {
                "task_a": float(a_correct[mask].mean()),
                "task_b": float(b_correct[mask].mean()),
                "count": int(mask.sum()),
            }
        return out

    metrics = {
        "task_a": float(a_correct.mean()),
        "task_b": float(b_correct.mean()),
        "count": float(len(records)),
    }
    breakdown = {
        "by_entity": grouped([t.selected_entity for t in records]),
        "by_position": grouped([t.insertion_position for t in records]),
    }
    return EvalResult(task="cxr-align", metrics=metrics, breakdown=breakdown)


def build_adversarial_cases(
    samples: Sequence[Sample], seed: int
) -> List[Tuple[np.ndarray, str, str]]:
    """(features, present_entity, absent_entity) from samples that have both."""
    rng = np.random.default_rng(seed)
    cases: List[Tuple[np.ndarray, str, str]] = []
    for s in samples:
        present = [FINDINGS[i] for i in range(len(FINDINGS)) if s.latent[i] == 1]
        absent = [FINDINGS[i] for i in range(len(FINDINGS)) if s.latent[i] == 0]
        if not present or not absent:
            continue
        cases.append(
            (
                s.image_features,
                present[int(rng.integers(len(present)))],
                absent[int(rng.integers(len(absent)))],
            )
        )
    return cases


def adversarial_eval(
    params: EncoderParams,
    cfg: EncoderConfig,
    cases: Sequence[Tuple[np.ndarray, str, str]],
    lexicon: Lexicon | None = None,
) -> EvalResult:
    """Joint present/absent prediction: the present entity must score > 0 and
    the absent entity < 0 on the same image.  Also tabulates how often each
    ground-truth column is predicted positive vs negative."""
    if not cases:
        raise ValueError("no adversarial cases to evaluate")
    lex = lexicon or default_lexicon()
    features = np.stack([c[0] for c in cases])
    by_entity: Dict[str, np.ndarray] = {}
    for entity in sorted({c[1] for c in cases} | {c[2] for c in cases}):
        by_entity[entity] = zero_shot_scores(params, cfg, features, entity, lex)

    counts = {
        "present": {"positive": 0, "negative": 0},
        "absent": {"positive": 0, "negative": 0},
    }
    correct = 0
    for i, (_, present, absent) in enumerate(cases):
        s_present = by_entity[present][i]
        s_absent = by_entity[absent][i]
        counts["present"]["positive" if s_present > 0 else "negative"] += 1
        counts["absent"]["positive" if s_absent > 0 else "negative"] += 1
        if s_present > 0 and s_absent < 0:
            correct += 1
    metrics = {"accuracy": correct / len(cases), "count": float(len(cases))}
    return EvalResult(task="adversarial", metrics=metrics, breakdown={"prediction_counts": counts})


def normal_case_detection_eval(
    params: EncoderParams,
    cfg: EncoderConfig,
    normal_features: np.ndarray,
    pool_reports: Sequence[Report],
    lexicon: Lexicon | None = None,
) -> EvalResult:
    """Retrieve the single normal report from a pool of abnormal reports.

    Success per image means the normal report is strictly rank 1; the normal
    report loses ties.  Reports both accuracy and the mean rank.
    """
    labels = [label_report(r) for r in pool_reports]
    normal_idx = [i for i, v in enumerate(labels) if v[-1] == 1.0]
    if len(normal_idx) != 1:
        raise ConfigurationError(
            f"pool must contain exactly one normal report, found {len(normal_idx)}"
        )
    target = normal_idx[0]
    images = _embed_image_features(normal_features, params)
    pool = _embed_reports(pool_reports, params, cfg)
    sims = images @ pool.T
    ranks = []
    for i in range(images.shape[0]):
        s = sims[i]
        others = np.delete(s, target)
        ranks.append(1 + int((others >= s[target]).sum()))
    ranks_arr = np.array(ranks, dtype=np.float64)
    metrics = {
        "accuracy": float((ranks_arr == 1).mean()),
        "mean_rank": float(ranks_arr.mean()),
        "pool_size": float(len(pool_reports)),
    }
    return EvalResult(task="normal-case-detection", metrics=metrics, breakdown={"ranks": ranks})


# ---------------------------------------------------------------------------
# checkpoint and results IO
# ---------------------------------------------------------------------------


def save_checkpoint(
    path,
    params: EncoderParams,
    encoder_cfg: EncoderConfig,
    loss_cfg: LossConfig | None = None,
    train_cfg: TrainConfig | None = None,
) -> None:
    extra: Dict = {}
    if loss_cfg is not None:
        extra["loss"] = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(loss_cfg).items()}
    if train_cfg is not None:
        extra["train"] = asdict(train_cfg)
    _save_encoder_checkpoint(path, params, encoder_cfg, extra)


def load_checkpoint(path) -> Tuple[EncoderParams, EncoderConfig, Dict]:
    return _load_encoder_checkpoint(path)


def loss_config_from_echo(echo: Dict) -> LossConfig:
    """Rebuild a LossConfig from the checkpoint's config echo."""
    kwargs = dict(echo)
    for key in ("modalities", "streams"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return LossConfig(**kwargs)


def write_metrics_log(path, rows: Sequence[Dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


def write_eval_result(path, result: EvalResult) -> None:
    doc = {"task": result.task, "metrics": result.metrics, "breakdown": result.breakdown}
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")
