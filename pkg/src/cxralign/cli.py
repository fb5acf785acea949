"""Command-line frontend.

One static JSON config file (section per module) plus dotted-key flag
overrides; every flag wins over the file, the file wins over defaults.  Each
command prints an effective-config banner that is sufficient to re-run the
job identically.  Exit codes: 0 success, 1 validation/usage error, 2 runtime
error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Dict, Sequence

import numpy as np

from . import figures
from .corpus import (
    CorpusSpec,
    annotate_corpus,
    generate_corpus,
    load_corpus,
    write_corpus,
)
from .encoders import EncoderConfig
from .graphs import load_graph_records
from .loss import ConfigurationError, LossConfig
from .negatives import (
    HardNegativePool,
    build_cxr_align_set,
    load_triplets,
    make_hard_negative,
    write_triplets,
)
from .report_nlp import FINDINGS, default_lexicon, load_lexicon
from .train_eval import (
    EvalResult,
    TrainConfig,
    adversarial_eval,
    build_adversarial_cases,
    cxr_align_eval,
    full_gradient_check,
    load_checkpoint,
    normal_case_detection_eval,
    retrieval_eval,
    save_checkpoint,
    train,
    write_eval_result,
    write_metrics_log,
    zero_shot_eval,
)

GRADCHECK_TOLERANCE = 1e-4

_SECTIONS = {
    "corpus": CorpusSpec,
    "encoder": EncoderConfig,
    "loss": LossConfig,
    "train": TrainConfig,
}
_PATH_KEYS = ("corpus", "triplets", "checkpoint", "out", "lexicon", "graphs")


class CliError(Exception):
    """Usage or validation problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _parse_tuple(text: str):
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _parse_float_tuple(text: str):
    return tuple(float(part) for part in text.split(",") if part.strip())


def _flag_type(section: str, field: dataclasses.Field):
    if field.name == "entity_weights":
        return _parse_float_tuple
    if field.type in ("int", int):
        return int
    if field.type in ("float", float):
        return float
    if field.type in ("bool", bool):
        return _parse_bool
    if field.name in ("modalities", "streams"):
        return _parse_tuple
    return str


def _add_section_flags(parser: argparse.ArgumentParser, sections: Sequence[str]) -> None:
    for section in sections:
        cls = _SECTIONS[section]
        for f in dataclasses.fields(cls):
            parser.add_argument(
                f"--{section}.{f.name}",
                dest=f"{section}.{f.name}",
                type=_flag_type(section, f),
                default=None,
                help=argparse.SUPPRESS,
            )


def _build_section(section: str, file_cfg: Dict, flags: Dict, overrides: Dict | None = None):
    cls = _SECTIONS[section]
    names = {f.name for f in dataclasses.fields(cls)}
    values: Dict = {}
    file_section = file_cfg.get(section, {})
    unknown = set(file_section) - names
    if unknown:
        raise CliError(f"config section {section!r} has unknown keys: {sorted(unknown)}")
    values.update(file_section)
    for key, value in flags.items():
        if value is None or "." not in key:
            continue
        sec, _, name = key.partition(".")
        if sec == section:
            if name not in names:
                raise CliError(f"unknown flag --{section}.{name}")
            values[name] = value
    if overrides:
        values.update(overrides)
    for key in ("modalities", "streams"):
        if key in values and isinstance(values[key], list):
            values[key] = tuple(values[key])
    if "entity_weights" in values and isinstance(values["entity_weights"], list):
        values["entity_weights"] = tuple(values["entity_weights"])
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid {section} configuration: {exc}")


def _load_config_file(path: str | None) -> Dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            cfg = json.load(f)
        except json.JSONDecodeError as exc:
            raise CliError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise CliError(f"config file {path} must contain a JSON object")
    known = set(_SECTIONS) | {"paths", "seed", "command", "gradcheck", "retrieval", "benchmark"}
    unknown = set(cfg) - known
    if unknown:
        raise CliError(f"config file has unknown sections: {sorted(unknown)}")
    return cfg


def _aux_value(args, file_cfg: Dict, section: str, key: str, default):
    """Command-specific scalar: flag wins, then the config file, then default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    return file_cfg.get(section, {}).get(key, default)


def _resolve_path(args, file_cfg: Dict, key: str, required: bool, must_exist: bool):
    value = getattr(args, key, None)
    if value is None:
        value = file_cfg.get("paths", {}).get(key)
    if value is None:
        if required:
            raise CliError(f"--{key} is required (flag or paths.{key} in the config file)")
        return None
    if must_exist and not os.path.exists(value):
        raise CliError(f"path for --{key} does not exist: {value}")
    return value


def _master_seed(args, file_cfg: Dict) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    return int(file_cfg.get("seed", 0))


def _banner(command: str, config: Dict, out_dir: str | None) -> None:
    doc = dict(config)
    doc["command"] = command
    text = json.dumps(doc, sort_keys=True)
    print(f"effective-config {text}")
    if out_dir:
        with open(os.path.join(out_dir, "effective_config.json"), "w", encoding="utf-8") as f:
            f.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _section_dict(obj) -> Dict:
    out = {}
    for key, value in dataclasses.asdict(obj).items():
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


def _lexicon_from(args, file_cfg: Dict):
    path = _resolve_path(args, file_cfg, "lexicon", required=False, must_exist=True)
    return load_lexicon(path) if path else default_lexicon()


def _write_tsv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(header) + "\n")
        for row in rows:
            f.write("\t".join(str(x) for x in row) + "\n")


def _ensure_out_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _load_params(args, file_cfg: Dict):
    ckpt = _resolve_path(args, file_cfg, "checkpoint", required=True, must_exist=True)
    params, enc_cfg, extra = load_checkpoint(ckpt)
    return params, enc_cfg, extra, ckpt


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _cmd_synth_data(args, file_cfg: Dict) -> int:
    seed = _master_seed(args, file_cfg)
    overrides: Dict = {"seed": seed}
    if args.n is not None:
        overrides["n_samples"] = args.n
    spec = _build_section("corpus", file_cfg, vars(args), overrides)
    out = _resolve_path(args, file_cfg, "out", required=True, must_exist=False)
    _banner("synth-data", {"corpus": _section_dict(spec), "seed": seed, "paths": {"out": out}}, None)
    samples = generate_corpus(spec)
    write_corpus(out, samples, spec.image_feature_dim)

    counts = [int(sum(s.latent[i] for s in samples)) for i in range(len(FINDINGS))]
    n_normal = sum(1 for s in samples if s.is_normal)
    _write_tsv(
        out + ".entities.tsv",
        ["entity", "count"],
        [[e, c] for e, c in zip(FINDINGS, counts)] + [["(normal)", n_normal]],
    )
    figures.bar_figure(
        out + ".entities.png", list(FINDINGS), counts, "entity prevalence", "samples"
    )
    print(f"wrote {len(samples)} samples to {out} ({n_normal} normal)")
    return 0


def _cmd_gen_negatives(args, file_cfg: Dict) -> int:
    seed = _master_seed(args, file_cfg)
    corpus_path = _resolve_path(args, file_cfg, "corpus", required=True, must_exist=True)
    out = _resolve_path(args, file_cfg, "out", required=True, must_exist=False)
    lex = _lexicon_from(args, file_cfg)
    _banner(
        "gen-negatives",
        {"seed": seed, "paths": {"corpus": corpus_path, "out": out}},
        None,
    )
    samples = load_corpus(corpus_path)
    annotated = annotate_corpus(samples, lex)
    pool = HardNegativePool([r for _, r in annotated])
    rng = np.random.default_rng(seed)
    with open(out, "w", encoding="utf-8") as f:
        for sample_id, report in annotated:
            negative = make_hard_negative(report, rng, pool, lex)
            f.write(
                json.dumps(
                    {"id": sample_id, "report": report.text, "hard_negative": negative.text}
                )
                + "\n"
            )
    print(f"wrote {len(annotated)} hard negatives to {out}")
    return 0


def _cmd_cxr_align_gen(args, file_cfg: Dict) -> int:
    seed = _master_seed(args, file_cfg)
    corpus_path = _resolve_path(args, file_cfg, "corpus", required=True, must_exist=True)
    out_dir = _ensure_out_dir(_resolve_path(args, file_cfg, "out", required=True, must_exist=False))
    lex = _lexicon_from(args, file_cfg)
    priority = float(_aux_value(args, file_cfg, "benchmark", "priority_multiplier", 1.0))
    _banner(
        "cxr-align-gen",
        {
            "seed": seed,
            "benchmark": {"priority_multiplier": priority},
            "paths": {"corpus": corpus_path, "out": out_dir},
        },
        out_dir,
    )
    samples = load_corpus(corpus_path)
    annotated = annotate_corpus(samples, lex)
    records, skipped, counts = build_cxr_align_set(
        annotated, seed=seed, priority_multiplier=priority, lexicon=lex
    )
    write_triplets(os.path.join(out_dir, "triplets.jsonl"), records)
    rows = [[e, counts[e]] for e in FINDINGS]
    _write_tsv(os.path.join(out_dir, "entity_counts.tsv"), ["entity", "count"], rows)
    figures.bar_figure(
        os.path.join(out_dir, "entity_counts.png"),
        list(FINDINGS),
        [counts[e] for e in FINDINGS],
        "selected entities in the benchmark",
        "triplets",
    )
    print(f"built {len(records)} triplets ({skipped} normal reports skipped) in {out_dir}")
    return 0


def _cmd_train(args, file_cfg: Dict) -> int:
    seed = _master_seed(args, file_cfg)
    corpus_path = _resolve_path(args, file_cfg, "corpus", required=True, must_exist=True)
    out_dir = _ensure_out_dir(_resolve_path(args, file_cfg, "out", required=True, must_exist=False))
    graphs_path = _resolve_path(args, file_cfg, "graphs", required=False, must_exist=True)
    lex = _lexicon_from(args, file_cfg)

    samples = load_corpus(corpus_path)
    feature_dim = samples[0].image_features.shape[0] if samples else 64
    flag_dim = vars(args).get("encoder.image_feature_dim")
    file_dim = file_cfg.get("encoder", {}).get("image_feature_dim")
    derived = {} if (flag_dim is not None or file_dim is not None) else {"image_feature_dim": feature_dim}
    enc_cfg = _build_section("encoder", file_cfg, vars(args), derived)
    loss_cfg = _build_section("loss", file_cfg, vars(args))
    train_cfg = _build_section("train", file_cfg, vars(args), {"seed": seed})
    _banner(
        "train",
        {
            "encoder": _section_dict(enc_cfg),
            "loss": _section_dict(loss_cfg),
            "train": _section_dict(train_cfg),
            "seed": seed,
            "paths": {"corpus": corpus_path, "out": out_dir, "graphs": graphs_path},
        },
        out_dir,
    )
    graph_overrides = load_graph_records(graphs_path) if graphs_path else None
    params, log = train(samples, enc_cfg, loss_cfg, train_cfg, lex, graph_overrides)
    write_metrics_log(os.path.join(out_dir, "metrics.jsonl"), log)
    save_checkpoint(os.path.join(out_dir, "checkpoint.txt"), params, enc_cfg, loss_cfg, train_cfg)
    if log:
        figures.loss_curve_figure(
            os.path.join(out_dir, "training_loss.png"),
            [row["step"] for row in log],
            [row["total"] for row in log],
        )
        print(f"trained {len(log)} steps; loss {log[0]['total']:.4f} -> {log[-1]['total']:.4f}")
    print(f"checkpoint and metrics written to {out_dir}")
    return 0


def _cmd_eval_zeroshot(args, file_cfg: Dict) -> int:
    seed = _master_seed(args, file_cfg)
    params, enc_cfg, _, ckpt = _load_params(args, file_cfg)
    corpus_path = _resolve_path(args, file_cfg, "corpus", required=True, must_exist=True)
    out_dir = _ensure_out_dir(_resolve_path(args, file_cfg, "out", required=True, must_exist=False))
    lex = _lexicon_from(args, file_cfg)
    _banner(
        "eval-zeroshot",
        {"seed": seed, "paths": {"checkpoint": ckpt, "corpus": corpus_path, "out": out_dir}},
        out_dir,
    )
    samples = load_corpus(corpus_path)
    features = np.stack([s.image_features for s in samples])
    latents = np.stack([s.latent for s in samples])
    per_entity: Dict[str, float] = {}
    for i, entity in enumerate(FINDINGS):
        truth = latents[:, i]
        if truth.sum() == 0 or truth.sum() == len(truth):
            continue  # AUC undefined for single-class entities
        per_entity[entity] = zero_shot_eval(params, enc_cfg, features, truth, entity, lex).metrics["auc"]
    if not per_entity:
        raise ConfigurationError("no entity has both classes present in the corpus")
    result = EvalResult(
        task="zero-shot",
        metrics={"mean_auc": float(np.mean(list(per_entity.values()))),
                 "entities_evaluated": float(len(per_entity))},
        breakdown={"per_entity_auc": per_entity},
    )
    write_eval_result(os.path.join(out_dir, "results.json"), result)
    names = sorted(per_entity)
    _write_tsv(
        os.path.join(out_dir, "per_entity_auc.tsv"),
        ["entity", "auc"],
        [[e, per_entity[e]] for e in names],
    )
    figures.bar_figure(
        os.path.join(out_dir, "per_entity_auc.png"),
        names,
        [per_entity[e] for e in names],
        "zero-shot AUC per entity",
        "AUC",
    )
    print(f"mean zero-shot AUC over {len(per_entity)} entities: {result.metrics['mean_auc']:.4f}")
    return 0


def _cmd_eval_retrieval(args, file_cfg: Dict) -> int:
    seed = _master_seed(args, file_cfg)
    params, enc_cfg, _, ckpt = _load_params(args, file_cfg)
    corpus_path = _resolve_path(args, file_cfg, "corpus", required=True, must_exist=True)
    out_dir = _ensure_out_dir(_resolve_path(args, file_cfg, "out", required=True, must_exist=False))
    lex = _lexicon_from(args, file_cfg)
    k = int(_aux_value(args, file_cfg, "retrieval", "k", 5))
    _banner(
        "eval-retrieval",
        {
            "seed": seed,
            "retrieval": {"k": k},
            "paths": {"checkpoint": ckpt, "corpus": corpus_path, "out": out_dir},
        },
        out_dir,
    )
    samples = load_corpus(corpus_path)
    annotated = annotate_corpus(samples, lex)
    features = np.stack([s.image_features for s in samples])
    pool = [r for _, r in annotated]
    result = retrieval_eval(params, enc_cfg, features, list(range(len(pool))), pool, lex, k=k)
    write_eval_result(os.path.join(out_dir, "results.json"), result)
    per_entity = result.breakdown["per_entity"]
    _write_tsv(
        os.path.join(out_dir, "per_entity.tsv"),
        ["entity", "f1", "recall", "precision"],
        [[e, per_entity[e]["f1"], per_entity[e]["recall"], per_entity[e]["precision"]] for e in FINDINGS],
    )
    figures.bar_figure(
        os.path.join(out_dir, "per_entity_f1.png"),
        list(FINDINGS),
        [per_entity[e]["f1"] for e in FINDINGS],
        "clinical F1 of top-1 retrieval",
        "F1",
    )
    print(
        f"top_{k}={result.metrics[f'top_{k}']:.4f} "
        f"macro_f1={result.metrics['macro_f1']:.4f}"
    )
    return 0


def _cmd_eval_cxr_align(args, file_cfg: Dict) -> int:
    seed = _master_seed(args, file_cfg)
    params, enc_cfg, _, ckpt = _load_params(args, file_cfg)
    corpus_path = _resolve_path(args, file_cfg, "corpus", required=True, must_exist=True)
    triplets_path = _resolve_path(args, file_cfg, "triplets", required=True, must_exist=True)
    out_dir = _ensure_out_dir(_resolve_path(args, file_cfg, "out", required=True, must_exist=False))
    lex = _lexicon_from(args, file_cfg)
    _banner(
        "eval-cxr-align",
        {
            "seed": seed,
            "paths": {
                "checkpoint": ckpt,
                "corpus": corpus_path,
                "triplets": triplets_path,
                "out": out_dir,
            },
        },
        out_dir,
    )
    samples = load_corpus(corpus_path)
    features_by_image = {s.id: s.image_features for s in samples}
    records = load_triplets(triplets_path, lex)
    missing = [t.image_id for t in records if t.image_id not in features_by_image]
    if missing:
        raise ConfigurationError(
            f"{len(missing)} triplet image ids missing from the corpus (first: {missing[0]})"
        )
    result = cxr_align_eval(params, enc_cfg, records, features_by_image, lex)
    write_eval_result(os.path.join(out_dir, "results.json"), result)
    for group in ("by_entity", "by_position"):
        table = result.breakdown[group]
        keys = sorted(table)
        _write_tsv(
            os.path.join(out_dir, f"{group}.tsv"),
            ["key", "task_a", "task_b", "count"],
            [[k, table[k]["task_a"], table[k]["task_b"], table[k]["count"]] for k in keys],
        )
        figures.paired_bar_figure(
            os.path.join(out_dir, f"accuracy_{group}.png"),
            keys,
            {"task A": [table[k]["task_a"] for k in keys],
             "task B": [table[k]["task_b"] for k in keys]},
            f"benchmark accuracy {group.replace('_', ' ')}",
            "accuracy",
        )
    print(
        f"task A accuracy={result.metrics['task_a']:.4f} "
        f"task B accuracy={result.metrics['task_b']:.4f} over {int(result.metrics['count'])} triplets"
    )
    return 0


def _cmd_eval_adversarial(args, file_cfg: Dict) -> int:
    seed = _master_seed(args, file_cfg)
    params, enc_cfg, _, ckpt = _load_params(args, file_cfg)
    corpus_path = _resolve_path(args, file_cfg, "corpus", required=True, must_exist=True)
    out_dir = _ensure_out_dir(_resolve_path(args, file_cfg, "out", required=True, must_exist=False))
    lex = _lexicon_from(args, file_cfg)
    _banner(
        "eval-adversarial",
        {"seed": seed, "paths": {"checkpoint": ckpt, "corpus": corpus_path, "out": out_dir}},
        out_dir,
    )
    samples = load_corpus(corpus_path)
    cases = build_adversarial_cases(samples, seed)
    result = adversarial_eval(params, enc_cfg, cases, lex)
    write_eval_result(os.path.join(out_dir, "results.json"), result)
    counts = result.breakdown["prediction_counts"]
    _write_tsv(
        os.path.join(out_dir, "prediction_counts.tsv"),
        ["ground_truth", "predicted_positive", "predicted_negative"],
        [
            ["present", counts["present"]["positive"], counts["present"]["negative"]],
            ["absent", counts["absent"]["positive"], counts["absent"]["negative"]],
        ],
    )
    figures.paired_bar_figure(
        os.path.join(out_dir, "prediction_counts.png"),
        ["present", "absent"],
        {
            "predicted positive": [counts["present"]["positive"], counts["absent"]["positive"]],
            "predicted negative": [counts["present"]["negative"], counts["absent"]["negative"]],
        },
        "adversarial prediction counts by ground truth",
        "cases",
    )
    print(f"adversarial accuracy={result.metrics['accuracy']:.4f} over {len(cases)} cases")
    return 0


def _cmd_eval_normal_detect(args, file_cfg: Dict) -> int:
    seed = _master_seed(args, file_cfg)
    params, enc_cfg, _, ckpt = _load_params(args, file_cfg)
    corpus_path = _resolve_path(args, file_cfg, "corpus", required=True, must_exist=True)
    out_dir = _ensure_out_dir(_resolve_path(args, file_cfg, "out", required=True, must_exist=False))
    lex = _lexicon_from(args, file_cfg)
    _banner(
        "eval-normal-detect",
        {"seed": seed, "paths": {"checkpoint": ckpt, "corpus": corpus_path, "out": out_dir}},
        out_dir,
    )
    samples = load_corpus(corpus_path)
    annotated = annotate_corpus(samples, lex)
    normals = [s for s in samples if s.is_normal]
    abnormal_reports = [r for (sid, r), s in zip(annotated, samples) if not s.is_normal]
    if not normals:
        raise ConfigurationError("corpus has no normal samples")
    if not abnormal_reports:
        raise ConfigurationError("corpus has no abnormal reports for the pool")
    normal_report = next(r for (sid, r), s in zip(annotated, samples) if s.is_normal)
    pool = [normal_report] + abnormal_reports
    features = np.stack([s.image_features for s in normals])
    result = normal_case_detection_eval(params, enc_cfg, features, pool, lex)
    write_eval_result(os.path.join(out_dir, "results.json"), result)
    ranks = result.breakdown["ranks"]
    _write_tsv(
        os.path.join(out_dir, "ranks.tsv"),
        ["image_index", "rank"],
        [[i, r] for i, r in enumerate(ranks)],
    )
    figures.rank_histogram_figure(
        os.path.join(out_dir, "rank_histogram.png"), ranks, "normal report rank per normal image"
    )
    print(
        f"normal-case detection accuracy={result.metrics['accuracy']:.4f} "
        f"mean_rank={result.metrics['mean_rank']:.2f} (pool={int(result.metrics['pool_size'])})"
    )
    return 0


def _cmd_gradcheck(args, file_cfg: Dict) -> int:
    seed = _master_seed(args, file_cfg)
    batch = int(_aux_value(args, file_cfg, "gradcheck", "batch", 4))
    dim = int(_aux_value(args, file_cfg, "gradcheck", "dim", 8))
    _banner(
        "gradcheck",
        {"seed": seed, "gradcheck": {"batch": batch, "dim": dim}},
        None,
    )
    out = full_gradient_check(seed=seed, batch_size=batch, embed_dim=dim)
    for side in ("params", "embeddings"):
        rep = out[side]
        print(
            f"{side}: max_rel_error={rep.max_rel_error:.3e} worst={rep.worst_param}"
            f"{rep.worst_index} analytic={rep.analytic:.6g} numeric={rep.numeric:.6g} "
            f"(checked {rep.n_checked})"
        )
    print(f"max_rel_error={out['max_rel_error']:.6e}")
    return 0 if out["max_rel_error"] < GRADCHECK_TOLERANCE else 1


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="cxralign", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p: _Parser, paths: Sequence[str], sections: Sequence[str] = ()):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="master random seed")
        p.add_argument("--workers", type=int, default=1,
                       help="upper bound on parallel fan-out (execution is sequential)")
        p.add_argument("--lexicon", default=None, help="lexicon file overriding the default")
        for key in paths:
            p.add_argument(f"--{key}", default=None)
        _add_section_flags(p, sections)

    p = sub.add_parser("synth-data", help="generate a synthetic corpus file")
    common(p, ["out"], ["corpus"])
    p.add_argument("--n", type=int, default=None, help="number of samples")

    p = sub.add_parser("gen-negatives", help="hard negatives for every corpus report")
    common(p, ["corpus", "out"])

    p = sub.add_parser("cxr-align-gen", help="build benchmark triplets from a corpus")
    common(p, ["corpus", "out"])
    p.add_argument("--priority-multiplier", dest="priority_multiplier", type=float,
                   default=None, help="sampling boost for the prioritized entities")

    p = sub.add_parser("train", help="train encoders on a corpus")
    common(p, ["corpus", "out", "graphs"], ["encoder", "loss", "train"])

    p = sub.add_parser("eval-zeroshot", help="per-entity prompt-pair AUC")
    common(p, ["checkpoint", "corpus", "out"])

    p = sub.add_parser("eval-retrieval", help="report retrieval with clinical scores")
    common(p, ["checkpoint", "corpus", "out"])
    p.add_argument("--k", type=int, default=None, help="top-k cutoff (default 5)")

    p = sub.add_parser("eval-cxr-align", help="negation benchmark accuracy")
    common(p, ["checkpoint", "corpus", "triplets", "out"])

    p = sub.add_parser("eval-adversarial", help="joint present/absent prediction")
    common(p, ["checkpoint", "corpus", "out"])

    p = sub.add_parser("eval-normal-detect", help="retrieve the one normal report")
    common(p, ["checkpoint", "corpus", "out"])

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    common(p, [])
    p.add_argument("--batch", type=int, default=None, help="batch size (default 4)")
    p.add_argument("--dim", type=int, default=None, help="embedding dim (default 8)")

    return parser


_COMMANDS = {
    "synth-data": _cmd_synth_data,
    "gen-negatives": _cmd_gen_negatives,
    "cxr-align-gen": _cmd_cxr_align_gen,
    "train": _cmd_train,
    "eval-zeroshot": _cmd_eval_zeroshot,
    "eval-retrieval": _cmd_eval_retrieval,
    "eval-cxr-align": _cmd_eval_cxr_align,
    "eval-adversarial": _cmd_eval_adversarial,
    "eval-normal-detect": _cmd_eval_normal_detect,
    "gradcheck": _cmd_gradcheck,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.error("a subcommand is required")
        if getattr(args, "workers", 1) is not None and args.workers < 1:
            parser.error("--workers must be at least 1")
        file_cfg = _load_config_file(getattr(args, "config", None))
        return _COMMANDS[args.command](args, file_cfg)
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ValueError as exc:  # rejected inputs, malformed files, bad configs
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
