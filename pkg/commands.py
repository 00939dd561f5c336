"""Pipelines behind the command-line subcommands."""

import json
import logging
import os
from dataclasses import asdict, replace
from datetime import datetime
from typing import Dict, List, Optional, Sequence, Tuple

import pytz
import torch
from scipy.special import expit

from app import RunConfig
from errors import ConfigError, DataFormatError
from models import EpochRecord, LabeledExample, TrainHistory, labels_for
from services import corpus_service
from services.baseline_service import (BASELINE_MAGIC, BaselineBundle, SgdHyperparams, featurize,
                                       fit_featurizer, load_baseline, load_sentence_vectors,
                                       save_baseline, train_embedding_svm, train_linear_svm,
                                       vectors_for_ids)
from services.deep_model_service import (CHECKPOINT_MAGIC, DeepModelTrainer, ModelConfig, Pipeline,
                                         load_checkpoint, predict, save_checkpoint)
from services.encoding_service import (build_char_vocab, encode_labels, load_embedding_table,
                                       resolve_max_word_len)
from services.metrics_service import (all_trivial_baselines, confusion, infer_labels, render_details,
                                      render_table, report, write_report)
from services.normalization_service import TextNormalizer, tokenize_tweet

logger = logging.getLogger(__name__)

PREPARED_DIR = "prepared"
TRAIN_FILE = "train.tsv"
VALIDATION_FILE = "validation.tsv"
MANIFEST_FILE = "manifest.json"
CONFIG_ECHO_FILE = "config.json"
HISTORY_FILE = "history.jsonl"
CHAR_VOCAB_FILE = "char_vocab.tsv"
DEEP_MODEL_FILE = "model.ckpt"
BASELINE_MODEL_FILE = "model.svm"
PREDICTIONS_FILE = "predictions.csv"
METRICS_FILE = "metrics.json"
CONFUSION_FILE = "confusion.txt"
BASELINES_FILE = "baselines.json"
OLID_TEST_HEADER = "id\ttweet"


def _require_path(config: RunConfig, name: str) -> str:
    """Path stored in a config field; it must be set and must exist."""
    path = getattr(config, name)
    if not path:
        raise ConfigError(f"--{name.replace('_', '-')} is required")
    if not os.path.exists(path):
        raise DataFormatError(f"{name} file not found: {path}")
    return path


def _prepared_dir(config: RunConfig) -> str:
    return os.path.join(config.output_dir, PREPARED_DIR)


def _count_by_source(examples: Sequence[LabeledExample], subtask: str) -> Dict[str, Dict[str, int]]:
    """Label counts per example source, for the manifest."""
    counts: Dict[str, Dict[str, int]] = {}
    for ex in examples:
        label = ex.label(subtask)
        by_label = counts.setdefault(ex.source.value, {})
        by_label[label] = by_label.get(label, 0) + 1
    return {source: dict(sorted(by_label.items())) for source, by_label in sorted(counts.items())}


def cmd_prepare(config: RunConfig) -> Dict:
    """Load, map, balance and split the training data; write prepared TSVs and a manifest."""
    olid_path = _require_path(config, "olid_train")
    if config.augment_with_toxic:
        _require_path(config, "toxic")

    olid = corpus_service.load_olid(olid_path)
    n_val = config.validation_size
    if n_val >= len(olid):
        raise ConfigError(f"validation_size {n_val} leaves no training data out of {len(olid)} OLID rows")
    data_split = corpus_service.split(olid, len(olid) - n_val, n_val, config.split_seed)
    train, validation = data_split.train, data_split.validation

    augmentation = None
    if config.subtask == "B":
        train = corpus_service.build_subtask_b_view(train)
        validation = corpus_service.build_subtask_b_view(validation)
    elif config.augment_with_toxic:
        mapped = corpus_service.map_toxic_labels(corpus_service.load_toxic_comments(config.toxic))
        balanced = corpus_service.balance(mapped, config.balance_seed)
        train = train + balanced
        added = corpus_service.class_counts(balanced)
        augmentation = {
            "mapped": len(mapped),
            "not_removed": len(mapped) - len(balanced),
            "added_per_class": dict(sorted(added.items())),
        }

    out_dir = _prepared_dir(config)
    os.makedirs(out_dir, exist_ok=True)
    corpus_service.write_prepared(os.path.join(out_dir, TRAIN_FILE), train)
    corpus_service.write_prepared(os.path.join(out_dir, VALIDATION_FILE), validation)

    manifest = {
        "created_at": datetime.now(pytz.UTC).isoformat(),
        "subtask": config.subtask,
        "olid_rows": len(olid),
        "train": {"size": len(train), "counts": _count_by_source(train, config.subtask)},
        "validation": {"size": len(validation), "counts": _count_by_source(validation, config.subtask)},
        "augmentation": augmentation,
        "seeds": {"split": config.split_seed, "balance": config.balance_seed},
        "reference_counts": {
            "olid_train": corpus_service.OLID_TRAIN_SIZE,
            "olid_split": [corpus_service.OLID_TRAIN_SPLIT, corpus_service.OLID_VALIDATION_SPLIT],
            "olid_subtask_b": corpus_service.OLID_SUBTASK_B_SIZE,
            "toxic_mapped": corpus_service.TOXIC_MAPPED_TOTAL,
            "toxic_not_removed": corpus_service.TOXIC_NOT_REMOVED,
            "toxic_per_class": corpus_service.TOXIC_PER_CLASS,
        },
    }
    with open(os.path.join(out_dir, MANIFEST_FILE), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info(f"Prepared {len(train)} training and {len(validation)} validation examples in {out_dir}")
    return manifest


def _load_prepared(config: RunConfig) -> Tuple[List[LabeledExample], List[LabeledExample]]:
    """Prepared train and validation examples, checked to carry labels for the configured subtask."""
    out_dir = _prepared_dir(config)
    train_path = os.path.join(out_dir, TRAIN_FILE)
    if not os.path.exists(train_path):
        raise DataFormatError(f"No prepared data in {out_dir}; run 'prepare' first")
    train = corpus_service.read_prepared(train_path)
    validation = corpus_service.read_prepared(os.path.join(out_dir, VALIDATION_FILE))
    for name, examples in (("train", train), ("validation", validation)):
        if any(ex.label(config.subtask) is None for ex in examples):
            raise DataFormatError(f"Prepared {name} data has no subtask {config.subtask} labels; "
                                  f"rerun 'prepare' with --subtask {config.subtask}")
    return train, validation


def _write_history(path: str, history: TrainHistory) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in history.epochs:
            fh.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")


def _write_config_echo(path: str, config: RunConfig, resolved: Dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"run": config.to_dict(), **resolved}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _train_deep(config: RunConfig, train, validation) -> Tuple[str, Dict]:
    """Normalize, encode and train the deep model; returns the checkpoint path and resolved settings."""
    embeddings_path = _require_path(config, "embeddings")
    normalizer = TextNormalizer.from_config(config)
    train_tokens = normalizer.normalize_many([ex.text for ex in train])
    val_tokens = normalizer.normalize_many([ex.text for ex in validation])
    vocab = build_char_vocab(train_tokens, config.char_vocab_size)
    max_word_len = resolve_max_word_len(train_tokens, config.max_word_len_cap, config.pool_size ** 2)
    table = load_embedding_table(embeddings_path, config.embedding_limit)
    model_config = ModelConfig.from_run_config(config, vocab.size, max_word_len, table.dim)

    trainer = DeepModelTrainer(model_config, vocab, table, config.subtask,
                               log_path=os.path.join(config.output_dir, HISTORY_FILE))
    model, history = trainer.train(
        train_tokens, encode_labels([ex.label(config.subtask) for ex in train], config.subtask).tolist(),
        val_tokens, encode_labels([ex.label(config.subtask) for ex in validation], config.subtask).tolist(),
    )
    vocab.save(os.path.join(config.output_dir, CHAR_VOCAB_FILE))
    model_path = os.path.join(config.output_dir, DEEP_MODEL_FILE)
    save_checkpoint(model_path, model, vocab, config.to_dict())
    return model_path, {"model": asdict(model_config), "best_epoch": history.best_epoch}


def _baseline_features(config: RunConfig, bundle: BaselineBundle, ids: Sequence[str], texts: Sequence[str]):
    """Feature rows for a baseline: n-grams for svm, sentence vectors for embedding-svm."""
    if bundle.kind == "svm":
        return featurize(bundle.featurizer, texts)
    vectors = load_sentence_vectors(_require_path(config, "sentence_vectors"))
    return vectors_for_ids(vectors, ids)


def _train_baseline(config: RunConfig, train, validation) -> Tuple[str, Dict]:
    """Fit one of the SVM baselines and write its single-entry history."""
    hyperparams = SgdHyperparams.from_run_config(config)
    y = [ex.label(config.subtask) for ex in train]
    if config.model == "svm":
        featurizer = fit_featurizer([ex.text for ex in train])
        X = featurize(featurizer, [ex.text for ex in train])
        model = train_linear_svm(X, y, hyperparams)
    else:
        featurizer = None
        X = vectors_for_ids(load_sentence_vectors(_require_path(config, "sentence_vectors")),
                            [ex.id for ex in train])
        model = train_embedding_svm(X, y, hyperparams)
    bundle = BaselineBundle(config.model, model, config.subtask, featurizer, config.to_dict())

    val_f1 = val_accuracy = None
    if validation:
        X_val = _baseline_features(config, bundle, [ex.id for ex in validation], [ex.text for ex in validation])
        names = labels_for(config.subtask)
        metrics = report(confusion([ex.label(config.subtask) for ex in validation], model.predict(X_val), names))
        val_f1, val_accuracy = metrics.macro_f1, metrics.accuracy
    history = TrainHistory()
    history.record(EpochRecord(hyperparams.epochs, model.objective(X, y), val_f1, val_accuracy))
    _write_history(os.path.join(config.output_dir, HISTORY_FILE), history)

    model_path = os.path.join(config.output_dir, BASELINE_MODEL_FILE)
    save_baseline(model_path, bundle)
    return model_path, {"sgd": asdict(hyperparams), "sgd_metadata": model.metadata}


def cmd_train(config: RunConfig) -> str:
    """Train the configured model on prepared data; returns the model path."""
    train, validation = _load_prepared(config)
    if config.include_validation_in_training:
        logger.info(f"Merging {len(validation)} validation examples into training")
        train, validation = train + validation, []
    os.makedirs(config.output_dir, exist_ok=True)
    torch.use_deterministic_algorithms(config.deterministic)

    try:
        if config.model == "deep":
            model_path, resolved = _train_deep(config, train, validation)
        else:
            model_path, resolved = _train_baseline(config, train, validation)
    except Exception as e:
        logger.error(f"Training failed: {str(e)}")
        raise
    _write_config_echo(os.path.join(config.output_dir, CONFIG_ECHO_FILE), config, resolved)
    logger.info(f"Trained {config.model} model written to {model_path}")
    return model_path


class DeepPredictor:
    """Predictions from a deep checkpoint."""

    def __init__(self, pipeline: Pipeline):
        self.pipeline = pipeline
        self.subtask = pipeline.subtask
        logger.info("DeepPredictor initialized successfully")

    def predict(self, ids: Sequence[str], texts: Sequence[str]) -> List[Tuple[str, float]]:
        return predict(self.pipeline, texts)

    def tokens(self, text: str) -> List[str]:
        return self.pipeline.normalizer.normalize(text)


class BaselinePredictor:
    """Linear SVM predictions; the probability column is the logistic of the margin."""

    def __init__(self, bundle: BaselineBundle, config: RunConfig):
        self.bundle = bundle
        self.config = config
        self.subtask = bundle.subtask
        logger.info("BaselinePredictor initialized successfully")

    def predict(self, ids: Sequence[str], texts: Sequence[str]) -> List[Tuple[str, float]]:
        if not texts:
            return []
        X = _baseline_features(self.config, self.bundle, ids, texts)
        model = self.bundle.model
        positive = expit(model.decision_function(X))
        labels = model.predict(X)
        return [(label, float(p if label == model.classes[1] else 1.0 - p)) for label, p in zip(labels, positive)]

    def tokens(self, text: str) -> List[str]:
        return tokenize_tweet(text)


def load_predictor(checkpoint: str, config: RunConfig):
    """Open a deep checkpoint or a baseline dump, told apart by the magic line."""
    if not os.path.exists(checkpoint):
        raise DataFormatError(f"Checkpoint not found: {checkpoint}")
    with open(checkpoint, "rb") as fh:
        head = fh.read(len(CHECKPOINT_MAGIC))
    if head == BASELINE_MAGIC:
        bundle = load_baseline(checkpoint)
        if bundle.kind == "embedding-svm" and not config.sentence_vectors:
            config = replace(config, sentence_vectors=bundle.run_config.get("sentence_vectors"))
        return BaselinePredictor(bundle, config)

    model, vocab, stored = load_checkpoint(checkpoint)
    trained = RunConfig(**stored) if stored else RunConfig()
    embeddings = config.embeddings or trained.embeddings
    if not embeddings:
        raise ConfigError("--embeddings is required to run a deep checkpoint")
    table = load_embedding_table(embeddings, trained.embedding_limit)
    if table.dim != model.config.word_emb_dim:
        raise DataFormatError(f"Embedding dim {table.dim} does not match checkpoint dim {model.config.word_emb_dim}")
    normalizer = TextNormalizer.from_config(trained)
    return DeepPredictor(Pipeline(normalizer, vocab, table, model, trained.subtask))


def read_input_texts(path: str) -> Tuple[List[str], List[str]]:
    """Texts to classify: an OLID test TSV, or one text per line with 1-based line ids."""
    if not os.path.exists(path):
        raise DataFormatError(f"Input file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\r\n")
        if first == OLID_TEST_HEADER:
            rows = corpus_service.load_olid_texts(path)
            return [row[0] for row in rows], [row[1] for row in rows]
        fh.seek(0)
        lines = [line.rstrip("\r\n") for line in fh]
    return [str(i) for i in range(1, len(lines) + 1)], lines


def _write_predictions(predictor, input_path: str, output_path: str, debug_tokens: bool = False) -> str:
    """Run a predictor over an input file and write the label CSV."""
    ids, texts = read_input_texts(input_path)
    predictions = predictor.predict(ids, texts)
    os.makedirs(os.path.dirname(os.path.abspath(output_path)), exist_ok=True)
    extra = {"probability": [round(p, 6) for _, p in predictions]}
    if debug_tokens:
        extra["tokens"] = [" ".join(predictor.tokens(text)) for text in texts]
    corpus_service.write_label_file(output_path, ids, [label for label, _ in predictions], extra)
    return output_path


def cmd_predict(config: RunConfig, checkpoint: str, input_path: str, output_path: Optional[str] = None,
                debug_tokens: bool = False) -> str:
    """Label every input text; writes `id,label,probability` CSV (plus `tokens` when debugging)."""
    predictor = load_predictor(checkpoint, config)
    return _write_predictions(predictor, input_path,
                              output_path or os.path.join(config.output_dir, PREDICTIONS_FILE), debug_tokens)


def _gold_path(config: RunConfig, gold: Optional[str]) -> str:
    """Gold labels from the argument, falling back to --test-labels."""
    path = gold or config.test_labels
    if not path:
        raise ConfigError("--test-labels (gold file) is required")
    return path


def cmd_evaluate(config: RunConfig, checkpoint: Optional[str] = None, gold: Optional[str] = None,
                 predictions: Optional[str] = None) -> Dict:
    """Score predictions against gold; writes predictions, metrics with baselines and the confusion matrix."""
    gold_labels = corpus_service.load_label_file(_gold_path(config, gold))
    if not gold_labels:
        raise DataFormatError("Gold file has no labels")
    os.makedirs(config.output_dir, exist_ok=True)

    if predictions:
        predicted = corpus_service.load_label_file(predictions)
        subtask = config.subtask
    elif checkpoint:
        predictor = load_predictor(checkpoint, config)
        predictions = _write_predictions(predictor, _require_path(config, "olid_test"),
                                         os.path.join(config.output_dir, PREDICTIONS_FILE))
        predicted = corpus_service.load_label_file(predictions)
        subtask = predictor.subtask
    else:
        raise ConfigError("evaluate needs --checkpoint or --predictions")

    missing = [ex_id for ex_id in gold_labels if ex_id not in predicted]
    if missing:
        raise DataFormatError(f"{len(missing)} gold ids have no prediction, e.g. {missing[:3]}")
    ids = list(gold_labels)
    gold_list = [gold_labels[ex_id] for ex_id in ids]
    pred_list = [predicted[ex_id] for ex_id in ids]
    labels = labels_for(subtask)
    if set(gold_list) - set(labels):
        raise DataFormatError(f"Gold labels {sorted(set(gold_list) - set(labels))} do not match subtask {subtask}")

    metrics = report(confusion(gold_list, pred_list, labels))
    baselines = all_trivial_baselines(gold_list, labels)
    write_report(os.path.join(config.output_dir, METRICS_FILE), metrics, baselines)
    with open(os.path.join(config.output_dir, CONFUSION_FILE), "w", encoding="utf-8") as fh:
        fh.write(metrics.confusion.render())
    print(render_table({**baselines, config.model: metrics}))
    print(render_details(metrics))
    return {"metrics": metrics, "baselines": baselines}


def cmd_baseline(config: RunConfig, gold: Optional[str] = None) -> Dict:
    """One-class baselines for a gold file."""
    gold_labels = list(corpus_service.load_label_file(_gold_path(config, gold)).values())
    if not gold_labels:
        raise DataFormatError("Gold file has no labels")
    baselines = all_trivial_baselines(gold_labels, infer_labels(gold_labels))
    os.makedirs(config.output_dir, exist_ok=True)
    with open(os.path.join(config.output_dir, BASELINES_FILE), "w", encoding="utf-8") as fh:
        json.dump({name: b.to_dict() for name, b in baselines.items()}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(render_table(baselines))
    return baselines
