"""Character-CNN + word-LSTM classifier.

Every word's characters go through embedding -> conv -> maxpool -> conv ->
maxpool; the flattened features are concatenated with the word's pretrained
vector and a unidirectional LSTM runs over the words. Two fully connected
layers map the LSTM read-out to two logits.
"""

import copy
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from errors import ConfigError, DataFormatError, NumericError
from models import EpochRecord, TrainHistory, labels_for
from services.encoding_service import CharVocabulary, EmbeddingTable, EncodedBatch, make_batch
from services.metrics_service import confusion, report
from services.normalization_service import TextNormalizer

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"OFFMDL1\n"
MODES = ("train", "eval")


@dataclass
class ModelConfig:
    """Architecture and training hyperparameters of the char-CNN + word-LSTM classifier."""

    char_vocab_size: int = 258
    char_emb_dim: int = 32
    conv1_filters: int = 64
    conv2_filters: int = 128
    kernel_size: int = 2
    pool_size: int = 2
    lstm_units: int = 256
    fc1_units: int = 128
    n_classes: int = 2
    dropout_keep: float = 0.5
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 20
    seed: int = 5
    max_word_len: int = 32
    word_emb_dim: int = 300
    readout: str = "last"

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type in (int, "int") and f.name != "seed" and value < 1:
                raise ConfigError(f"{f.name} must be >= 1, got {value}")
        if not 0 < self.dropout_keep <= 1:
            raise ConfigError(f"dropout_keep must be in (0, 1], got {self.dropout_keep}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.readout not in ("last", "mean"):
            raise ConfigError(f"readout must be 'last' or 'mean', got {self.readout}")

    @property
    def pooling_depth(self) -> int:
        return self.pool_size * self.pool_size

    @property
    def char_feature_dim(self) -> int:
        """Width of the flattened char-CNN output for one word."""
        return (self.max_word_len // self.pooling_depth) * self.conv2_filters

    @property
    def lstm_input_dim(self) -> int:
        return self.char_feature_dim + self.word_emb_dim

    @classmethod
    def from_run_config(cls, run_config, char_vocab_size: int, max_word_len: int,
                        word_emb_dim: int) -> "ModelConfig":
        """Model fields of a RunConfig plus the sizes only known after loading the data."""
        names = {f.name for f in fields(cls)}
        values = {name: value for name, value in run_config.to_dict().items() if name in names}
        values.update(char_vocab_size=char_vocab_size, max_word_len=max_word_len, word_emb_dim=word_emb_dim)
        return cls(**values)


class CharCnnLstmClassifier(nn.Module):
    """Char CNN per word, concatenated with the word vector, read by an LSTM and two dense layers."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.char_embedding = nn.Embedding(config.char_vocab_size, config.char_emb_dim)
        self.conv1 = nn.Conv1d(config.char_emb_dim, config.conv1_filters, config.kernel_size)
        self.conv2 = nn.Conv1d(config.conv1_filters, config.conv2_filters, config.kernel_size)
        self.pool = nn.MaxPool1d(config.pool_size, stride=config.pool_size)
        self.lstm = nn.LSTM(config.lstm_input_dim, config.lstm_units, batch_first=True)
        self.fc1 = nn.Linear(config.lstm_units, config.fc1_units)
        self.fc2 = nn.Linear(config.fc1_units, config.n_classes)
        self.dropout = nn.Dropout(p=1.0 - config.dropout_keep)
        # "same" padding at stride 1; the extra column goes on the right
        self._same_padding = ((config.kernel_size - 1) // 2, config.kernel_size // 2)

    def reset_parameters(self, seed: int) -> None:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, drawn from one seeded generator."""
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, param in self.named_parameters():
                if "bias" in name:
                    param.zero_()
                    continue
                fan_in = param.shape[1] if name.startswith("char_embedding") else param[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                sample = torch.rand(param.shape, generator=generator, dtype=torch.float64)
                param.copy_((sample * 2 - 1) * bound)

    def char_features(self, char_indices: torch.Tensor) -> torch.Tensor:
        """[words, max_word_len] -> [words, char_feature_dim]."""
        length = char_indices.shape[-1]
        if length < self.config.pooling_depth:
            raise DataFormatError("word length below pooling depth")
        if length != self.config.max_word_len:
            raise DataFormatError(
                f"Char grid width {length} does not match model max_word_len {self.config.max_word_len}")
        x = self.char_embedding(char_indices).transpose(1, 2)
        x = self.pool(F.relu(self.conv1(F.pad(x, self._same_padding))))
        x = self.pool(F.relu(self.conv2(F.pad(x, self._same_padding))))
        return self.dropout(x.flatten(1))

    def forward(self, char_indices: torch.Tensor, word_vectors: torch.Tensor,
                word_mask: torch.Tensor) -> torch.Tensor:
        """[batch, words, chars] indices with [batch, words, dim] vectors -> [batch, n_classes] logits."""
        batch_size, n_words, length = char_indices.shape
        if word_vectors.shape[:2] != (batch_size, n_words) or word_vectors.shape[2] != self.config.word_emb_dim:
            raise DataFormatError(
                f"Word vectors of shape {tuple(word_vectors.shape)} do not match "
                f"{(batch_size, n_words, self.config.word_emb_dim)}")
        chars = self.char_features(char_indices.reshape(batch_size * n_words, length))
        chars = chars.reshape(batch_size, n_words, -1)
        words = self.dropout(word_vectors.to(chars.dtype))
        outputs, _ = self.lstm(torch.cat([chars, words], dim=-1))

        mask = word_mask.to(outputs.dtype)
        lengths = mask.sum(dim=1).clamp(min=1)
        if self.config.readout == "mean":
            readout = (outputs * mask.unsqueeze(-1)).sum(dim=1) / lengths.unsqueeze(-1)
        else:
            last = (lengths.long() - 1)
            readout = outputs[torch.arange(batch_size), last]

        hidden = self.dropout(F.relu(self.fc1(self.dropout(readout))))
        return self.fc2(hidden)


def init_model(config: ModelConfig) -> CharCnnLstmClassifier:
    """A freshly initialized model; equal configs give identical parameters."""
    model = CharCnnLstmClassifier(config)
    model.reset_parameters(config.seed)
    return model


def count_parameters(model: nn.Module) -> int:
    """Number of trainable scalars."""
    return sum(param.numel() for param in model.parameters() if param.requires_grad)


def _set_mode(model: nn.Module, mode: str) -> None:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode}")
    model.train(mode == "train")


def char_word_features(char_indices: torch.Tensor, model: CharCnnLstmClassifier, mode: str = "eval") -> torch.Tensor:
    """Per-word char-CNN vectors in the given mode."""
    _set_mode(model, mode)
    return model.char_features(char_indices)


def forward(batch: EncodedBatch, model: CharCnnLstmClassifier, mode: str = "eval") -> torch.Tensor:
    """Logits for an encoded batch; dropout is active only in train mode."""
    _set_mode(model, mode)
    return model(batch.char_indices, batch.word_vectors, batch.word_mask)


def loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean softmax cross-entropy."""
    return F.cross_entropy(logits, labels)


def predict_logits(model: CharCnnLstmClassifier, token_lists: Sequence[Sequence[str]],
                   vocab: CharVocabulary, table: EmbeddingTable, batch_size: int = 256) -> torch.Tensor:
    """Eval-mode logits for token lists, encoded in chunks of batch_size."""
    _set_mode(model, "eval")
    dtype = next(model.parameters()).dtype
    chunks = []
    with torch.no_grad():
        for start in range(0, len(token_lists), batch_size):
            batch = make_batch(token_lists[start:start + batch_size], vocab, table, model.config.max_word_len)
            chunks.append(forward(batch.to(dtype), model, "eval"))
    if not chunks:
        return torch.zeros((0, model.config.n_classes))
    return torch.cat(chunks)


def decide(logits: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Argmax class (ties go to class 0) and its softmax probability."""
    probabilities = F.softmax(logits, dim=-1)
    classes = (probabilities[:, 1] > probabilities[:, 0]).long()
    return classes, probabilities.gather(1, classes.unsqueeze(1)).squeeze(1)


def evaluate_split(model: CharCnnLstmClassifier, token_lists, labels: Sequence[int], vocab, table,
                   subtask: str) -> Tuple[float, float]:
    """Macro-F1 and accuracy of `model` on encoded labels."""
    classes, _ = decide(predict_logits(model, token_lists, vocab, table))
    names = labels_for(subtask)
    metrics = report(confusion([names[y] for y in labels], [names[y] for y in classes.tolist()], names))
    return metrics.macro_f1, metrics.accuracy


class DeepModelTrainer:
    """Seeded mini-batch Adam training with best-validation-macro-F1 model selection."""

    def __init__(self, config: ModelConfig, vocab: CharVocabulary, table: EmbeddingTable,
                 subtask: str = "A", log_path: Optional[str] = None):
        self.config = config
        self.vocab = vocab
        self.table = table
        self.subtask = subtask
        self.log_path = log_path
        logger.info("DeepModelTrainer initialized successfully")

    def _write_log(self, entry: EpochRecord) -> None:
        if self.log_path:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")

    def train(self, train_tokens: Sequence[Sequence[str]], train_labels: Sequence[int],
              val_tokens: Sequence[Sequence[str]] = (), val_labels: Sequence[int] = (),
              dtype: torch.dtype = torch.float32) -> Tuple[CharCnnLstmClassifier, TrainHistory]:
        """Train for max_epochs and return the best-validation model with its history."""
        if not train_tokens:
            raise DataFormatError("Training data is empty")
        if len(train_tokens) != len(train_labels) or len(val_tokens) != len(val_labels):
            raise DataFormatError("Token lists and labels differ in length")

        config = self.config
        torch.manual_seed(config.seed)
        generator = torch.Generator().manual_seed(config.seed)
        model = init_model(config).to(dtype)
        optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                                     betas=(0.9, 0.999), eps=1e-8)
        history = TrainHistory()
        best_state = None
        if self.log_path:
            open(self.log_path, "w").close()
        if not val_tokens:
            message = "Validation set is empty; keeping the model of the final epoch"
            logger.warning(message)
            history.warnings.append(message)

        n_examples = len(train_tokens)
        for epoch in range(1, config.max_epochs + 1):
            order = torch.randperm(n_examples, generator=generator).tolist()
            total_loss = 0.0
            for start in range(0, n_examples, config.batch_size):
                indices = order[start:start + config.batch_size]
                batch = make_batch([train_tokens[i] for i in indices], self.vocab, self.table,
                                   config.max_word_len, labels=[train_labels[i] for i in indices]).to(dtype)
                batch_loss = loss(forward(batch, model, "train"), batch.labels)
                if not torch.isfinite(batch_loss):
                    raise NumericError(f"Non-finite loss at epoch {epoch}")
                optimizer.zero_grad()
                batch_loss.backward()
                optimizer.step()
                total_loss += batch_loss.item() * len(indices)

            val_f1 = val_accuracy = None
            if val_tokens:
                val_f1, val_accuracy = evaluate_split(model, val_tokens, val_labels, self.vocab,
                                                      self.table, self.subtask)
            entry = EpochRecord(epoch, total_loss / n_examples, val_f1, val_accuracy)
            history.record(entry)
            if history.best_epoch == epoch and val_tokens:
                best_state = copy.deepcopy(model.state_dict())
            self._write_log(entry)
            logger.info(f"Epoch {epoch}/{config.max_epochs}: loss {entry.train_loss:.4f}, "
                        f"val macro-F1 {val_f1 if val_f1 is None else round(val_f1, 4)}")

        if best_state is not None:
            model.load_state_dict(best_state)
            logger.info(f"Restored parameters of best epoch {history.best_epoch}")
        _set_mode(model, "eval")
        return model, history


@dataclass
class Pipeline:
    """Everything needed to go from raw text to a label."""

    normalizer: TextNormalizer
    vocab: CharVocabulary
    table: EmbeddingTable
    model: CharCnnLstmClassifier
    subtask: str = "A"


def predict(pipeline: Pipeline, texts: Sequence[str]) -> List[Tuple[str, float]]:
    """Label and probability for each raw text."""
    token_lists = pipeline.normalizer.normalize_many(texts)
    logits = predict_logits(pipeline.model, token_lists, pipeline.vocab, pipeline.table)
    classes, probabilities = decide(logits)
    names = labels_for(pipeline.subtask)
    return [(names[c], p) for c, p in zip(classes.tolist(), probabilities.tolist())]


def save_checkpoint(path: str, model: CharCnnLstmClassifier, vocab: CharVocabulary,
                    run_config: Optional[Dict] = None) -> None:
    """Write the OFFMDL1 container: magic line followed by a torch-serialized payload."""
    payload = {
        "config": asdict(model.config),
        "state_dict": model.state_dict(),
        "char_vocab": vocab.chars(),
        "embedding_dim": model.config.word_emb_dim,
        "run_config": run_config or {},
    }
    buffer = io.BytesIO()
    torch.save(payload, buffer)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(buffer.getvalue())
    logger.info(f"Saved checkpoint to {path}")


def load_checkpoint(path: str) -> Tuple[CharCnnLstmClassifier, CharVocabulary, Dict]:
    """Model (in eval mode), char vocabulary and run config from an OFFMDL1 file."""
    if not os.path.exists(path):
        raise DataFormatError(f"Checkpoint not found: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise DataFormatError(f"{path}: not an OFFMDL1 checkpoint (bad magic)")
    try:
        payload = torch.load(io.BytesIO(raw[len(CHECKPOINT_MAGIC):]), weights_only=True)
        model = CharCnnLstmClassifier(ModelConfig(**payload["config"]))
        model.load_state_dict(payload["state_dict"])
    except Exception as e:
        logger.error(f"Failed to load checkpoint {path}: {str(e)}")
        raise DataFormatError(f"{path}: corrupt checkpoint: {str(e)}")
    _set_mode(model, "eval")
    return model, CharVocabulary.from_chars(payload["char_vocab"]), payload["run_config"]
