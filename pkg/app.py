import logging
import os
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Mapping, Optional, get_type_hints

from errors import ConfigError

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")
DEFAULT_WORD_LIST = os.path.join(DATA_DIR, "offensive_words.txt")
DEFAULT_SUBSTITUTIONS = os.path.join(DATA_DIR, "substitutions.txt")

SUBTASKS = ("A", "B")
MODEL_KINDS = ("deep", "svm", "embedding-svm")
READOUTS = ("last", "mean")


def configure_logging(level: Optional[str] = None) -> None:
    """Configure root logging once for the process."""
    level_name = (level or os.environ.get("LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(level=getattr(logging, level_name, logging.INFO), format=LOG_FORMAT)


@dataclass
class RunConfig:
    # paths
    olid_train: Optional[str] = None
    olid_test: Optional[str] = None
    test_labels: Optional[str] = None
    toxic: Optional[str] = None
    embeddings: Optional[str] = None
    sentence_vectors: Optional[str] = None
    word_list: str = DEFAULT_WORD_LIST
    substitutions: str = DEFAULT_SUBSTITUTIONS
    output_dir: str = "runs/default"

    # task
    subtask: str = "A"
    model: str = "deep"
    include_validation_in_training: bool = False
    augment_with_toxic: bool = False

    # corpus
    validation_size: int = 1240
    split_seed: int = 5
    balance_seed: int = 5

    # normalizer
    max_substitutions: int = 3
    max_variants_per_word: int = 50000
    expand_contractions: bool = False
    expand_abbreviations: bool = False

    # encoding
    char_vocab_size: int = 256
    max_word_len_cap: int = 32
    embedding_limit: Optional[int] = None

    # deep model
    char_emb_dim: int = 32
    conv1_filters: int = 64
    conv2_filters: int = 128
    kernel_size: int = 2
    pool_size: int = 2
    lstm_units: int = 256
    fc1_units: int = 128
    dropout_keep: float = 0.5
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 20
    seed: int = 5
    readout: str = "last"

    # svm baselines
    svm_epochs: int = 15
    svm_alpha: float = 1e-6
    svm_l1_ratio: float = 0.15
    svm_seed: int = 5

    deterministic: bool = True

    def validate(self) -> "RunConfig":
        self.subtask = self.subtask.upper()
        if self.subtask not in SUBTASKS:
            raise ConfigError(f"subtask must be one of {SUBTASKS}, got {self.subtask}")
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model}")
        if self.readout not in READOUTS:
            raise ConfigError(f"readout must be one of {READOUTS}, got {self.readout}")
        if self.subtask == "B" and self.augment_with_toxic:
            raise ConfigError("Subtask B cannot be augmented with Toxic Comments data (no TIN/UNT labels)")
        if not 0 < self.dropout_keep <= 1:
            raise ConfigError(f"dropout_keep must be in (0, 1], got {self.dropout_keep}")
        for name in ("validation_size", "max_substitutions"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("char_vocab_size", "max_word_len_cap", "char_emb_dim", "conv1_filters",
                     "conv2_filters", "kernel_size", "pool_size", "lstm_units", "fc1_units",
                     "batch_size", "max_epochs", "svm_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.svm_alpha <= 0:
            raise ConfigError("svm_alpha must be > 0")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _coerce(name: str, raw: Any, target: Any) -> Any:
    """Convert a textual value to the type of a RunConfig field."""
    if not isinstance(raw, str):
        return raw
    value = raw.strip()
    optional = getattr(target, "__args__", None)
    if optional and type(None) in optional:
        if value.lower() in ("", "none", "null"):
            return None
        target = next(arg for arg in optional if arg is not type(None))
    try:
        if target is bool:
            lowered = value.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value}")
        if target is int:
            return int(value)
        if target is float:
            return float(value)
        return value
    except ValueError as e:
        raise ConfigError(f"Invalid value for {name}: {str(e)}")


def read_config_file(path: str) -> Dict[str, str]:
    """Parse a flat `key = value` config file."""
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}")
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Build a RunConfig with precedence overrides > file > defaults."""
    path = path or os.environ.get("OFFENSEVAL_CONFIG")
    hints = get_type_hints(RunConfig)
    known = {f.name for f in fields(RunConfig)}

    merged: Dict[str, Any] = {}
    if path:
        logger.info(f"Loading config file {path}")
        merged.update(read_config_file(path))
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key.replace("-", "_")] = value

    unknown = sorted(set(merged) - known)
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")

    config = RunConfig(**{key: _coerce(key, value, hints[key]) for key, value in merged.items()})
    return config.validate()
