"""Linear SVM baselines trained with stochastic gradient descent.

The n-gram baseline uses 1-3 gram word TF-IDF plus 1-5 gram character counts;
the embedding baseline consumes precomputed sentence vectors keyed by example id.
"""

import io
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import joblib
import numpy as np
import scipy.sparse as sp
from sklearn.feature_extraction.text import CountVectorizer, TfidfVectorizer
from sklearn.linear_model import SGDClassifier

from errors import ConfigError, DataFormatError, NumericError
from services.encoding_service import read_vector_file
from services.normalization_service import tokenize_tweet

logger = logging.getLogger(__name__)

BASELINE_MAGIC = b"OFFSVM1\n"


@dataclass
class SgdHyperparams:
    """Hyperparameters of the SGD-trained linear SVM."""

    epochs: int = 15
    loss: str = "hinge"
    alpha: float = 1e-6
    penalty: str = "elasticnet"
    l1_ratio: float = 0.15
    seed: int = 5

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.l1_ratio <= 1:
            raise ConfigError(f"l1_ratio must be in [0, 1], got {self.l1_ratio}")

    @classmethod
    def from_run_config(cls, run_config) -> "SgdHyperparams":
        """Take the svm_* fields of a RunConfig."""
        return cls(epochs=run_config.svm_epochs, alpha=run_config.svm_alpha,
                   l1_ratio=run_config.svm_l1_ratio, seed=run_config.svm_seed)


class NgramFeaturizer:
    """Word TF-IDF block followed by a character count block."""

    def __init__(self, word_ngram_range=(1, 3), char_ngram_range=(1, 5)):
        self.word_ngram_range = tuple(word_ngram_range)
        self.char_ngram_range = tuple(char_ngram_range)
        # idf = ln((1 + N) / (1 + df)) + 1, rows L2-normalized
        self.word_vectorizer = TfidfVectorizer(tokenizer=tokenize_tweet, token_pattern=None, lowercase=True,
                                               ngram_range=self.word_ngram_range, smooth_idf=True, norm="l2")
        self.char_vectorizer = CountVectorizer(analyzer="char", lowercase=True,
                                               ngram_range=self.char_ngram_range)

    def fit(self, texts: Sequence[str]) -> "NgramFeaturizer":
        """Learn both vocabularies and the word idf weights."""
        if not texts:
            raise DataFormatError("Cannot fit n-gram features on an empty corpus")
        try:
            self.word_vectorizer.fit(texts)
            self.char_vectorizer.fit(texts)
        except ValueError as e:
            raise DataFormatError(f"Cannot fit n-gram features: {str(e)}")
        logger.info(f"Fitted n-gram featurizer: {len(self.word_vocabulary)} word n-grams, "
                    f"{len(self.char_vocabulary)} char n-grams")
        return self

    @property
    def word_vocabulary(self) -> Dict[str, int]:
        return self.word_vectorizer.vocabulary_

    @property
    def char_vocabulary(self) -> Dict[str, int]:
        return self.char_vectorizer.vocabulary_

    @property
    def dimension(self) -> int:
        return len(self.word_vocabulary) + len(self.char_vocabulary)

    def transform(self, texts: Sequence[str]) -> sp.csr_matrix:
        """Rows of [word tf-idf | char counts] in the fitted column order."""
        words = self.word_vectorizer.transform(texts)
        chars = self.char_vectorizer.transform(texts).astype(np.float64)
        return sp.hstack([words, chars], format="csr")


def fit_featurizer(texts: Sequence[str]) -> NgramFeaturizer:
    """Fit a featurizer with the default n-gram ranges."""
    return NgramFeaturizer().fit(list(texts))


def featurize(featurizer: NgramFeaturizer, texts: Sequence[str]) -> sp.csr_matrix:
    """Sparse feature rows for texts under an already fitted featurizer."""
    return featurizer.transform(list(texts))


@dataclass
class LinearModel:
    """Weights, bias and class names of a trained linear SVM; classes[1] is the positive side."""

    weights: np.ndarray
    bias: float
    classes: tuple
    hyperparams: Dict = field(default_factory=dict)
    metadata: Dict = field(default_factory=dict)

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X @ self.weights).ravel() + self.bias

    def predict(self, X) -> List[str]:
        """classes[1] where the score is positive, classes[0] otherwise."""
        scores = self.decision_function(X)
        return [self.classes[1] if score > 0 else self.classes[0] for score in scores]

    def objective(self, X, y: Sequence[str]) -> float:
        """Mean hinge loss plus alpha times the elastic-net penalty."""
        signs = np.where(np.asarray(y) == self.classes[1], 1.0, -1.0)
        hinge = np.maximum(0.0, 1.0 - signs * self.decision_function(X)).mean()
        alpha = self.hyperparams.get("alpha", 0.0)
        l1_ratio = self.hyperparams.get("l1_ratio", 0.0)
        penalty = l1_ratio * np.abs(self.weights).sum() + (1 - l1_ratio) / 2 * np.dot(self.weights, self.weights)
        return float(hinge + alpha * penalty)


def _fit_sgd(X, y: Sequence[str], h: SgdHyperparams) -> LinearModel:
    """Fit a binary SGDClassifier and copy out its weights."""
    if X.shape[0] != len(y):
        raise DataFormatError(f"Feature matrix has {X.shape[0]} rows but there are {len(y)} labels")
    classes = sorted(set(y))
    if len(classes) < 2:
        raise NumericError("degenerate training set")
    if len(classes) > 2:
        raise DataFormatError(f"Expected two classes, found {classes}")
    classifier = SGDClassifier(loss=h.loss, penalty=h.penalty, alpha=h.alpha, l1_ratio=h.l1_ratio,
                               max_iter=h.epochs, tol=None, shuffle=True, random_state=h.seed,
                               learning_rate="optimal")
    classifier.fit(X, list(y))
    weights = classifier.coef_.ravel().astype(np.float64)
    if not np.all(np.isfinite(weights)):
        raise NumericError("SGD produced non-finite weights")
    # eta_t = 1 / (alpha * (t0 + t)) with sklearn's t0 heuristic
    metadata = {"learning_rate": "optimal", "updates": float(classifier.t_), "epochs_run": int(classifier.n_iter_)}
    logger.info(f"Trained linear SVM on {X.shape[0]} rows x {X.shape[1]} features for {h.epochs} epochs")
    return LinearModel(weights, float(classifier.intercept_[0]), tuple(classifier.classes_.tolist()),
                       asdict(h), metadata)


def train_linear_svm(X, y: Sequence[str], h: Optional[SgdHyperparams] = None) -> LinearModel:
    """Linear SVM on sparse n-gram features."""
    return _fit_sgd(sp.csr_matrix(X), y, h or SgdHyperparams())


def train_embedding_svm(vectors, y: Sequence[str], h: Optional[SgdHyperparams] = None) -> LinearModel:
    """Linear SVM on dense sentence vectors."""
    return _fit_sgd(np.asarray(vectors, dtype=np.float64), y, h or SgdHyperparams())


def load_sentence_vectors(path: str) -> Dict[str, np.ndarray]:
    """Id-keyed sentence vectors in the word-vector text format."""
    vectors = read_vector_file(path)
    logger.info(f"Loaded {len(vectors)} sentence vectors from {path}")
    return vectors


def vectors_for_ids(vectors: Dict[str, np.ndarray], ids: Sequence[str]) -> np.ndarray:
    """Stack the sentence vectors of ids in order; every id must have one."""
    missing = [ex_id for ex_id in ids if ex_id not in vectors]
    if missing:
        raise DataFormatError(f"No sentence vector for {len(missing)} ids, e.g. {missing[:3]}")
    return np.vstack([vectors[ex_id] for ex_id in ids]).astype(np.float64)


@dataclass
class BaselineBundle:
    """What the baseline model dump holds."""

    kind: str
    model: LinearModel
    subtask: str
    featurizer: Optional[NgramFeaturizer] = None
    run_config: Dict = field(default_factory=dict)


def save_baseline(path: str, bundle: BaselineBundle) -> None:
    """Write the OFFSVM1 container: magic line followed by a joblib dump."""
    buffer = io.BytesIO()
    joblib.dump(bundle, buffer)
    with open(path, "wb") as fh:
        fh.write(BASELINE_MAGIC)
        fh.write(buffer.getvalue())
    logger.info(f"Saved {bundle.kind} baseline to {path}")


def load_baseline(path: str) -> BaselineBundle:
    """Read a model written by save_baseline."""
    if not os.path.exists(path):
        raise DataFormatError(f"Baseline model not found: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(BASELINE_MAGIC):
        raise DataFormatError(f"{path}: not an OFFSVM1 model dump (bad magic)")
    try:
        return joblib.load(io.BytesIO(raw[len(BASELINE_MAGIC):]))
    except Exception as e:
        logger.error(f"Failed to load baseline model {path}: {str(e)}")
        raise DataFormatError(f"{path}: corrupt model dump: {str(e)}")
