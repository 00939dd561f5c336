import numpy as np
import pytest
import scipy.sparse as sp

from errors import ConfigError, DataFormatError, NumericError
from services.baseline_service import (BASELINE_MAGIC, BaselineBundle, LinearModel, SgdHyperparams, featurize,
                                       fit_featurizer, load_baseline, load_sentence_vectors, save_baseline,
                                       train_embedding_svm, train_linear_svm, vectors_for_ids)
from services.metrics_service import confusion, report


def _blobs(n=100, seed=0, spread=0.5):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(3.0, spread, (n // 2, 2)), rng.normal(-3.0, spread, (n // 2, 2))])
    y = ["OFF"] * (n // 2) + ["NOT"] * (n // 2)
    return X, y


def _text_corpus(n=200, seed=4):
    rng = np.random.default_rng(seed)
    offensive = ["idiot", "moron", "loser", "trash", "pathetic"]
    clean = ["lovely", "sunny", "friends", "music", "coffee", "garden"]
    filler = ["you", "are", "such", "a", "the", "so", "today", "really"]
    texts, labels = [], []
    for i in range(n):
        label = "OFF" if i % 2 else "NOT"
        words = list(rng.choice(filler, size=rng.integers(1, 4)))
        words.insert(int(rng.integers(0, len(words) + 1)), str(rng.choice(offensive if label == "OFF" else clean)))
        texts.append(" ".join(words))
        labels.append(label)
    return texts, labels


class TestFeaturizer:
    def test_word_ngrams_stay_inside_documents(self):
        featurizer = fit_featurizer(["a b", "b c"])
        assert set(featurizer.word_vocabulary) == {"a", "b", "c", "a b", "b c"}

    def test_single_document_idf_is_one(self):
        featurizer = fit_featurizer(["some words here"])
        np.testing.assert_allclose(featurizer.word_vectorizer.idf_, 1.0)

    def test_char_ngrams_include_spaces(self):
        featurizer = fit_featurizer(["ab c"])
        assert {"a", "b", "ab", "b ", "ab c"} <= set(featurizer.char_vocabulary)

    def test_blocks_are_concatenated(self):
        featurizer = fit_featurizer(["a b", "b c"])
        X = featurize(featurizer, ["a b"])
        assert X.shape == (1, featurizer.dimension)
        n_words = len(featurizer.word_vocabulary)
        word_columns = set(X[:, :n_words].nonzero()[1])
        assert word_columns == {featurizer.word_vocabulary[g] for g in ("a", "b", "a b")}

    def test_unseen_words_leave_word_block_empty(self):
        featurizer = fit_featurizer(["a b", "b c"])
        X = featurize(featurizer, ["zzz"])
        assert X[:, :len(featurizer.word_vocabulary)].nnz == 0

    def test_empty_string(self):
        featurizer = fit_featurizer(["a b", "b c"])
        assert featurize(featurizer, [""]).nnz == 0

    def test_empty_corpus(self):
        with pytest.raises(DataFormatError):
            fit_featurizer([])

    def test_tfidf_rows_are_unit_norm(self):
        texts, _ = _text_corpus(50)
        featurizer = fit_featurizer(texts)
        rows = featurizer.word_vectorizer.transform(texts + [""])
        norms = np.sqrt(np.asarray(rows.multiply(rows).sum(axis=1))).ravel()
        np.testing.assert_allclose(norms[:-1], 1.0, atol=1e-9)
        assert norms[-1] == 0.0

    def test_order_independent(self):
        texts, _ = _text_corpus(40)
        forward, backward = fit_featurizer(texts), fit_featurizer(texts[::-1])
        assert forward.word_vocabulary == backward.word_vocabulary
        assert forward.char_vocabulary == backward.char_vocabulary
        assert (featurize(forward, texts) != featurize(backward, texts)).nnz == 0


class TestLinearSvm:
    def test_separable_blobs(self):
        X, y = _blobs()
        model = train_linear_svm(sp.csr_matrix(X), y)
        assert model.predict(sp.csr_matrix(X)) == y
        assert model.classes == ("NOT", "OFF")

    def test_objective_decreases(self):
        X, y = _blobs()
        model = train_linear_svm(X, y)
        untrained = LinearModel(np.zeros(2), 0.0, model.classes, model.hyperparams)
        assert model.objective(X, y) < untrained.objective(X, y)

    def test_heavy_regularization_shrinks_weights(self):
        X, y = _blobs()
        model = train_linear_svm(X, y, SgdHyperparams(alpha=1e6))
        assert np.abs(model.weights).max() < 1e-6
        # only the unpenalized intercept is left, so scores are nearly constant
        assert np.ptp(model.decision_function(X)) < 1e-4

    def test_deterministic(self):
        X, y = _blobs()
        first, second = train_linear_svm(X, y), train_linear_svm(X, y)
        np.testing.assert_array_equal(first.weights, second.weights)
        assert first.bias == second.bias

    def test_scale_invariance(self):
        X, y = _blobs(spread=3.0)
        model = train_linear_svm(X, y)
        scaled = LinearModel(model.weights * 7.5, model.bias * 7.5, model.classes)
        assert scaled.predict(X) == model.predict(X)

    def test_single_class(self):
        with pytest.raises(NumericError, match="degenerate training set"):
            train_linear_svm(np.ones((3, 2)), ["OFF"] * 3)

    def test_row_mismatch(self):
        with pytest.raises(DataFormatError):
            train_linear_svm(np.ones((3, 2)), ["OFF", "NOT"])

    def test_hyperparameter_validation(self):
        with pytest.raises(ConfigError):
            SgdHyperparams(alpha=0)
        with pytest.raises(ConfigError):
            SgdHyperparams(epochs=0)

    def test_text_corpus(self):
        texts, labels = _text_corpus()
        featurizer = fit_featurizer(texts[:150])
        model = train_linear_svm(featurize(featurizer, texts[:150]), labels[:150])
        assert len(model.weights) == featurizer.dimension
        assert model.predict(featurize(featurizer, texts[:150])) == labels[:150]
        held_out = report(confusion(labels[150:], model.predict(featurize(featurizer, texts[150:])), ("NOT", "OFF")))
        assert held_out.macro_f1 >= 0.9

    def test_schedule_recorded(self):
        X, y = _blobs()
        model = train_linear_svm(X, y)
        assert model.metadata["learning_rate"] == "optimal"
        assert model.metadata["epochs_run"] == 15


class TestEmbeddingSvm:
    def test_gaussian_vectors(self):
        X, y = _blobs(spread=1.5, seed=2)
        model = train_embedding_svm(X, y)
        accuracy = np.mean(np.array(model.predict(X)) == np.array(y))
        assert accuracy >= 0.9

    def test_zero_vectors_give_constant_predictions(self):
        model = train_embedding_svm(np.zeros((10, 4)), ["OFF", "NOT"] * 5)
        assert len(set(model.predict(np.zeros((6, 4))))) == 1

    def test_deterministic(self):
        X, y = _blobs(spread=1.5, seed=2)
        np.testing.assert_array_equal(train_embedding_svm(X, y).weights, train_embedding_svm(X, y).weights)

    def test_row_mismatch(self):
        with pytest.raises(DataFormatError):
            train_embedding_svm(np.zeros((4, 2)), ["OFF", "NOT"])

    def test_sentence_vectors_by_id(self, write_file):
        vectors = load_sentence_vectors(write_file("sent.txt", "2 2\n101 0.5 1\n102 -1 0\n"))
        np.testing.assert_array_equal(vectors_for_ids(vectors, ["102", "101"]), [[-1, 0], [0.5, 1]])
        with pytest.raises(DataFormatError):
            vectors_for_ids(vectors, ["103"])


class TestModelDump:
    def test_round_trip(self, tmp_path):
        texts, labels = _text_corpus(60)
        featurizer = fit_featurizer(texts)
        model = train_linear_svm(featurize(featurizer, texts), labels)
        path = str(tmp_path / "model.svm")
        save_baseline(path, BaselineBundle("svm", model, "A", featurizer))
        with open(path, "rb") as fh:
            assert fh.read(len(BASELINE_MAGIC)) == BASELINE_MAGIC
        loaded = load_baseline(path)
        assert loaded.featurizer.word_vocabulary == featurizer.word_vocabulary
        assert loaded.model.predict(featurize(loaded.featurizer, texts)) == model.predict(featurize(featurizer, texts))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "model.svm"
        path.write_bytes(b"garbage")
        with pytest.raises(DataFormatError, match="bad magic"):
            load_baseline(str(path))
