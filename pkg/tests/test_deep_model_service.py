import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from torch.autograd import gradcheck
from torch.func import functional_call

from errors import ConfigError, DataFormatError
from models import EpochRecord, TrainHistory
from services.deep_model_service import (CHECKPOINT_MAGIC, DeepModelTrainer, ModelConfig, Pipeline,
                                         char_word_features, count_parameters, decide, evaluate_split, forward,
                                         init_model, load_checkpoint, loss, predict, predict_logits,
                                         save_checkpoint)
from services.encoding_service import CharVocabulary, EmbeddingTable, EncodedBatch, make_batch
from services.normalization_service import TextNormalizer


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _conv_same(x, weight, bias):
    """x [channels, length]; stride-1 'same' convolution padded on the right."""
    k = weight.shape[2]
    padded = np.concatenate([np.zeros((x.shape[0], (k - 1) // 2)), x, np.zeros((x.shape[0], k // 2))], axis=1)
    out = np.zeros((weight.shape[0], x.shape[1]))
    for f in range(weight.shape[0]):
        for t in range(x.shape[1]):
            out[f, t] = bias[f] + np.sum(weight[f] * padded[:, t:t + k])
    return out


def _max_pool(x, size):
    n = x.shape[1] // size
    return np.stack([x[:, i * size:(i + 1) * size].max(axis=1) for i in range(n)], axis=1)


def _oracle_char_features(model, chars):
    p = {name: value.detach().numpy() for name, value in model.named_parameters()}
    size = model.config.pool_size
    rows = []
    for word in chars:
        x = p["char_embedding.weight"][word].T
        x = _max_pool(np.maximum(_conv_same(x, p["conv1.weight"], p["conv1.bias"]), 0), size)
        x = _max_pool(np.maximum(_conv_same(x, p["conv2.weight"], p["conv2.bias"]), 0), size)
        rows.append(x.reshape(-1))
    return np.stack(rows)


def _oracle_logits(model, chars, vectors):
    p = {name: value.detach().numpy() for name, value in model.named_parameters()}
    inputs = np.concatenate([_oracle_char_features(model, chars), vectors], axis=1)
    hidden = model.config.lstm_units
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    for x in inputs:
        gates = p["lstm.weight_ih_l0"] @ x + p["lstm.bias_ih_l0"] + p["lstm.weight_hh_l0"] @ h + p["lstm.bias_hh_l0"]
        i, f, g, o = np.split(gates, 4)
        c = _sigmoid(f) * c + _sigmoid(i) * np.tanh(g)
        h = _sigmoid(o) * np.tanh(c)
    fc1 = np.maximum(p["fc1.weight"] @ h + p["fc1.bias"], 0)
    return p["fc2.weight"] @ fc1 + p["fc2.bias"]


@pytest.fixture
def toy_model(toy_config):
    torch.manual_seed(0)
    model = init_model(toy_config).double()
    # non-zero biases so the oracle exercises them
    with torch.no_grad():
        for name, param in model.named_parameters():
            if "bias" in name:
                param.uniform_(-0.3, 0.3)
    return model


class TestInitModel:
    def test_default_embedding_shape(self):
        model = init_model(ModelConfig())
        assert tuple(model.char_embedding.weight.shape) == (258, 32)

    def test_seeded(self, toy_config):
        first, second = init_model(toy_config), init_model(toy_config)
        for a, b in zip(first.state_dict().values(), second.state_dict().values()):
            assert torch.equal(a, b)

    def test_biases_zero_and_weights_bounded(self, toy_config):
        model = init_model(toy_config)
        for name, param in model.named_parameters():
            if "bias" in name:
                assert not param.any()
            else:
                fan_in = param.shape[1] if name.startswith("char_embedding") else param[0].numel()
                assert param.abs().max() <= 1.0 / math.sqrt(fan_in) + 1e-6

    def test_lstm_gate_shape(self):
        config = ModelConfig(lstm_units=8)
        model = init_model(config)
        assert tuple(model.lstm.weight_ih_l0.shape) == (32, config.char_feature_dim + config.word_emb_dim)

    def test_parameter_count_formula(self):
        c = ModelConfig()
        lstm_input = (c.max_word_len // (c.pool_size ** 2)) * c.conv2_filters + c.word_emb_dim
        expected = (
            c.char_vocab_size * c.char_emb_dim
            + c.char_emb_dim * c.conv1_filters * c.kernel_size + c.conv1_filters
            + c.conv1_filters * c.conv2_filters * c.kernel_size + c.conv2_filters
            # torch keeps separate input and recurrent biases
            + 4 * c.lstm_units * (lstm_input + c.lstm_units) + 2 * 4 * c.lstm_units
            + c.lstm_units * c.fc1_units + c.fc1_units
            + c.fc1_units * c.n_classes + c.n_classes
        )
        assert count_parameters(init_model(c)) == expected

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            ModelConfig(dropout_keep=0.0)
        with pytest.raises(ConfigError):
            ModelConfig(lstm_units=0)


class TestCharWordFeatures:
    def test_feature_dim(self):
        model = init_model(ModelConfig(max_word_len=16))
        features = char_word_features(torch.zeros((3, 16), dtype=torch.long), model, "eval")
        assert features.shape == (3, 512)

    def test_word_length_below_pooling_depth(self):
        model = init_model(ModelConfig(max_word_len=2))
        with pytest.raises(DataFormatError, match="word length below pooling depth"):
            char_word_features(torch.zeros((1, 2), dtype=torch.long), model)

    def test_all_pad_rows_are_constant(self, toy_model):
        features = char_word_features(torch.zeros((2, 4), dtype=torch.long), toy_model, "eval")
        assert torch.equal(features[0], features[1])

    def test_matches_hand_computation(self, toy_model):
        chars = np.array([[2, 3, 0, 0], [5, 4, 3, 2]])
        features = char_word_features(torch.from_numpy(chars), toy_model, "eval")
        np.testing.assert_allclose(features.detach().numpy(), _oracle_char_features(toy_model, chars), atol=1e-12)


class TestForward:
    def test_shape(self, toy_config, toy_vocab, toy_table):
        model = init_model(toy_config)
        batch = make_batch([["ab"], ["cd", "ab"], ["x"]], toy_vocab, toy_table, 4)
        assert forward(batch, model).shape == (3, 2)

    def test_identical_rows(self, toy_config, toy_vocab, toy_table):
        model = init_model(toy_config)
        logits = forward(make_batch([["ab", "cd"], ["ab", "cd"]], toy_vocab, toy_table, 4), model)
        torch.testing.assert_close(logits[0], logits[1], atol=1e-6, rtol=0)

    def test_matches_lstm_oracle(self, toy_model, toy_vocab, toy_table):
        batch = make_batch([["ab", "cd"]], toy_vocab, toy_table, 4)
        logits = forward(batch.to(torch.float64), toy_model, "eval")
        expected = _oracle_logits(toy_model, batch.char_indices[0].numpy(), batch.word_vectors[0].double().numpy())
        np.testing.assert_allclose(logits[0].detach().numpy(), expected, atol=1e-10)

    def test_padding_invariance(self, toy_config, toy_vocab, toy_table):
        model = init_model(toy_config)
        batch = make_batch([["ab"], ["cd", "ab", "dc"]], toy_vocab, toy_table, 4)
        padded = EncodedBatch(
            char_indices=F.pad(batch.char_indices, (0, 0, 0, 3)),
            word_vectors=F.pad(batch.word_vectors, (0, 0, 0, 3)),
            word_mask=torch.cat([batch.word_mask, torch.zeros((2, 3), dtype=torch.bool)], dim=1),
        )
        torch.testing.assert_close(forward(batch, model), forward(padded, model), atol=1e-5, rtol=0)

    def test_mean_readout_padding_invariance(self, toy_config, toy_vocab, toy_table):
        toy_config.readout = "mean"
        model = init_model(toy_config)
        single = forward(make_batch([["ab"]], toy_vocab, toy_table, 4), model)
        mixed = forward(make_batch([["ab"], ["cd", "cd", "cd"]], toy_vocab, toy_table, 4), model)
        torch.testing.assert_close(single[0], mixed[0], atol=1e-5, rtol=0)

    def test_dropout_keep_one_matches_eval(self, toy_config, toy_vocab, toy_table):
        model = init_model(toy_config)
        batch = make_batch([["ab", "cd"], ["dc"]], toy_vocab, toy_table, 4)
        assert torch.equal(forward(batch, model, "train"), forward(batch, model, "eval"))

    def test_eval_is_deterministic_with_dropout(self, toy_config, toy_vocab, toy_table):
        toy_config.dropout_keep = 0.5
        model = init_model(toy_config)
        batch = make_batch([["ab", "cd"]], toy_vocab, toy_table, 4)
        assert torch.equal(forward(batch, model, "eval"), forward(batch, model, "eval"))

    def test_dimension_mismatch(self, toy_config, toy_vocab):
        model = init_model(toy_config)
        table = EmbeddingTable.from_dict({"ab": [1.0, 2.0, 3.0]})
        with pytest.raises(DataFormatError):
            forward(make_batch([["ab"]], toy_vocab, table, 4), model)

    def test_unknown_mode(self, toy_config, toy_vocab, toy_table):
        with pytest.raises(ConfigError):
            forward(make_batch([["ab"]], toy_vocab, toy_table, 4), init_model(toy_config), "test")


class TestLoss:
    def test_uniform_logits(self):
        assert loss(torch.tensor([[0.0, 0.0]]), torch.tensor([1])).item() == pytest.approx(math.log(2))

    def test_saturated_logits(self):
        value = loss(torch.tensor([[10.0, -10.0]], dtype=torch.float64), torch.tensor([0]))
        assert value.item() == pytest.approx(math.log1p(math.exp(-20)), rel=1e-6)

    def test_mean_over_batch(self):
        logits = torch.tensor([[1.0, -1.0], [-1.0, 1.0]])
        single = loss(logits[:1], torch.tensor([0]))
        assert loss(logits, torch.tensor([0, 1])).item() == pytest.approx(single.item())


def test_gradients_match_finite_differences(toy_model, toy_vocab, toy_table):
    toy_model.eval()
    batch = make_batch([["abcd", "dcba"], ["cd"]], toy_vocab, toy_table, 4, labels=[1, 0]).to(torch.float64)
    names = [name for name, _ in toy_model.named_parameters()]
    params = tuple(p.detach().clone().requires_grad_(True) for p in toy_model.parameters())

    def objective(*tensors):
        logits = functional_call(toy_model, dict(zip(names, tensors)),
                                 (batch.char_indices, batch.word_vectors, batch.word_mask))
        return loss(logits, batch.labels)

    assert gradcheck(objective, params, eps=1e-6, atol=1e-6, rtol=1e-4)


class TestDecide:
    def test_tie_goes_to_class_zero(self):
        classes, probabilities = decide(torch.tensor([[0.0, 0.0]]))
        assert classes.tolist() == [0]
        assert probabilities.tolist() == [pytest.approx(0.5)]

    def test_softmax_rows_sum_to_one(self):
        logits = torch.randn(16, 2, generator=torch.Generator().manual_seed(3)) * 5
        torch.testing.assert_close(F.softmax(logits, dim=-1).sum(dim=1), torch.ones(16), atol=1e-6, rtol=0)


def _separable_corpus(n=64, seed=11):
    rng = np.random.default_rng(seed)
    words = {1: ["ab", "ba", "aab"], 0: ["cd", "dc", "ccd"]}
    tokens, labels = [], []
    for i in range(n):
        label = i % 2
        tokens.append([str(w) for w in rng.choice(words[label], size=rng.integers(1, 5))])
        labels.append(label)
    table = EmbeddingTable.from_dict({w: ([1.0, 0.0] if label else [0.0, 1.0])
                                      for label, ws in words.items() for w in ws})
    return tokens, labels, table


@pytest.fixture
def overfit_config():
    return ModelConfig(char_vocab_size=6, char_emb_dim=4, conv1_filters=4, conv2_filters=4, lstm_units=8,
                       fc1_units=8, dropout_keep=1.0, learning_rate=0.01, batch_size=8, max_epochs=60, seed=3,
                       max_word_len=4, word_emb_dim=2)


class TestTrainer:
    def test_overfits_separable_corpus(self, overfit_config, toy_vocab):
        tokens, labels, table = _separable_corpus()
        model, history = DeepModelTrainer(overfit_config, toy_vocab, table).train(tokens, labels, tokens, labels)
        _, accuracy = evaluate_split(model, tokens, labels, toy_vocab, table, "A")
        assert accuracy >= 0.95
        assert history.best_record.val_accuracy == pytest.approx(accuracy)

    def test_zero_learning_rate_keeps_parameters(self, toy_config, toy_vocab, toy_table):
        toy_config.learning_rate = 0.0
        tokens = [["ab"], ["cd", "ab"], ["dc"]]
        model, _ = DeepModelTrainer(toy_config, toy_vocab, toy_table).train(tokens, [1, 0, 1])
        for name, value in init_model(toy_config).state_dict().items():
            assert torch.equal(model.state_dict()[name], value), name

    def test_deterministic(self, overfit_config, toy_vocab, tmp_path):
        overfit_config.max_epochs = 3
        overfit_config.dropout_keep = 0.5
        tokens, labels, table = _separable_corpus(32)
        runs = []
        for i in range(2):
            log_path = tmp_path / f"history{i}.jsonl"
            trainer = DeepModelTrainer(overfit_config, toy_vocab, table, log_path=str(log_path))
            model, history = trainer.train(tokens, labels, tokens[:8], labels[:8])
            runs.append((model, history, log_path.read_bytes()))
        assert [e.to_dict() for e in runs[0][1].epochs] == [e.to_dict() for e in runs[1][1].epochs]
        assert runs[0][2] == runs[1][2]
        for a, b in zip(runs[0][0].state_dict().values(), runs[1][0].state_dict().values()):
            assert torch.equal(a, b)

    def test_empty_validation_keeps_final_epoch(self, toy_config, toy_vocab, toy_table):
        model, history = DeepModelTrainer(toy_config, toy_vocab, toy_table).train([["ab"], ["cd"]], [1, 0])
        assert history.best_epoch == toy_config.max_epochs
        assert history.warnings

    def test_empty_training_data(self, toy_config, toy_vocab, toy_table):
        with pytest.raises(DataFormatError):
            DeepModelTrainer(toy_config, toy_vocab, toy_table).train([], [])


def test_history_prefers_earliest_best_epoch():
    history = TrainHistory()
    for epoch, f1 in enumerate([0.5, 0.7, 0.7, 0.6], start=1):
        history.record(EpochRecord(epoch, 1.0, f1, 0.5))
    assert history.best_epoch == 2


class TestPrediction:
    def test_batch_equals_single_calls(self, toy_config, toy_vocab, toy_table, lexicon):
        pipeline = Pipeline(TextNormalizer(lexicon), toy_vocab, toy_table, init_model(toy_config))
        texts = ["ab cd", "dc", "a$$hole ab cd dc", ""]
        batched = predict(pipeline, texts)
        for text, (label, probability) in zip(texts, batched):
            single_label, single_probability = predict(pipeline, [text])[0]
            assert label == single_label
            assert probability == pytest.approx(single_probability, abs=1e-5)

    def test_empty_input(self, toy_config, toy_vocab, toy_table):
        assert predict_logits(init_model(toy_config), [], toy_vocab, toy_table).shape == (0, 2)


class TestCheckpoint:
    def test_round_trip(self, toy_config, toy_vocab, toy_table, tmp_path):
        model = init_model(toy_config)
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(path, model, toy_vocab, {"subtask": "A"})
        with open(path, "rb") as fh:
            assert fh.read(len(CHECKPOINT_MAGIC)) == b"OFFMDL1\n"
        loaded, vocab, run_config = load_checkpoint(path)
        assert dict(vocab.index_of) == dict(toy_vocab.index_of)
        assert run_config == {"subtask": "A"}
        batch = make_batch([["ab", "cd"]], toy_vocab, toy_table, 4)
        assert torch.equal(forward(batch, model), forward(batch, loaded))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"NOTAMODEL")
        with pytest.raises(DataFormatError, match="bad magic"):
            load_checkpoint(str(path))

    def test_vocabulary_round_trip_keeps_indices(self, tmp_path):
        vocab = CharVocabulary.from_chars(["z", "a", "€"])
        path = str(tmp_path / "char_vocab.tsv")
        vocab.save(path)
        assert CharVocabulary.load(path).encode("€") == 4
