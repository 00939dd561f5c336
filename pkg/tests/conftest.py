import logging

import pytest

from app import DEFAULT_WORD_LIST, LOG_FORMAT
from scripts.generate_sample_data import generate
from services.deep_model_service import ModelConfig
from services.encoding_service import CharVocabulary, EmbeddingTable
from services.normalization_service import DEFAULT_SUBSTITUTION_MAP, build_variant_table, load_word_list

logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)


@pytest.fixture(scope="session")
def lexicon():
    return build_variant_table(load_word_list(DEFAULT_WORD_LIST), DEFAULT_SUBSTITUTION_MAP)


@pytest.fixture(scope="session")
def sample_data(tmp_path_factory):
    """Paths of a generated toy corpus in the real file formats."""
    return generate(str(tmp_path_factory.mktemp("sample_data")))


@pytest.fixture
def write_file(tmp_path):
    def _write(name, content):
        path = tmp_path / name
        path.write_text(content, encoding="utf-8")
        return str(path)
    return _write


@pytest.fixture
def toy_config():
    return ModelConfig(char_vocab_size=6, char_emb_dim=3, conv1_filters=2, conv2_filters=3, kernel_size=2,
                       pool_size=2, lstm_units=4, fc1_units=3, dropout_keep=1.0, learning_rate=0.01,
                       batch_size=8, max_epochs=5, seed=1, max_word_len=4, word_emb_dim=2)


@pytest.fixture
def toy_vocab():
    return CharVocabulary.from_chars(["a", "b", "c", "d"])


@pytest.fixture
def toy_table():
    return EmbeddingTable.from_dict({
        "ab": [1.0, 0.0],
        "cd": [0.0, 1.0],
        "Bad": [0.5, -0.5],
    })
