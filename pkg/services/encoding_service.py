"""Encoding of token lists into the model inputs.

Each tweet becomes a [words x max_word_len] grid of character indices and a
[words x dim] matrix of pretrained word vectors.
"""

import logging
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import torch

from errors import DataFormatError
from models import labels_for

logger = logging.getLogger(__name__)

PAD = 0
UNK = 1
FIRST_CHAR_INDEX = 2
DEFAULT_CHAR_VOCAB_SIZE = 256
DEFAULT_MAX_WORD_LEN_CAP = 32
DEFAULT_EMBEDDING_DIM = 300


@dataclass(frozen=True)
class CharVocabulary:
    """Character to row index of the char embedding; 0 is PAD and 1 is UNK."""

    index_of: Mapping[str, int]

    @property
    def size(self) -> int:
        """Number of input rows the char embedding needs (PAD and UNK included)."""
        return len(self.index_of) + FIRST_CHAR_INDEX

    def encode(self, char: str) -> int:
        return self.index_of.get(char, UNK)

    def chars(self) -> List[str]:
        return sorted(self.index_of, key=self.index_of.get)

    def save(self, path: str) -> None:
        """One 'index<TAB>codepoint-hex' line per character."""
        with open(path, "w", encoding="utf-8") as fh:
            for char in self.chars():
                fh.write(f"{self.index_of[char]}\t{ord(char):x}\n")

    @classmethod
    def from_chars(cls, chars: Sequence[str]) -> "CharVocabulary":
        return cls(MappingProxyType({char: i + FIRST_CHAR_INDEX for i, char in enumerate(chars)}))

    @classmethod
    def load(cls, path: str) -> "CharVocabulary":
        """Inverse of save."""
        if not os.path.exists(path):
            raise DataFormatError(f"Char vocabulary not found: {path}")
        index_of = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    index, codepoint = line.rstrip("\n").split("\t")
                    index_of[chr(int(codepoint, 16))] = int(index)
                except ValueError:
                    raise DataFormatError(f"{path}:{line_no}: expected 'index<TAB>codepoint-hex'")
        expected = set(range(FIRST_CHAR_INDEX, FIRST_CHAR_INDEX + len(index_of)))
        if set(index_of.values()) != expected:
            raise DataFormatError(f"{path}: indices must be {FIRST_CHAR_INDEX}..{FIRST_CHAR_INDEX + len(index_of) - 1}")
        return cls(MappingProxyType(index_of))


def build_char_vocab(corpus: Sequence[Sequence[str]], size: int = DEFAULT_CHAR_VOCAB_SIZE) -> CharVocabulary:
    """Map the `size` most frequent characters to 2..size+1; ties go to the lower code point."""
    if not corpus:
        raise DataFormatError("Cannot build a character vocabulary from an empty corpus")
    counts = Counter(char for tokens in corpus for token in tokens for char in token)
    ranked = sorted(counts, key=lambda char: (-counts[char], ord(char)))[:size]
    if len(ranked) < size:
        logger.info(f"Corpus has only {len(ranked)} distinct characters (requested {size})")
    return CharVocabulary.from_chars(ranked)


def resolve_max_word_len(corpus: Iterable[Sequence[str]], cap: int = DEFAULT_MAX_WORD_LEN_CAP,
                         multiple: int = 4) -> int:
    """Longest word in the corpus, capped, rounded up to a multiple of the pooling depth."""
    longest = max((len(token) for tokens in corpus for token in tokens), default=1)
    length = max(1, min(longest, cap))
    return -(-length // multiple) * multiple


def encode_chars(tokens: Sequence[str], vocab: CharVocabulary, max_word_len: int,
                 max_words: int) -> np.ndarray:
    """Character-index grid of shape [max_words, max_word_len]; 0 pads, 1 marks unknown."""
    grid = np.full((max_words, max_word_len), PAD, dtype=np.int64)
    for i, token in enumerate(tokens[:max_words]):
        for j, char in enumerate(token[:max_word_len]):
            grid[i, j] = vocab.encode(char)
    return grid


@dataclass(frozen=True)
class EmbeddingTable:
    """Pretrained word vectors of one dimension."""

    dim: int
    vectors: Mapping[str, np.ndarray] = field(default_factory=dict)

    @property
    def oov_vector(self) -> np.ndarray:
        return np.zeros(self.dim, dtype=np.float32)

    def lookup(self, token: str) -> np.ndarray:
        """Case-sensitive lookup with a lowercase fallback; zeros when absent."""
        vector = self.vectors.get(token)
        if vector is None:
            vector = self.vectors.get(token.lower())
        return self.oov_vector if vector is None else vector

    def __contains__(self, token: str) -> bool:
        return token in self.vectors or token.lower() in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    @classmethod
    def from_dict(cls, vectors: Dict[str, Sequence[float]]) -> "EmbeddingTable":
        arrays = {token: np.asarray(vector, dtype=np.float32) for token, vector in vectors.items()}
        dims = {array.shape[0] for array in arrays.values()}
        if len(dims) != 1:
            raise DataFormatError(f"Inconsistent vector lengths: {sorted(dims)}")
        return cls(dims.pop(), MappingProxyType(arrays))


def read_vector_file(path: str, limit: Optional[int] = None) -> Dict[str, np.ndarray]:
    """Parse `token v1 ... v_dim` lines with an optional `count dim` header."""
    if not os.path.exists(path):
        raise DataFormatError(f"Vector file not found: {path}")
    vectors: Dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip().split(" ")
            if not parts or parts == [""]:
                continue
            if line_no == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                dim = int(parts[1])
                continue
            if limit is not None and len(vectors) >= limit:
                break
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim or dim == 0:
                raise DataFormatError(f"{path}:{line_no}: expected {dim} values, found {len(values)}")
            try:
                vector = np.asarray(values, dtype=np.float32)
            except ValueError:
                raise DataFormatError(f"{path}:{line_no}: non-numeric vector value")
            vectors.setdefault(token, vector)
    if dim is None:
        raise DataFormatError(f"{path}: no vectors found")
    return vectors


def load_embedding_table(path: str, limit: Optional[int] = None) -> EmbeddingTable:
    """Load a word-vector text file into an EmbeddingTable."""
    try:
        vectors = read_vector_file(path, limit)
    except Exception as e:
        logger.error(f"Failed to load embedding table: {str(e)}")
        raise
    table = EmbeddingTable.from_dict(vectors)
    logger.info(f"Loaded {len(table)} word vectors of dim {table.dim} from {path}")
    return table


@dataclass
class EncodedBatch:
    """Model-ready tensors for a batch of tweets."""

    char_indices: torch.Tensor
    word_vectors: torch.Tensor
    word_mask: torch.Tensor
    labels: Optional[torch.Tensor] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def lengths(self) -> torch.Tensor:
        return self.word_mask.sum(dim=1)

    def __len__(self) -> int:
        return self.char_indices.shape[0]

    def to(self, dtype: torch.dtype) -> "EncodedBatch":
        return replace(self, word_vectors=self.word_vectors.to(dtype))


def encode_labels(labels: Sequence[str], subtask: str) -> torch.Tensor:
    """Class indices in the order of labels_for(subtask)."""
    classes = labels_for(subtask)
    try:
        return torch.tensor([classes.index(label) for label in labels], dtype=torch.long)
    except ValueError:
        unknown = sorted(set(labels) - set(classes))
        raise DataFormatError(f"Labels {unknown} are not in subtask {subtask} classes {classes}")


def make_batch(token_lists: Sequence[Sequence[str]], vocab: CharVocabulary, table: EmbeddingTable,
               max_word_len: int, labels: Optional[Sequence[int]] = None,
               max_words: Optional[int] = None) -> EncodedBatch:
    """Encode tweets into padded char grids, word vectors and a word mask.

    A tweet with no tokens is encoded as a single unknown word.
    """
    if not token_lists:
        raise DataFormatError("Cannot encode an empty batch")
    warnings = []
    counts = []
    for i, tokens in enumerate(token_lists):
        if not tokens:
            message = f"Example {i} has no tokens; encoded as a single unknown word"
            logger.warning(message)
            warnings.append(message)
        counts.append(max(1, len(tokens)))
    width = max(counts) if max_words is None else min(max(counts), max_words)

    batch_size = len(token_lists)
    chars = np.full((batch_size, width, max_word_len), PAD, dtype=np.int64)
    vectors = np.zeros((batch_size, width, table.dim), dtype=np.float32)
    mask = np.zeros((batch_size, width), dtype=bool)
    for i, tokens in enumerate(token_lists):
        if not tokens:
            chars[i, 0, 0] = UNK
            mask[i, 0] = True
            continue
        tokens = list(tokens[:width])
        chars[i] = encode_chars(tokens, vocab, max_word_len, width)
        for j, token in enumerate(tokens):
            vectors[i, j] = table.lookup(token)
        mask[i, :len(tokens)] = True

    return EncodedBatch(
        char_indices=torch.from_numpy(chars),
        word_vectors=torch.from_numpy(vectors),
        word_mask=torch.from_numpy(mask),
        labels=None if labels is None else torch.as_tensor(list(labels), dtype=torch.long),
        warnings=warnings,
    )
