import sys
import os
import logging
import itertools
from typing import Dict, List, Tuple

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from models import TOXIC_FLAGS, LabeledExample, ToxicRow
from services.corpus_service import write_label_file, write_olid, write_toxic_comments

logger = logging.getLogger(__name__)

OFFENSIVE_WORDS = ["asshole", "bitch", "crap", "dick", "jackass", "scumbag", "shithead", "bastard"]
# surface forms a user types to dodge filters
OBFUSCATED = {"asshole": ["a$$hole", "a$sh0le"], "bitch": ["b!tch", "b1tch"], "shithead": ["sh1thead"],
              "bastard": ["b@stard"], "crap": ["cr@p"]}
CLEAN_WORDS = ["love", "great", "game", "today", "happy", "weather", "music", "friends", "coffee",
               "morning", "thanks", "awesome", "weekend", "movie"]
FILLER_WORDS = ["the", "is", "so", "this", "really", "what", "a", "that"]
TARGET_WORDS = ["@USER", "you"]
EMBEDDING_DIM = 8

Tweet = List[Tuple[str, str]]


def _offensive_tweet(rng: np.random.Generator, targeted: bool) -> Tweet:
    words = [(str(w), str(w)) for w in rng.choice(FILLER_WORDS, size=rng.integers(1, 4))]
    for _ in range(rng.integers(1, 3)):
        word = str(rng.choice(OFFENSIVE_WORDS))
        surface = str(rng.choice(OBFUSCATED[word])) if word in OBFUSCATED and rng.random() < 0.4 else word
        words.insert(int(rng.integers(0, len(words) + 1)), (surface, word))
    if targeted:
        words = [("@USER", "@USER"), ("you", "you")] + words
    return words


def _clean_tweet(rng: np.random.Generator) -> Tweet:
    size = int(rng.integers(2, 6))
    vocabulary = CLEAN_WORDS + FILLER_WORDS
    words = [(str(w), str(w)) for w in rng.choice(vocabulary, size=size)]
    if rng.random() < 0.3:
        words.insert(0, ("@USER", "@USER"))
    return words


def _surface(tweet: Tweet) -> str:
    return " ".join(surface for surface, _ in tweet)


def _olid_examples(rng: np.random.Generator, n: int, first_id: int) -> Tuple[List[LabeledExample], Dict[str, Tweet]]:
    examples, tweets = [], {}
    for i in range(n):
        ex_id = str(first_id + i)
        if rng.random() < 0.4:
            targeted = bool(rng.random() < 0.6)
            tweet = _offensive_tweet(rng, targeted)
            examples.append(LabeledExample(ex_id, _surface(tweet), "OFF", "TIN" if targeted else "UNT"))
        else:
            tweet = _clean_tweet(rng)
            examples.append(LabeledExample(ex_id, _surface(tweet), "NOT"))
        tweets[ex_id] = tweet
    return examples, tweets


def _toxic_rows(rng: np.random.Generator, n_clean: int) -> List[ToxicRow]:
    """Every combination of the six flags once, then extra all-clean rows."""
    rows = []
    for i, flags in enumerate(itertools.product((0, 1), repeat=len(TOXIC_FLAGS))):
        if flags[0] or flags[1]:
            text = _surface(_offensive_tweet(rng, False)) + ", seriously\nstop"
        elif any(flags):
            text = "that is, like, " + _surface(_clean_tweet(rng))
        else:
            text = _surface(_clean_tweet(rng))
        rows.append(ToxicRow(f"t{i:04x}", text, *flags))
    for i in range(n_clean):
        rows.append(ToxicRow(f"c{i:04x}", _surface(_clean_tweet(rng)), 0, 0, 0, 0, 0, 0))
    return rows


def _word_vectors(rng: np.random.Generator) -> Dict[str, np.ndarray]:
    vectors = {}
    for word in OFFENSIVE_WORDS + CLEAN_WORDS + FILLER_WORDS + TARGET_WORDS:
        vector = rng.normal(0.0, 0.1, EMBEDDING_DIM)
        vector[0] = 1.0 if word in OFFENSIVE_WORDS else -1.0
        vector[1] = 1.0 if word in TARGET_WORDS else -1.0
        vectors[word] = vector
    return vectors


def _write_vectors(path: str, vectors: Dict[str, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(vectors)} {EMBEDDING_DIM}\n")
        for key, vector in vectors.items():
            fh.write(key + " " + " ".join(f"{v:.6f}" for v in vector) + "\n")


def generate(out_dir: str, n_train: int = 160, n_test: int = 40, n_toxic_clean: int = 40,
             seed: int = 5) -> Dict[str, str]:
    """Write a small, separable data set in the real file formats; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = {name: os.path.join(out_dir, filename) for name, filename in [
        ("olid_train", "olid_train.tsv"), ("olid_test", "olid_test.tsv"),
        ("test_labels_a", "test_labels_a.csv"), ("test_labels_b", "test_labels_b.csv"),
        ("toxic", "toxic_train.csv"), ("embeddings", "embeddings.txt"),
        ("sentence_vectors", "sentence_vectors.txt"),
    ]}

    train, train_tweets = _olid_examples(rng, n_train, 10000)
    test, test_tweets = _olid_examples(rng, n_test, 90000)
    write_olid(paths["olid_train"], train)
    with open(paths["olid_test"], "w", encoding="utf-8") as fh:
        fh.write("id\ttweet\n")
        for ex in test:
            fh.write(f"{ex.id}\t{ex.text}\n")
    write_label_file(paths["test_labels_a"], [ex.id for ex in test], [ex.label_a for ex in test])
    offensive = [ex for ex in test if ex.label_b is not None]
    write_label_file(paths["test_labels_b"], [ex.id for ex in offensive], [ex.label_b for ex in offensive])
    write_toxic_comments(paths["toxic"], _toxic_rows(rng, n_toxic_clean))

    word_vectors = _word_vectors(rng)
    _write_vectors(paths["embeddings"], word_vectors)
    # average pooling over the canonical words of each tweet
    sentence_vectors = {
        ex_id: np.mean([word_vectors[canonical] for _, canonical in tweet], axis=0)
        for ex_id, tweet in {**train_tweets, **test_tweets}.items()
    }
    _write_vectors(paths["sentence_vectors"], sentence_vectors)
    logger.info(f"Wrote sample data ({n_train} train, {n_test} test tweets) to {out_dir}")
    return paths


if __name__ == "__main__":
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[logging.StreamHandler(sys.stdout)]
    )
    target = sys.argv[1] if len(sys.argv) > 1 else "sample_data"
    try:
        written = generate(target)
        for name, path in written.items():
            print(f"{name}: {path}")
    except Exception as e:
        logger.error(f"Sample data generation failed: {str(e)}")
        sys.exit(1)
