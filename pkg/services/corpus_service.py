import csv
import logging
import os
from collections import Counter
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import DataFormatError
from models import (LABEL_A_VALUES, LABEL_B_VALUES, TOXIC_FLAGS, DataSplit, LabeledExample,
                    Source, ToxicRow)

logger = logging.getLogger(__name__)

OLID_COLUMNS = ["id", "tweet", "subtask_a", "subtask_b", "subtask_c"]
OLID_TEXT_COLUMNS = ["id", "tweet"]
TOXIC_COLUMNS = ["id", "comment_text", *TOXIC_FLAGS]
PREPARED_COLUMNS = ["id", "label_a", "label_b", "text"]
OLID_NULL = "NULL"
PREPARED_ABSENT = "-"

# Reference counts of the OLID training file and the Toxic Comments
# augmentation procedure.
OLID_TRAIN_SIZE = 13_240
OLID_TRAIN_SPLIT = 12_000
OLID_VALIDATION_SPLIT = 1_240
OLID_SUBTASK_B_SIZE = 4_400
TOXIC_MAPPED_TOTAL = 109_236
TOXIC_NOT_REMOVED = 84_626
TOXIC_PER_CLASS = 12_305

DEFAULT_SEED = 5


def _check_field_counts(path: str, expected: List[str], sep: str) -> None:
    """Raw field count per line, for unquoted files where pandas would pad short rows."""
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if line_no == 1 or not line.strip():
                continue
            found = line.count(sep) + 1
            if found != len(expected):
                raise DataFormatError(
                    f"{path}: malformed row at line {line_no}: expected {len(expected)} columns, found {found}")


def _read_table(path: str, expected: List[str], may_be_empty: Sequence[str] = (), **kwargs) -> pd.DataFrame:
    if not os.path.exists(path):
        raise DataFormatError(f"File not found: {path}")
    unquoted = kwargs.get("quoting") == csv.QUOTE_NONE
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False,
                            na_values=None if unquoted else [""], **kwargs)
    except pd.errors.EmptyDataError:
        raise DataFormatError(f"{path}: file is empty (missing header)")
    except pd.errors.ParserError as e:
        raise DataFormatError(f"{path}: malformed row: {str(e)}")
    if list(frame.columns) != expected:
        raise DataFormatError(f"{path}: expected header {expected}, found {list(frame.columns)}")
    if unquoted:
        _check_field_counts(path, expected, kwargs.get("sep", ","))
        return frame
    # quoted records may span lines, so report the record index
    required = [name for name in expected if name not in may_be_empty]
    missing = frame[required].isna().any(axis=1)
    if missing.any():
        record = int(np.flatnonzero(missing.to_numpy())[0]) + 1
        raise DataFormatError(f"{path}: malformed row at record {record}: expected {len(expected)} columns")
    return frame.fillna("")


def load_olid(path: str) -> List[LabeledExample]:
    """Load an OLID training TSV (`id tweet subtask_a subtask_b subtask_c`)."""
    frame = _read_table(path, OLID_COLUMNS, sep="\t", quoting=csv.QUOTE_NONE)
    examples = []
    for offset, row in enumerate(frame.itertuples(index=False)):
        line_no = offset + 2
        if row.subtask_a not in LABEL_A_VALUES:
            raise DataFormatError(f"{path}:{line_no}: unknown subtask_a label '{row.subtask_a}'")
        if row.subtask_b != OLID_NULL and row.subtask_b not in LABEL_B_VALUES:
            raise DataFormatError(f"{path}:{line_no}: unknown subtask_b label '{row.subtask_b}'")
        label_b = None if row.subtask_b == OLID_NULL else row.subtask_b
        try:
            examples.append(LabeledExample(row.id, row.tweet, row.subtask_a, label_b, Source.OLID))
        except DataFormatError as e:
            raise DataFormatError(f"{path}:{line_no}: {str(e)}")
    logger.info(f"Loaded {len(examples)} OLID examples from {path}")
    return examples


def write_olid(path: str, examples: Sequence[LabeledExample]) -> None:
    """Write examples in the OLID training layout; subtask_c is written as NULL."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(OLID_COLUMNS) + "\n")
        for ex in examples:
            if any(ch in ex.text for ch in "\t\r\n"):
                raise DataFormatError(f"Example {ex.id}: OLID text cannot contain tabs or newlines")
            fh.write("\t".join([ex.id, ex.text, ex.label_a, ex.label_b or OLID_NULL, OLID_NULL]) + "\n")


def load_olid_texts(path: str) -> List[Tuple[str, str]]:
    """Load an unlabeled OLID test TSV (`id tweet`)."""
    frame = _read_table(path, OLID_TEXT_COLUMNS, sep="\t", quoting=csv.QUOTE_NONE)
    logger.info(f"Loaded {len(frame)} texts from {path}")
    return list(zip(frame["id"], frame["tweet"]))


def load_toxic_comments(path: str) -> List[ToxicRow]:
    """Load the Toxic Comment Classification CSV; quoted multi-line comments are kept intact."""
    frame = _read_table(path, TOXIC_COLUMNS, may_be_empty=["comment_text"])
    rows = []
    for offset, record in enumerate(frame.to_dict("records")):
        flags = {}
        for name in TOXIC_FLAGS:
            value = record[name].strip()
            if value not in ("0", "1"):
                raise DataFormatError(
                    f"{path}: record {offset + 1} (id {record['id']}): non-binary {name} value '{record[name]}'")
            flags[name] = int(value)
        rows.append(ToxicRow(id=record["id"], comment_text=record["comment_text"], **flags))
    logger.info(f"Loaded {len(rows)} Toxic Comments rows from {path}")
    return rows


def write_toxic_comments(path: str, rows: Sequence[ToxicRow]) -> None:
    """Write rows in the Toxic Comments CSV layout."""
    frame = pd.DataFrame(
        [(row.id, row.comment_text, *row.flags) for row in rows],
        columns=TOXIC_COLUMNS,
    )
    frame.to_csv(path, index=False)


def toxic_label(row: ToxicRow) -> Optional[str]:
    """OFF for toxic/severe_toxic, NOT when no flag is set, None when excluded."""
    if row.toxic or row.severe_toxic:
        return "OFF"
    if not any(row.flags):
        return "NOT"
    return None


def map_toxic_labels(rows: Sequence[ToxicRow]) -> List[LabeledExample]:
    """Labeled examples for the Toxic rows that map to OFF or NOT."""
    examples = []
    excluded = 0
    empty = 0
    for row in rows:
        label = toxic_label(row)
        if label is None:
            excluded += 1
            continue
        if not row.comment_text:
            empty += 1
            continue
        examples.append(LabeledExample(row.id, row.comment_text, label, None, Source.TOXIC))
    if empty:
        logger.warning(f"Skipped {empty} Toxic Comments rows with empty text")
    counts = class_counts(examples)
    logger.info(f"Mapped Toxic Comments: {counts.get('OFF', 0)} OFF, {counts.get('NOT', 0)} NOT, {excluded} excluded")
    return examples


def class_counts(examples: Sequence[LabeledExample], subtask: str = "A") -> Dict[str, int]:
    """Examples per label, skipping those without a label for the subtask."""
    return dict(Counter(ex.label(subtask) for ex in examples if ex.label(subtask) is not None))


def balance(examples: Sequence[LabeledExample], seed: int = DEFAULT_SEED) -> List[LabeledExample]:
    """Randomly drop NOT examples until both classes have the same size; order is preserved."""
    not_positions = [i for i, ex in enumerate(examples) if ex.label_a == "NOT"]
    n_off = len(examples) - len(not_positions)
    if len(not_positions) <= n_off:
        return list(examples)
    rng = np.random.default_rng(seed)
    keep = set(rng.choice(not_positions, size=n_off, replace=False).tolist())
    balanced = [ex for i, ex in enumerate(examples) if ex.label_a == "OFF" or i in keep]
    logger.info(f"Balanced classes: removed {len(not_positions) - n_off} NOT examples, {n_off} per class remain")
    return balanced


def split(examples: Sequence[LabeledExample], n_train: int, n_val: int,
          seed: int = DEFAULT_SEED) -> DataSplit:
    """Seeded shuffle, then partition into train and validation."""
    if n_train < 0 or n_val < 0 or n_train + n_val != len(examples):
        raise DataFormatError(
            f"Split sizes {n_train} + {n_val} do not match {len(examples)} examples")
    order = np.random.default_rng(seed).permutation(len(examples))
    train = [examples[i] for i in order[:n_train]]
    validation = [examples[i] for i in order[n_train:]]
    logger.info(f"Split {len(examples)} examples into {len(train)} train / {len(validation)} validation (seed {seed})")
    return DataSplit(train=train, validation=validation, seed=seed)


def build_subtask_b_view(examples: Sequence[LabeledExample]) -> List[LabeledExample]:
    """The OFF examples, which are the ones carrying a subtask B label."""
    return [ex for ex in examples if ex.label_b is not None and ex.source == Source.OLID]


def write_prepared(path: str, examples: Sequence[LabeledExample]) -> None:
    """Write `id label_a label_b text` TSV, `-` for an absent label_b."""
    frame = pd.DataFrame(
        [(ex.id, ex.label_a, ex.label_b or PREPARED_ABSENT, ex.text) for ex in examples],
        columns=PREPARED_COLUMNS,
    )
    frame.to_csv(path, sep="\t", index=False, quoting=csv.QUOTE_MINIMAL)
    logger.info(f"Wrote {len(examples)} prepared examples to {path}")


def read_prepared(path: str) -> List[LabeledExample]:
    """Read a file written by write_prepared."""
    frame = _read_table(path, PREPARED_COLUMNS, sep="\t")
    examples = []
    for offset, row in enumerate(frame.itertuples(index=False)):
        label_b = None if row.label_b == PREPARED_ABSENT else row.label_b
        try:
            examples.append(LabeledExample(row.id, row.text, row.label_a, label_b))
        except DataFormatError as e:
            raise DataFormatError(f"{path}: record {offset + 1}: {str(e)}")
    return examples


def load_label_file(path: str) -> Dict[str, str]:
    """Read an `id,label` CSV; a leading `id,label` header row is optional."""
    if not os.path.exists(path):
        raise DataFormatError(f"Label file not found: {path}")
    try:
        frame = pd.read_csv(path, header=None, dtype=str, keep_default_na=False,
                            usecols=[0, 1], names=["id", "label"])
    except pd.errors.EmptyDataError:
        return {}
    except (pd.errors.ParserError, ValueError) as e:
        raise DataFormatError(f"{path}: malformed label file: {str(e)}")
    if len(frame) and frame.iloc[0]["id"] == "id" and frame.iloc[0]["label"] == "label":
        frame = frame.iloc[1:]
    labels = {}
    for ex_id, label in zip(frame["id"], frame["label"]):
        if ex_id in labels:
            raise DataFormatError(f"{path}: duplicate id {ex_id}")
        labels[ex_id] = label.strip()
    return labels


def write_label_file(path: str, ids: Sequence[str], labels: Sequence[str],
                     extra: Optional[Dict[str, Sequence]] = None) -> None:
    """Write an id,label CSV with optional extra columns."""
    columns = {"id": list(ids), "label": list(labels)}
    for name, values in (extra or {}).items():
        columns[name] = list(values)
    pd.DataFrame(columns, columns=list(columns)).to_csv(path, index=False)
    logger.info(f"Wrote {len(ids)} labels to {path}")
