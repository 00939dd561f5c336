import sys
import os
import logging
from typing import Dict

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from models import SUBTASK_LABELS
from services.metrics_service import (ConfusionMatrix, MetricsReport, all_trivial_baselines, render_details,
                                      render_table, report)

logger = logging.getLogger(__name__)

# Shared-task confusion matrices of the best system (rows gold, columns predicted)
REPORTED_CONFUSION = {
    "A": [[572, 48], [95, 145]],
    "B": [[206, 7], [20, 7]],
}
BEST_SYSTEM = "DeepModel+val"


def gold_from_counts(subtask: str) -> list:
    """Expand the gold class distribution implied by a confusion matrix's row sums."""
    counts = np.asarray(REPORTED_CONFUSION[subtask])
    labels = SUBTASK_LABELS[subtask]
    return [label for label, n in zip(labels, counts.sum(axis=1)) for _ in range(int(n))]


def subtask_rows(subtask: str) -> Dict[str, MetricsReport]:
    labels = SUBTASK_LABELS[subtask]
    rows = dict(all_trivial_baselines(gold_from_counts(subtask), labels))
    rows[BEST_SYSTEM] = report(ConfusionMatrix(labels, np.asarray(REPORTED_CONFUSION[subtask], dtype=np.int64)))
    return rows


def render_subtask(subtask: str) -> str:
    rows = subtask_rows(subtask)
    return (f"Subtask {subtask}\n" + render_table(rows) + "\n" + render_details(rows[BEST_SYSTEM])
            + "\n" + rows[BEST_SYSTEM].confusion.render())


if __name__ == "__main__":
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    try:
        for name in REPORTED_CONFUSION:
            print(render_subtask(name))
    except Exception as e:
        logger.error(f"Failed to render tables: {str(e)}")
        sys.exit(1)
