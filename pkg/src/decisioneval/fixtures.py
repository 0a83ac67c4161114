"""Trial-shaped fixture built from published decision-by-recommendation counts.

Only the (arm, D, A) cell counts are known.  Outcomes are filled
deterministically: within each cell the first ``round(OUTCOME_RATE * count)``
records get ``y = 1``.  The outcome column therefore supports smoke tests of
the estimators but carries no empirical content.
"""

from __future__ import annotations

import csv
import os
from importlib import resources

# arm -> {(d, a): count}
TABLE1_COUNTS: dict[int, dict[tuple[int, int], int]] = {
    0: {(0, 0): 510, (0, 1): 195, (1, 0): 89, (1, 1): 149},
    1: {(0, 0): 543, (0, 1): 162, (1, 0): 70, (1, 1): 173},
}
OUTCOME_RATE = 0.18
FIXTURE_NAME = "table1_fixture.csv"


def table1_rows() -> list[dict[str, str]]:
    rows = []
    k = 0
    for z in (0, 1):
        for (d, a), count in sorted(TABLE1_COUNTS[z].items()):
            positives = round(OUTCOME_RATE * count)
            for j in range(count):
                k += 1
                rows.append({"id": f"r{k:05d}", "z": str(z), "d": str(d), "a": str(a),
                             "y": "1" if j < positives else "0"})
    return rows


def write_table1_csv(path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["id", "z", "d", "a", "y"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(table1_rows())


def table1_path() -> str:
    """Path of the bundled fixture CSV."""
    return str(resources.files("decisioneval") / "data" / FIXTURE_NAME)
