"""Label-adjacency accuracy metric and the report tables built on it.

A prediction k bins away from the truth has error class (2k + 1)%:
exact hits are 1%, first neighbours 3%, and so on.  One bin spans
0.1 Cp, so "within 1%" is an exact label match and "within 3%" allows
one bin of slack.  Results aggregate over the 18 stations both
sample-weighted (primary) and uniformly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dataset import STATIONS, DatasetBank, label_to_cp_center, station_name
from .models import ClassifierBank, predict_batch


class EvaluationError(RuntimeError):
    pass


def adjacency_error(pred: int, truth: int) -> int:
    """Error class in percent: (2k + 1) for a k-bin miss."""
    return 2 * abs(int(pred) - int(truth)) + 1


@dataclass(frozen=True)
class StationMetrics:
    side: str
    cx: float
    n_samples: int
    within_1pct: float
    within_3pct: float

    @property
    def name(self) -> str:
        return station_name(self.side, self.cx)


@dataclass
class AdjacencyResult:
    split: str
    stations: list[StationMetrics] = field(default_factory=list)
    # Sample-weighted aggregates are the headline numbers; uniform
    # station means are kept alongside because the weighting choice is
    # a convention, not physics.
    within_1pct: float = 0.0
    within_3pct: float = 0.0
    uniform_within_1pct: float = 0.0
    uniform_within_3pct: float = 0.0


def evaluate_bank(
    cbank: ClassifierBank, dbank: DatasetBank, split: str = "test"
) -> AdjacencyResult:
    """Score every station of a trained bank on one split."""
    ids = dbank.split_ids(split)
    if ids.size == 0:
        raise EvaluationError(f"split {split!r} is empty")
    result = AdjacencyResult(split=split)
    hits1 = hits3 = total = 0
    for side, cx in STATIONS:
        sm = cbank.station(side, cx)
        truth = dbank.labels_for(side, cx)[ids]
        preds = sm.predict_batch(dbank.matrices[ids])
        k = np.abs(preds - truth)
        n = ids.size
        w1 = int((k == 0).sum())
        w3 = int((k <= 1).sum())
        result.stations.append(
            StationMetrics(
                side=side,
                cx=cx,
                n_samples=n,
                within_1pct=w1 / n,
                within_3pct=w3 / n,
            )
        )
        hits1 += w1
        hits3 += w3
        total += n
    result.within_1pct = hits1 / total
    result.within_3pct = hits3 / total
    result.uniform_within_1pct = float(
        np.mean([s.within_1pct for s in result.stations])
    )
    result.uniform_within_3pct = float(
        np.mean([s.within_3pct for s in result.stations])
    )
    return result


def figure9_series(result: AdjacencyResult) -> list[dict]:
    """Per-station accuracy rows in canonical station order."""
    return [
        {
            "side": s.side,
            "cx": s.cx,
            "within_1pct": s.within_1pct,
            "within_3pct": s.within_3pct,
        }
        for s in result.stations
    ]


def example_report(
    cbank: ClassifierBank, dbank: DatasetBank, blade_id: int
) -> list[dict]:
    """Predicted vs. oracle labels for one held-out blade, with the Cp
    bin centers both labels stand for and the error-class tag."""
    pos = dbank.blade_position(blade_id)
    test_ids = set(dbank.split_ids("test").tolist())
    if pos not in test_ids:
        raise EvaluationError(f"blade {blade_id} is not in the test split")
    rows = []
    for k, (side, cx) in enumerate(STATIONS):
        sm = cbank.station(side, cx)
        spec = dbank.label_specs[k]
        truth = int(dbank.labels_for(side, cx)[pos])
        pred = int(sm.predict_batch(dbank.matrices[pos : pos + 1])[0])
        rows.append(
            {
                "side": side,
                "cx": cx,
                "true_label": truth,
                "predicted_label": pred,
                "true_cp_center": label_to_cp_center(truth, spec),
                "predicted_cp_center": label_to_cp_center(pred, spec),
                "error_class": f"{adjacency_error(pred, truth)}%",
            }
        )
    return rows


# --- CSV writers; plain text, '\n' endings, repr-exact floats ---

def _write_rows(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_table2(path: str, entries: list[tuple[str, int, AdjacencyResult]]) -> None:
    """One row per evaluated bank: arch, depth, within_1pct, within_3pct."""
    _write_rows(
        path,
        ["arch", "depth", "within_1pct", "within_3pct"],
        [
            [arch, depth, repr(res.within_1pct), repr(res.within_3pct)]
            for arch, depth, res in entries
        ],
    )


def write_figure9(path: str, result: AdjacencyResult) -> None:
    _write_rows(
        path,
        ["side", "cx", "within_1pct", "within_3pct"],
        [
            [r["side"], f"{r['cx']:.2f}", repr(r["within_1pct"]), repr(r["within_3pct"])]
            for r in figure9_series(result)
        ],
    )


def write_example(path: str, rows: list[dict]) -> None:
    _write_rows(
        path,
        [
            "side",
            "cx",
            "true_label",
            "predicted_label",
            "true_cp_center",
            "predicted_cp_center",
            "error_class",
        ],
        [
            [
                r["side"],
                f"{r['cx']:.2f}",
                r["true_label"],
                r["predicted_label"],
                repr(r["true_cp_center"]),
                repr(r["predicted_cp_center"]),
                r["error_class"],
            ]
            for r in rows
        ],
    )
