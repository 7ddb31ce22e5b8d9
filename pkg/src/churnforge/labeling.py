"""Train/eval window split and per-subscriber churn labels.

Two label variants per subscriber: a binary flag (no activity at all in
the evaluation window) and the fraction of evaluation days with no
activity. The binary flag is exactly the "fraction == 1.0" case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cdr import RecordStore, StudyWindow


@dataclass
class LabelSet:
    ego_ids: list[str]
    churned: np.ndarray            # bool, aligned with ego_ids
    pct_inactive_eval: np.ndarray  # float in [0, 1]

    def __post_init__(self):
        self.churned = np.asarray(self.churned, dtype=bool)
        self.pct_inactive_eval = np.asarray(self.pct_inactive_eval, dtype=float)

    def __len__(self) -> int:
        return len(self.ego_ids)

    def as_dict(self) -> dict[str, tuple[bool, float]]:
        return {e: (bool(c), float(p)) for e, c, p in
                zip(self.ego_ids, self.churned, self.pct_inactive_eval)}


def split_windows(window: StudyWindow) -> tuple[tuple[int, int], tuple[int, int]]:
    """Training and evaluation day ranges from the month tiling.

    Contiguous, disjoint, and exhaustive: train covers the first
    ``train_months`` tiles, eval the rest.
    """
    ranges = window.month_ranges
    train = (0, ranges[window.train_months - 1][1])
    ev = (train[1], ranges[-1][1])
    return train, ev


def compute_labels(store: RecordStore, eval_range: tuple[int, int]) -> LabelSet:
    """Label every subscriber in the store over ``eval_range``.

    churned is true iff the subscriber has zero events in the range;
    pct_inactive_eval counts distinct inactive days, so event
    multiplicity within a day does not matter.
    """
    lo, hi = eval_range
    n_days = hi - lo
    if n_days <= 0:
        raise ValueError(f"empty eval range {eval_range}")
    ego_ids = []
    churned = np.empty(len(store), dtype=bool)
    pct = np.empty(len(store), dtype=float)
    for i, sub in enumerate(store.subscribers):
        days = store.day_indices(sub)
        in_eval = days[(days >= lo) & (days < hi)]
        active = len(np.unique(in_eval))
        ego_ids.append(sub.ego_id)
        churned[i] = active == 0
        pct[i] = (n_days - active) / n_days
    return LabelSet(ego_ids, churned, pct)


def write_labels(labels: LabelSet, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ego_id,churned,pct_inactive_eval\n")
        for e, c, p in zip(labels.ego_ids, labels.churned,
                           labels.pct_inactive_eval):
            fh.write(f"{e},{int(c)},{float(p)!r}\n")


def read_labels(path: str) -> LabelSet:
    ego_ids, churned, pct = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "ego_id,churned,pct_inactive_eval":
            raise ValueError(f"{path}: bad labels header {header!r}")
        for line in fh:
            e, c, p = line.rstrip("\n").split(",")
            ego_ids.append(e)
            churned.append(bool(int(c)))
            pct.append(float(p))
    return LabelSet(ego_ids, np.array(churned), np.array(pct))
