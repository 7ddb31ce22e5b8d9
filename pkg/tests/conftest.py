import datetime

import numpy as np
import pytest

from churnforge.cdr import SECONDS_PER_DAY, RecordStore, StudyWindow, SubscriberEvents

WINDOW = StudyWindow(datetime.date(2024, 1, 1), 183, 4, 2)


def make_store(window=WINDOW, n_subscribers=8, seed=0, max_events=60,
               n_alters=6, all_days=True):
    """Random store for property tests; events spread over the window."""
    rng = np.random.default_rng(seed)
    hi_day = window.total_days if all_days else window.train_days
    subs = []
    for i in range(n_subscribers):
        n = int(rng.integers(1, max_events))
        rows = []
        for j in range(n):
            day = int(rng.integers(0, hi_day))
            kind = int(rng.integers(0, 2))
            rows.append((
                window.start_epoch + day * SECONDS_PER_DAY
                + int(rng.integers(0, SECONDS_PER_DAY)),
                kind,
                int(rng.integers(0, 2)),
                0 if kind == 1 else int(rng.integers(0, 400)),
                int(rng.integers(0, 6)),
                f"A{int(rng.integers(0, n_alters)):03d}",
                j,
            ))
        subs.append(SubscriberEvents.from_rows(f"S{i:03d}", rows))
    return RecordStore(window, subs)


@pytest.fixture(scope="session")
def random_store():
    return make_store(n_subscribers=10, seed=3, max_events=80)


ACCEPTANCE_VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)
