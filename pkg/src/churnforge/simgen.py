"""Seeded synthetic CDR generator with planted churn behavior.

Stands in for confidential operator data so the pipeline can be tested
and benchmarked end to end. Churn flags are drawn first (Bernoulli at
the target fraction), then per-subscriber trajectories are sampled:

* every subscriber gets a heavy-tailed activity level (log-normal rate
  multiplier on the configured daily Poisson means);
* a planted churner picks a churn day uniformly inside the last
  training month, ramps its rate linearly to zero over
  ``churn_decay_days``, and emits nothing from the churn day onward, so
  the binary inactivity label recovers the planted flag exactly;
* churners also receive elevated incoming SMS from competitor-class
  contacts and a month-over-month shrinking outgoing contact set, so
  the early-warning feature families have real signal to find;
* non-churners keep a constant expected rate and are guaranteed at
  least one event in the evaluation window (and churners at least one
  in training), so the generated population and the ground-truth file
  always cover the same subscribers.

All randomness derives from per-subscriber substreams of the master
seed, so generation stays deterministic under any evaluation order:
the same config yields byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cdr import (ALTER_CLASS_TOKENS, CSV_HEADER, DIRECTION_TOKENS,
                  KIND_TOKENS, SECONDS_PER_DAY, StudyWindow)

# Pool-level alter class mix; index order matches ALTER_CLASS_TOKENS.
_CLASS_PROBS = np.array([0.55, 0.15, 0.05, 0.08, 0.07, 0.10])
_COMPETITOR = 1

_RATE_SIGMA = 1.0      # log-normal dispersion of per-subscriber rates
_SHORT_CALL_P = 0.15   # share of calls under the short-call threshold
_MEAN_CALL_S = 170     # mean extra seconds beyond the short threshold
_OUT_SHRINK = 0.15     # monthly contraction of a churner's outgoing pool
_CHURNER_RATE = 0.35   # churners are less engaged all through training


@dataclass(frozen=True)
class SimConfig:
    n_subscribers: int
    window: StudyWindow
    target_churn_fraction: float = 0.26
    daily_call_rate: float = 1.0
    daily_sms_rate: float = 2.0
    alter_pool_size: int = 1000
    churn_decay_days: int = 110
    competitor_signal_strength: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.n_subscribers < 0:
            raise ValueError("n_subscribers must be >= 0")
        if not 0.0 <= self.target_churn_fraction <= 1.0:
            raise ValueError("target_churn_fraction must be in [0, 1]")
        if self.daily_call_rate < 0 or self.daily_sms_rate < 0:
            raise ValueError("daily rates must be >= 0")
        if self.alter_pool_size < 1:
            raise ValueError("alter_pool_size must be >= 1")
        if self.churn_decay_days < 1:
            raise ValueError("churn_decay_days must be >= 1")
        if self.competitor_signal_strength < 0:
            raise ValueError("competitor_signal_strength must be >= 0")


def generate(config: SimConfig, cdr_path: str, truth_path: str) -> dict:
    """Write a CDR CSV and an ``ego_id,churned`` ground-truth CSV.

    Returns a small stats dict (rows written, realized churn fraction).
    """
    win = config.window
    train_days = win.train_days
    month_ranges = win.month_ranges[:win.train_months]
    last_month_start = month_ranges[-1][0]
    eval_days = win.total_days - train_days

    pool_rng = np.random.default_rng([config.seed, 0])
    pool_classes = pool_rng.choice(
        len(ALTER_CLASS_TOKENS), size=config.alter_pool_size, p=_CLASS_PROBS)

    n_churn = 0
    total_rows = 0
    with open(cdr_path, "w", encoding="utf-8") as cdr_fh, \
            open(truth_path, "w", encoding="utf-8") as truth_fh:
        cdr_fh.write(CSV_HEADER + "\n")
        truth_fh.write("ego_id,churned\n")
        for idx in range(config.n_subscribers):
            ego = f"S{idx:06d}"
            rng = np.random.default_rng([config.seed, 1, idx])
            churner = rng.random() < config.target_churn_fraction
            rows = _subscriber_rows(config, rng, churner, pool_classes,
                                    train_days, last_month_start,
                                    month_ranges, eval_days)
            for day, sec, kind, direction, dur, alter, ac in rows:
                ts = win.start_epoch + day * SECONDS_PER_DAY + sec
                cdr_fh.write(
                    f"{ego},{alter},{ts},{KIND_TOKENS[kind]},"
                    f"{DIRECTION_TOKENS[direction]},{dur},"
                    f"{ALTER_CLASS_TOKENS[ac]}\n")
            truth_fh.write(f"{ego},{int(churner)}\n")
            n_churn += int(churner)
            total_rows += len(rows)
    realized = n_churn / config.n_subscribers if config.n_subscribers else 0.0
    return {"rows": total_rows, "subscribers": config.n_subscribers,
            "churners": n_churn, "churn_fraction": realized}


def _subscriber_rows(config, rng, churner, pool_classes, train_days,
                     last_month_start, month_ranges, eval_days):
    mult = rng.lognormal(mean=-0.5 * _RATE_SIGMA ** 2, sigma=_RATE_SIGMA)
    if churner:
        mult *= _CHURNER_RATE
    call_rate = config.daily_call_rate * mult
    sms_rate = config.daily_sms_rate * mult

    n_contacts = min(4 + rng.poisson(10), config.alter_pool_size)
    contacts = rng.choice(config.alter_pool_size, size=n_contacts,
                          replace=False)
    weights = rng.exponential(1.0, n_contacts)
    weights /= weights.sum()
    classes = pool_classes[contacts]
    if churner and config.competitor_signal_strength > 0 and \
            not np.any(classes == _COMPETITOR):
        # Plant one competitor contact so the boosted stream has a source.
        classes = classes.copy()
        classes[-1] = _COMPETITOR

    total_days = train_days + eval_days
    ramp = np.ones(total_days)
    if churner:
        churn_day = int(rng.integers(last_month_start, train_days))
        d = np.arange(total_days)
        ramp = np.clip((churn_day - d) / config.churn_decay_days, 0.0, 1.0)
    else:
        churn_day = None

    rows = []
    calls = rng.poisson(call_rate * ramp)
    sms = rng.poisson(sms_rate * ramp)
    extra = np.zeros(total_days, dtype=np.int64)
    if churner and config.competitor_signal_strength > 1.0:
        comp_share = float(weights[classes == _COMPETITOR].sum())
        comp_share = max(comp_share, 1.0 / n_contacts)
        boost = sms_rate * comp_share * (config.competitor_signal_strength - 1.0)
        extra = rng.poisson(boost * ramp)

    month_of_day = np.zeros(total_days, dtype=np.int64)
    for m, (lo, hi) in enumerate(month_ranges):
        month_of_day[lo:hi] = m
    month_of_day[train_days:] = len(month_ranges) - 1

    comp_idx = np.flatnonzero(classes == _COMPETITOR)
    for day in range(total_days):
        n_call, n_sms, n_extra = int(calls[day]), int(sms[day]), int(extra[day])
        n_ev = n_call + n_sms + n_extra
        if n_ev == 0:
            continue
        secs = rng.integers(0, SECONDS_PER_DAY, size=n_ev)
        dirs = rng.integers(0, 2, size=n_ev)
        picks = _pick_contacts(rng, n_ev, weights, churner,
                               month_of_day[day], n_contacts, dirs)
        for j in range(n_call):
            dur = int(rng.integers(1, 10)) if rng.random() < _SHORT_CALL_P \
                else 10 + int(rng.exponential(_MEAN_CALL_S))
            rows.append((day, int(secs[j]), 0, int(dirs[j]), dur,
                         f"A{contacts[picks[j]]:06d}", int(classes[picks[j]])))
        for j in range(n_call, n_call + n_sms):
            rows.append((day, int(secs[j]), 1, int(dirs[j]), 0,
                         f"A{contacts[picks[j]]:06d}", int(classes[picks[j]])))
        for j in range(n_call + n_sms, n_ev):
            c = int(comp_idx[int(rng.integers(0, len(comp_idx)))])
            rows.append((day, int(secs[j]), 1, 0, 0,
                         f"A{contacts[c]:06d}", int(classes[c])))

    if churner and not rows:
        # Guarantee presence in the CDR: one call before the churn day.
        hi = max(1, churn_day - config.churn_decay_days)
        day = int(rng.integers(0, hi))
        rows.append((day, 43200, 0, 1, 60,
                     f"A{contacts[0]:06d}", int(classes[0])))
    if not churner and not any(r[0] >= train_days for r in rows):
        # Non-churners must be visibly alive in the evaluation window.
        day = train_days + int(rng.integers(0, eval_days))
        rows.append((day, 43200, 0, 1, 60,
                     f"A{contacts[0]:06d}", int(classes[0])))

    rows.sort(key=lambda r: (r[0], r[1]))
    return rows


def _pick_contacts(rng, n, weights, churner, month, n_contacts, dirs):
    picks = rng.choice(n_contacts, size=n, p=weights)
    if churner:
        # Outgoing events draw from a prefix that shrinks month by month,
        # planting the declining-outgoing-degree early-warning signal.
        allowed = max(1, int(np.ceil(n_contacts * (1.0 - _OUT_SHRINK * month))))
        if allowed < n_contacts:
            w = weights[:allowed] / weights[:allowed].sum()
            out = np.flatnonzero(dirs == 1)
            if len(out):
                picks[out] = rng.choice(allowed, size=len(out), p=w)
    return picks


def read_truth(path: str) -> dict[str, bool]:
    out: dict[str, bool] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "ego_id,churned":
            raise ValueError(f"{path}: bad ground-truth header {header!r}")
        for line in fh:
            e, c = line.rstrip("\n").split(",")
            out[e] = bool(int(c))
    return out
