"""Synthetic quarter-hour departure demand with seasonality and surge events.

Demand intensity is

    lambda(t) = base_rate * hour_profile[hour(t)] * dow_profile[dow(t)] + surge(t)

where surge(t) sums the added rates of configured events covering slice t.
Counts are round-half-to-even of lambda in deterministic mode, or
Poisson(lambda) in poisson mode.  The swim channel observes demand plus
rounded Gaussian noise, floored at 0; with ``swim_lead`` the surge
component in the swim channel is advanced by 4 slices, so surges show up
there one hour before they reach demand.

Randomness is counter-based: each slice draws from its own PCG32 stream,
numbered by the slice's absolute offset from 1970-01-01T00:00Z.  Because
the stream id does not depend on the configured range, generating disjoint
date ranges (in parallel or separately) reproduces the serial output
exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, datetime, time, timezone

from .errors import ContractError
from .pipeline import SLICES_PER_DAY, STEP, QuarterHourRecord, derive_calendar
from .rng import Pcg32

SWIM_LEAD_QUARTERS = 4

NOISE_MODES = ("deterministic", "poisson")

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


@dataclass
class SurgeEvent:
    """A temporary demand boost (general-aviation style event)."""

    date: date
    start_hour: int
    duration_quarters: int
    added_rate: float

    def __post_init__(self):
        if isinstance(self.date, str):
            self.date = date.fromisoformat(self.date)
        if not 0 <= self.start_hour <= 23:
            raise ContractError(f"surge start_hour {self.start_hour} outside 0..23")
        if self.duration_quarters < 1:
            raise ContractError("surge duration must be >= 1 quarter")
        if self.added_rate < 0:
            raise ContractError("surge added_rate must be >= 0")

    @property
    def start(self):
        return datetime.combine(self.date, time(self.start_hour), tzinfo=timezone.utc)


@dataclass
class SyntheticConfig:
    start_date: date
    end_date: date
    base_rate: float = 4.0
    hour_profile: list = field(default_factory=lambda: [1.0] * 24)
    dow_profile: list = field(default_factory=lambda: [1.0] * 7)
    surges: list = field(default_factory=list)
    noise_mode: str = "deterministic"
    swim_noise_std: float = 0.0
    swim_lead: bool = False
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.start_date, str):
            self.start_date = date.fromisoformat(self.start_date)
        if isinstance(self.end_date, str):
            self.end_date = date.fromisoformat(self.end_date)
        self.surges = [s if isinstance(s, SurgeEvent) else SurgeEvent(**s) for s in self.surges]
        if self.start_date > self.end_date:
            raise ContractError("start_date must not be after end_date")
        if self.base_rate < 0:
            raise ContractError("base_rate must be >= 0")
        if len(self.hour_profile) != 24 or len(self.dow_profile) != 7:
            raise ContractError("hour_profile needs 24 entries, dow_profile needs 7")
        if min(self.hour_profile) <= 0 or min(self.dow_profile) <= 0:
            raise ContractError("profiles must be strictly positive")
        if self.noise_mode not in NOISE_MODES:
            raise ContractError(f"noise_mode must be one of {NOISE_MODES}")
        if self.swim_noise_std < 0:
            raise ContractError("swim_noise_std must be >= 0")

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def _round_half_even(x):
    return int(round(x))  # Python's round() is round-half-to-even on floats


def generate(cfg):
    """Produce gap-free QuarterHourRecords covering the configured dates."""
    start = datetime.combine(cfg.start_date, time(0), tzinfo=timezone.utc)
    end = datetime.combine(cfg.end_date, time(23, 45), tzinfo=timezone.utc)
    n = (cfg.end_date - cfg.start_date).days * SLICES_PER_DAY + SLICES_PER_DAY

    # surge rate per slice index, with slack beyond the range end so the
    # lead-shifted swim lookup stays in bounds
    surge = [0.0] * (n + SWIM_LEAD_QUARTERS)
    for ev in cfg.surges:
        offset = int((ev.start - start) / STEP)
        for q in range(ev.duration_quarters):
            i = offset + q
            if 0 <= i < len(surge):
                surge[i] += ev.added_rate

    records = []
    ts = start
    stream_base = int((start - _EPOCH) / STEP)
    for i in range(n):
        hour, qtr, dow, month = derive_calendar(ts)
        lam_base = cfg.base_rate * cfg.hour_profile[hour] * cfg.dow_profile[dow - 1]
        lam = lam_base + surge[i]
        rng = Pcg32(cfg.seed, stream=stream_base + i)
        if cfg.noise_mode == "poisson":
            demand = rng.next_poisson(lam)
        else:
            demand = _round_half_even(lam)
        lead = SWIM_LEAD_QUARTERS if cfg.swim_lead else 0
        noise = rng.next_gaussian(0.0, cfg.swim_noise_std) if cfg.swim_noise_std > 0 else 0.0
        # shift the surge component forward by the lead (a no-op when lead is 0)
        swim = demand + _round_half_even(surge[i + lead] - surge[i] + noise)
        records.append(QuarterHourRecord(ts, hour, qtr, dow, month, demand, max(0, swim)))
        ts += STEP
    assert ts == end + STEP
    return records
