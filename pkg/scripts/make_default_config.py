#!/usr/bin/env python3
"""Regenerate configs/datagen_default.json.

The default dataset covers 2019-01-01 through 2020-01-31 with an
airport-like daily curve, a weekly profile, and irregular surge events
(the general-aviation bursts the models are meant to anticipate).  Surge
placement is drawn from the package's own PCG32 so the file is fully
reproducible from this script.
"""

import json
from datetime import date, timedelta
from pathlib import Path

from flightcast.rng import Pcg32

START = date(2019, 1, 1)
END = date(2020, 1, 31)
SEED = 20190101

HOUR_PROFILE = [0.25, 0.2, 0.2, 0.2, 0.3, 0.5, 1.0, 1.5, 1.8, 1.7, 1.5, 1.4,
                1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 1.7, 1.4, 1.0, 0.7, 0.5, 0.35]
DOW_PROFILE = [1.1, 1.05, 1.05, 1.1, 1.3, 0.75, 0.7]

SURGES_PER_WEEK = 3.0


def make_surges():
    rng = Pcg32(SEED, stream=999)
    surges = []
    day = START
    while day <= END:
        # roughly SURGES_PER_WEEK events per week, at irregular days/hours
        if rng.next_double() < SURGES_PER_WEEK / 7.0:
            start_hour = 6 + int(rng.next_double() * 16)        # 6..21
            duration = 6 + int(rng.next_double() * 5)           # 6..10 quarters
            added = 10.0 + round(rng.next_double() * 8.0, 1)    # 10..18 aircraft/quarter
            surges.append({"date": day.isoformat(), "start_hour": start_hour,
                           "duration_quarters": duration, "added_rate": added})
        day += timedelta(days=1)
    return surges


def main():
    config = {
        "start_date": START.isoformat(),
        "end_date": END.isoformat(),
        "base_rate": 4.0,
        "hour_profile": HOUR_PROFILE,
        "dow_profile": DOW_PROFILE,
        "surges": make_surges(),
        "noise_mode": "poisson",
        "swim_noise_std": 1.0,
        "swim_lead": True,
        "seed": SEED,
    }
    out = Path(__file__).resolve().parent.parent / "configs" / "datagen_default.json"
    out.write_text(json.dumps(config, indent=1) + "\n", encoding="utf-8")
    n_test = sum(1 for s in config["surges"] if s["date"] >= "2020-01-01")
    print(f"wrote {out} ({len(config['surges'])} surges, {n_test} in the test month)")


if __name__ == "__main__":
    main()
