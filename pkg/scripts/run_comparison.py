#!/usr/bin/env python3
"""End-to-end model comparison on the default synthetic dataset.

Drives the flightcast CLI through the whole methodology at CI scale:
generate thirteen months of synthetic demand, train the two baselines and
the two recurrent models on 2019, score everything on January 2020, and
print the comparison table.  Five configurations are evaluated:

    ASPM       linear regression / AR / seq2seq / seq2seq with attention
    ASPM+SWIM  seq2seq with attention

Takes a few minutes on a laptop.  Outputs land in ``runs/comparison/``.
"""

import subprocess
import sys
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
RUN_DIR = ROOT / "runs" / "comparison"

JOBS = [
    # (label, run config, --kind override)
    ("lr_aspm", "aspm_ci.json", "lr"),
    ("ar_aspm", "aspm_ci.json", "ar"),
    ("seq2seq_aspm", "aspm_ci.json", "seq2seq"),
    ("attention_aspm", "aspm_ci.json", "seq2seq_attention"),
    ("attention_swim", "aspm_swim_ci.json", "seq2seq_attention"),
]


def cli(*args):
    cmd = [sys.executable, "-m", "flightcast.cli", "--deterministic", *args]
    print("+", " ".join(str(a) for a in cmd[3:]))
    subprocess.run(cmd, check=True)


def main():
    RUN_DIR.mkdir(parents=True, exist_ok=True)
    data = RUN_DIR / "synthetic.csv"
    t0 = time.time()
    cli("datagen", "--config", ROOT / "configs" / "datagen_default.json", "--out", data)

    reports = []
    for label, config, kind in JOBS:
        config_path = ROOT / "configs" / config
        model_path = RUN_DIR / f"{label}.fc"
        report_path = RUN_DIR / f"{label}.json"
        cli("train", "--config", config_path, "--kind", kind,
            "--data", data, "--model", model_path,
            "--out", RUN_DIR / f"{label}.loss.csv")
        cli("evaluate", "--config", config_path, "--model", model_path,
            "--data", data, "--out", report_path)
        reports.append(report_path)

    cli("compare", *reports, "--sort", "--out", RUN_DIR / "comparison.json")
    print(f"done in {time.time() - t0:.0f}s; artifacts in {RUN_DIR}")


if __name__ == "__main__":
    main()
