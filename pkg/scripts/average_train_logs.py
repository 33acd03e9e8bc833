#!/usr/bin/env python3
"""Average several per-epoch training logs into one curve, equal weight.

Each input log (trainlog_*.jsonl from the finetune command) contributes
with the same weight per epoch regardless of its dataset's size; the
output records are labelled accordingly.

Usage: python scripts/average_train_logs.py runs/*/trainlog_full_seed0.jsonl \
           --out averaged_full.jsonl
"""

import argparse
import json
from pathlib import Path

from tokentab.training import EpochRecord, TrainLog, average_train_logs


def read_log(path) -> TrainLog:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        records.append(EpochRecord(**json.loads(line)))
    return TrainLog(records)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("logs", nargs="+", help="trainlog jsonl files")
    ap.add_argument("--out", required=True, help="output jsonl path")
    args = ap.parse_args()

    merged = average_train_logs([read_log(p) for p in args.logs])
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in merged)
    Path(args.out).write_text(text, encoding="utf-8")
    print(f"averaged {len(args.logs)} logs over {len(merged)} epochs -> {args.out}")


if __name__ == "__main__":
    main()
