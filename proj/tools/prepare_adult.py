#!/usr/bin/env python3
"""Convert the raw UCI Adult files into the CSV layout this project reads.

Usage:
    python3 tools/prepare_adult.py adult.data adult.test data/

Downloads (no registration required):
    https://archive.ics.uci.edu/ml/machine-learning-databases/adult/adult.data
    https://archive.ics.uci.edu/ml/machine-learning-databases/adult/adult.test

Writes adult_train.csv and adult_test.csv with a header row, empty cells for
'?' placeholders, and the income column mapped to 0/1.
"""

import csv
import sys
from pathlib import Path

HEADER = [
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
]


def convert(src: Path, dst: Path) -> int:
    rows = 0
    with src.open() as fin, dst.open("w", newline="") as fout:
        writer = csv.writer(fout)
        writer.writerow(HEADER)
        for line in fin:
            line = line.strip()
            if not line or line.startswith("|"):  # adult.test begins with a comment line
                continue
            cells = [c.strip() for c in line.split(",")]
            if len(cells) != len(HEADER):
                continue
            cells = ["" if c == "?" else c for c in cells]
            income = cells[-1].rstrip(".")
            cells[-1] = "1" if income == ">50K" else "0"
            writer.writerow(cells)
            rows += 1
    return rows


def main() -> None:
    if len(sys.argv) != 4:
        sys.exit(__doc__)
    out_dir = Path(sys.argv[3])
    out_dir.mkdir(parents=True, exist_ok=True)
    n_train = convert(Path(sys.argv[1]), out_dir / "adult_train.csv")
    n_test = convert(Path(sys.argv[2]), out_dir / "adult_test.csv")
    print(f"wrote {n_train} train rows and {n_test} test rows to {out_dir}")


if __name__ == "__main__":
    main()
