#!/usr/bin/env python3
"""One-time preparation of the mobile-health monitoring dataset.

Input: the ten raw subject logs (mHealth_subject1.log .. mHealth_subject10.log)
from the MHEALTH corpus, tab-separated, 23 sensor channels + activity label:

  columns 0-2   chest accelerometer (x, y, z)
  columns 3-4   ECG leads 1-2
  columns 5-7   left-ankle accelerometer
  columns 8-10  left-ankle gyroscope
  columns 11-13 left-ankle magnetometer
  columns 14-16 right-arm accelerometer
  columns 17-19 right-arm gyroscope
  columns 20-22 right-arm magnetometer
  column  23    activity label (0 = null class, 1..12 = activities)

Output: data/mhealth.csv with header f1..f23,activity. The 23 raw channels are
used directly as features; 13 classes (null class kept). Rows are subsampled
at a fixed stride to keep the file a workable size; the stride and subject
order are fixed so the output is reproducible byte-for-byte.

Usage: prepare_mhealth.py <dir-with-subject-logs> [stride]
"""

import csv
import glob
import os
import sys

STRIDE_DEFAULT = 50  # 50 Hz logs -> one sample per second

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..")


def main():
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    src = sys.argv[1]
    stride = int(sys.argv[2]) if len(sys.argv) > 2 else STRIDE_DEFAULT
    logs = sorted(glob.glob(os.path.join(src, "mHealth_subject*.log")))
    if not logs:
        sys.exit(f"no mHealth_subject*.log files under {src}")

    out_path = os.path.join(ROOT, "data", "mhealth.csv")
    kept = 0
    with open(out_path, "w", newline="") as out:
        w = csv.writer(out)
        w.writerow([f"f{i}" for i in range(1, 24)] + ["activity"])
        for log in logs:
            with open(log) as fh:
                for i, line in enumerate(fh):
                    if i % stride != 0:
                        continue
                    parts = line.split()
                    if len(parts) != 24:
                        continue
                    w.writerow(parts[:23] + [parts[23]])
                    kept += 1
    print(f"wrote {out_path} ({kept} rows from {len(logs)} subjects, stride {stride})")


if __name__ == "__main__":
    main()
