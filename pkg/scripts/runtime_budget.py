"""Per-stage latency of the per-frame geometric path on synthetic frames
(640x480 depth, stride 4, 500 keypoints, two dynamic detections).

    python3 scripts/runtime_budget.py --frames 60 --jobs 1
"""
import argparse
import json
import os
import tempfile

from dynfeat.cli import write_sequence
from dynfeat.config import PipelineConfig
from dynfeat.ingest import TUM_FR3
from dynfeat.pipeline import STAGES, run_sequence


def duplicate_detections(seq_dir):
    det_dir = os.path.join(seq_dir, "detections")
    for name in os.listdir(det_dir):
        path = os.path.join(det_dir, name)
        with open(path) as fh:
            recs = json.load(fh)
        with open(path, "w") as fh:
            json.dump(recs * 2, fh)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=60)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        seq = os.path.join(tmp, "seq")
        write_sequence(seq, args.frames + 1, args.seed)
        duplicate_detections(seq)
        # the first frame pays for JIT compilation when no cache exists yet
        _, timing = run_sequence(seq, os.path.join(tmp, "out"), TUM_FR3, PipelineConfig(), jobs=args.jobs)
    print(f"{'stage':>12} {'median ms':>10} {'p95 ms':>8}")
    for stage in STAGES:
        t = timing[stage]
        print(f"{stage:>12} {t['median_ms']:>10.2f} {t['p95_ms']:>8.2f}")
    ok = timing["total"]["median_ms"] < 50 and timing["total"]["p95_ms"] < 100
    print(f"budget (median < 50 ms, p95 < 100 ms): {'met' if ok else 'missed'}")


if __name__ == "__main__":
    main()
