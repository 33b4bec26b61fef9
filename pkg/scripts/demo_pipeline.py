#!/usr/bin/env python3
"""End-to-end demo: simulate a corpus, serve its oracle over TCP, align
through the wire protocol, and evaluate against ground truth. Everything
lands in a work directory for inspection.

Usage: python scripts/demo_pipeline.py [--workdir demo_out] [--noisy]
"""

from __future__ import annotations

import argparse
import json
import shutil
import subprocess
import sys
from pathlib import Path


def sh(*argv: object) -> None:
    cmd = [str(a) for a in argv]
    print("+", " ".join(cmd))
    subprocess.run(cmd, check=True)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="demo_out")
    parser.add_argument("--noisy", action="store_true", help="inject eos noise into the oracle")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    work = Path(args.workdir)
    if work.exists():
        shutil.rmtree(work)
    corpus = work / "corpus"
    run_dir = work / "run"

    noise = ["--eps-eos-false", "0.05", "--concentration", "0.9"] if args.noisy else []
    sh(sys.executable, "-m", "lsalign", "simulate", "--out", corpus,
       "--recordings", 8, "--filler-prob", 0.15, "--seed", args.seed, *noise)

    server = subprocess.Popen(
        [sys.executable, "-m", "lsalign", "serve-oracle", "--corpus", str(corpus), "--port", "0"],
        stdout=subprocess.PIPE, text=True,
    )
    try:
        listening = json.loads(server.stdout.readline())
        endpoint = f"remote:{listening['host']}:{listening['port']}"
        print(f"oracle listening at {endpoint}")
        sh(sys.executable, "-m", "lsalign", "align", "--corpus", corpus,
           "--fwd-scorer", endpoint, "--bwd-scorer", endpoint, "--out", run_dir)
    finally:
        server.terminate()
        server.wait(timeout=10)

    sh(sys.executable, "-m", "lsalign", "evaluate", "--run", run_dir,
       "--corpus", corpus, "--out", work / "eval.json")
    print(f"\ninspect {run_dir}/aligned.tsv, {run_dir}/rejected.tsv, {run_dir}/report.json")


if __name__ == "__main__":
    main()
