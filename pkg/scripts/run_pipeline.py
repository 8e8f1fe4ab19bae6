#!/usr/bin/env python3
"""Drive the full CLI pipeline on a generated scenario.

Writes a config, then runs generate → build-graphs → fit-features →
pretrain → finetune → infer → export-attention → evaluate, leaving all
artifacts under the chosen working directory.
"""
from __future__ import annotations

import argparse
import json
import pathlib
import sys

from aptstage.cli import main as cli_main


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="artifacts")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--fast", action="store_true",
                    help="tiny training budget; smoke-test the plumbing")
    args = ap.parse_args(argv)

    workdir = pathlib.Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    cfg = {
        "workdir": str(workdir),
        "seed": args.seed,
        "folds": args.folds,
        "scenario": {"num_hosts": 3, "duration": 18000.0},
    }
    if args.fast:
        cfg["pretrain"] = {"epochs": 2, "batch": 16}
        cfg["finetune"] = {"phase1_epochs": 1, "phase2_epochs": 1}
    cfg_path = workdir / "config.json"
    cfg_path.write_text(json.dumps(cfg, indent=2), encoding="utf-8")

    steps = ["generate", "build-graphs", "fit-features", "pretrain", "finetune",
             "infer", "export-attention", "evaluate"]
    for step in steps:
        print(f"== {step}")
        rc = cli_main([step, "--config", str(cfg_path)])
        if rc != 0:
            print(f"step {step} failed with exit code {rc}", file=sys.stderr)
            return rc
    print(f"pipeline complete; artifacts in {workdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
