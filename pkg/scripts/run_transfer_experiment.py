#!/usr/bin/env python3
"""Desk-scale transfer experiment.

Pretrains a small CNN on the bright-blob task, freezes it into 8-bit
read-only weights, then transfers to the checkerboard task three ways:
linear probe (frozen trunk, trainable head), residual-branch fine-tuning,
and full fine-tuning. Prints the accuracy table and margins.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from romcim.experiments import transfer_benchmark  # noqa: E402
from romcim.netio import canonical_json  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--pretrain-epochs", type=int, default=20)
    parser.add_argument("--transfer-epochs", type=int, default=15)
    parser.add_argument("--out", default="", help="write results JSON here")
    args = parser.parse_args()

    res = transfer_benchmark(seed=args.seed,
                             pretrain_epochs=args.pretrain_epochs,
                             transfer_epochs=args.transfer_epochs)
    print(f"seed {res['seed']}")
    print(f"  task A test accuracy:        {res['task_a_accuracy']:.3f}")
    print(f"  linear probe on task B:      {res['frozen_probe_accuracy']:.3f}")
    print(f"  residual branch on task B:   {res['rebranch_accuracy']:.3f}")
    print(f"  full fine-tune on task B:    {res['full_finetune_accuracy']:.3f}")
    print(f"  margin over probe:           {res['margin_over_probe']:+.3f}")
    print(f"  margin below full fine-tune: {res['margin_below_full']:+.3f}")
    print(f"  trainable parameter share:   {res['trainable_fraction']:.3f}")

    if args.out:
        Path(args.out).write_text(canonical_json(res))
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
