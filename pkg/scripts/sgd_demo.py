#!/usr/bin/env python3
"""Train the MLP student in float16 with loss scaling; compare to float64."""

import sys

from mpode.runners import ExperimentConfig, run_sgd_demo


def main() -> None:
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    base = run_sgd_demo(ExperimentConfig(fmt="float64", seed=seed, steps=500))
    demo = run_sgd_demo(
        ExperimentConfig(fmt="float16", seed=seed, steps=500, out="sgd_demo.csv")
    )
    first = base.rows[0][1]
    print(f"float64: first loss {first:.4f}, final {base.final_loss:.6f}")
    print(f"float16: final {demo.final_loss:.6f} "
          f"({demo.final_loss / base.final_loss:.3f}x the float64 final)")
    rejected = sum(1 for r in demo.rows if not r[3])
    print(f"float16 rejected steps: {rejected}; wrote sgd_demo.csv")


if __name__ == "__main__":
    main()
