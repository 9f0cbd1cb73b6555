"""Paired-seed MPBN vs baseline vs element-wise sweep on the synthetic desk dataset.

    python3 scripts/run_trend.py --out trend.csv
"""
import argparse

from mpbn_snn.experiments import DeskProtocol, run_trend, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", help="per-epoch accuracy CSV")
    args = ap.parse_args()
    proto = DeskProtocol(seeds=tuple(range(args.seeds)))
    results = run_trend(proto)
    print(f"{'mode':<8} {'final_acc':>9} {'best_acc':>9} {'epochs_to_95':>12} {'seconds':>8}")
    for mode, row in summarize(results).items():
        print(f"{mode:<8} {row['final_acc']:>9.4f} {row['best_acc']:>9.4f} "
              f"{row['epochs_to_95']:>12.1f} {row['seconds']:>8.1f}")
    if args.out:
        with open(args.out, "w") as f:
            f.write("mode,seed,epoch,test_acc\n")
            for mode, rs in results.items():
                for r in rs:
                    for e, a in enumerate(r.accuracies, 1):
                        f.write(f"{mode},{r.seed},{e},{a!r}\n")


if __name__ == "__main__":
    main()
