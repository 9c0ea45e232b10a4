"""Instance adjustments of one type-1 slice with and without an adaptation cost.

    python3 scripts/adaptation.py --seeds 10 --cost 20
"""
import argparse

from slicereserve.experiments import adaptation_run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--cost", type=float, default=20.0)
    args = ap.parse_args()
    print(f"{'seed':>4} {'adj(c_a=' + format(args.cost, 'g') + ')':>14} {'adj(c_a=0)':>12}  per-slot")
    for seed in range(args.seeds):
        a = adaptation_run(seed, args.cost)
        b = adaptation_run(seed, 0.0)
        print(f"{seed:>4} {a.adjustments:>14} {b.adjustments:>12}  {a.per_slot} vs {b.per_slot}")


if __name__ == "__main__":
    main()
