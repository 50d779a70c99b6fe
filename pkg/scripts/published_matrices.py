"""Recompute A_T, F_T and LTR for the published 17-task accuracy matrices."""
from pathlib import Path

from mdmt.metrics import metrics_report, read_matrix

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def main():
    print(f"{'matrix':26s} {'A_T':>7s} {'F_T':>7s} {'LTR':>7s}")
    for path in sorted(FIXTURES.glob("*.txt")):
        rep = metrics_report(read_matrix(path))
        print(f"{path.stem:26s} {rep['A_T']:7.4f} {rep['F_T']:7.4f} {rep['LTR']:7.4f}")


if __name__ == "__main__":
    main()
