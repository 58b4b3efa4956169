"""Print per-stage quantities of one construction: scale, new points, Q, q, beta
and the case counts of the attachments."""

import argparse

from hyptree.rtree_build import build_tree

from run_corpus import make


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("name", nargs="?", default="cantor:3:1/3000")
    args = ap.parse_args()
    space, boundary = make(args.name)
    tree = build_tree(space, boundary)
    print(f"{args.name}: N = {tree.N}, stages = {len(tree.stages) - 1}")
    print(f"{'j':>3}{'epsilon':>14}{'|S|':>6}{'new':>5}{'Q':>6}{'q':>6}{'beta':>9}{'A':>5}{'B':>5}  checks")
    for s in tree.stages[1:]:
        cases = s.details.get("case_counts", {})
        beta = "-" if s.beta is None else f"{s.beta:.3f}"
        ok = "ok" if all(s.checks.values()) else [k for k, v in s.checks.items() if not v]
        print(f"{s.j:>3}{float(s.epsilon):>14.6g}{len(s.S):>6}{len(s.new):>5}{str(s.Q):>6}{str(s.q):>6}"
              f"{beta:>9}{cases.get('A', 0):>5}{cases.get('B', 0):>5}  {ok}")


if __name__ == "__main__":
    main()
