"""Build and verify the corpus instances, printing one table row per instance."""

import argparse
import time
from fractions import Fraction

from hyptree import approx
from hyptree.metric_core import auto_epsilon, check_epsilon_admissible
from hyptree.rtree_build import build_tree
from hyptree.verify import verify

CORPUS = ["interval:5", "interval:17", "cantor:2", "cantor:3", "cantor:4", "grid:8",
          "free-group:1", "free-group:2", "free-group:3", "free-group:4", "free-group:5", "free-group:6"]


def make(name):
    kind, _, arg = name.partition(":")
    if kind == "free-group":
        g = approx.free_group_ball(2, int(arg))
    elif kind == "ladder":
        g = approx.ladder(12, 4, 8)
    else:
        if kind == "cantor" and ":" in arg:
            depth, ratio = arg.split(":")
            X = approx.cantor(int(depth), Fraction(ratio))
        else:
            X = {"interval": approx.interval, "cantor": approx.cantor, "grid": approx.grid}[kind](int(arg))
        H = approx.build_hyperbolic_approximation(X)
        params = check_epsilon_admissible(auto_epsilon(H.graph.delta), H.graph.delta)
        return H.graph, approx.approximation_boundary(H, params)
    params = check_epsilon_admissible(auto_epsilon(g.delta), g.delta)
    return g, approx.boundary_model(g, params, "B")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("names", nargs="*", default=CORPUS)
    args = ap.parse_args()
    print(f"{'instance':<18}{'|V|':>6}{'|bd|':>6}{'delta':>6}{'stages':>7}{'seconds':>9}  checks")
    for name in args.names:
        t0 = time.perf_counter()
        space, boundary = make(name)
        tree = build_tree(space, boundary)
        rep = verify(tree, boundary)
        dt = time.perf_counter() - t0
        status = " ".join(f"{c.name}={c.status}" for c in rep.checks)
        print(f"{name:<18}{len(space):>6}{len(boundary):>6}{str(space.delta):>6}"
              f"{len(tree.stages) - 1:>7}{dt:>9.2f}  {status}")


if __name__ == "__main__":
    main()
