import functools
from fractions import Fraction
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hyptree import approx  # noqa: E402
from hyptree.metric_core import auto_epsilon, check_epsilon_admissible  # noqa: E402
from hyptree.rtree_build import build_tree  # noqa: E402
from hyptree.verify import verify  # noqa: E402


def admissible(space):
    return check_epsilon_admissible(auto_epsilon(space.delta), space.delta)


@functools.lru_cache(maxsize=None)
def instance(name: str):
    """(space, boundary) for a named corpus instance or fixture."""
    kind, _, arg = name.partition(":")
    if kind in ("interval", "cantor", "grid"):
        if kind == "cantor" and ":" in arg:
            depth, ratio = arg.split(":")
            X = approx.cantor(int(depth), Fraction(ratio))
        else:
            X = {"interval": approx.interval, "cantor": approx.cantor, "grid": approx.grid}[kind](int(arg))
        H = approx.build_hyperbolic_approximation(X)
        return H.graph, approx.approximation_boundary(H, admissible(H.graph))
    if kind == "free-group":
        g = approx.free_group_ball(2, int(arg))
    elif kind == "ladder":
        g = approx.ladder(12, 4, 8)
    elif kind == "pendant":
        # free-group ball of radius 3 with a pendant path: "pendant:<vertex>:<length>"
        at, length = arg.split(":")
        g = approx.with_pendant(approx.free_group_ball(2, 3), at, int(length))
    else:
        raise KeyError(name)
    return g, approx.boundary_model(g, admissible(g), "B")


@functools.lru_cache(maxsize=None)
def built(name: str):
    space, boundary = instance(name)
    tree = build_tree(space, boundary)
    return space, boundary, tree


@functools.lru_cache(maxsize=None)
def report(name: str):
    space, boundary, tree = built(name)
    return verify(tree, boundary)


CORPUS = ["interval:5", "interval:17", "cantor:2", "cantor:3", "cantor:4", "grid:8",
          "free-group:1", "free-group:2", "free-group:3", "free-group:4", "free-group:5", "free-group:6"]
MULTI_STAGE = ["cantor:2:1/5000", "cantor:3:1/3000"]
SMALL = ["interval:5", "cantor:2", "cantor:3", "free-group:3", "ladder"] + MULTI_STAGE


@pytest.fixture(params=SMALL)
def small_name(request):
    return request.param


# acceptance summary -----------------------------------------------------------------

ACCEPTANCE: dict = {}


def record_criterion(number: int, title: str, ok: bool, detail: str = ""):
    ACCEPTANCE[number] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
