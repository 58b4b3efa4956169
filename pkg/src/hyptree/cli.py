"""Command line: generate instances, build trees, verify and export them.

    hyptree generate cantor --depth 3 --out runs/c3
    hyptree build --dir runs/c3
    hyptree verify --dir runs/c3
    hyptree export --dir runs/c3 --dot
    hyptree report --dir runs/c3

Exit codes: 0 success (all applicable checks pass), 1 failed checks,
2 usage or I/O errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

from . import approx
from .hyp_graph import HypGraphSpace
from .metric_core import MetricError, auto_epsilon, check_epsilon_admissible
from .rtree_build import ConstructionError, build_tree
from .verify import verify

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
GENERATORS = ("interval", "cantor", "grid", "free-group", "ladder")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    generator: str
    params: dict = field(default_factory=dict)
    epsilon: str = "auto"  # "auto" or a positive number
    stages: str = "saturate"  # "saturate" or a count
    levels: int | None = None  # approximation depth for point-set generators
    mode: str | None = None  # boundary mode; default A for point sets, B for graphs
    pendant_at: str | None = None
    pendant_length: int = 0
    out: str = "."
    exports: tuple = ("json", "report")

    def stage_count(self):
        if self.stages == "saturate":
            return None
        try:
            J = int(self.stages)
        except ValueError:
            raise UsageError(f"--stages must be an integer or 'saturate', got {self.stages!r}") from None
        if J < 0:
            raise UsageError("--stages must be >= 0")
        return J

    def to_json(self):
        # the output directory is where the file lives, so it is not recorded;
        # this keeps artifacts byte-identical across directories
        d = asdict(self)
        d.pop("out")
        d["exports"] = list(self.exports)
        return d

    @classmethod
    def from_json(cls, data, out="."):
        data = dict(data)
        data["exports"] = tuple(data.get("exports", ("json", "report")))
        data.setdefault("out", out)
        return cls(**data)


def dump(path: Path, obj):
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def load(path: Path):
    if not path.exists():
        raise UsageError(f"missing file {path}")
    return json.loads(path.read_text())


# instance generation --------------------------------------------------------

def make_instance(cfg: RunConfig):
    """(space, boundary) for a configuration."""
    p = cfg.params
    if cfg.generator in ("interval", "cantor", "grid"):
        if cfg.generator == "interval":
            X = approx.interval(int(p.get("n", 5)))
        elif cfg.generator == "cantor":
            X = approx.cantor(int(p.get("depth", 3)), Fraction(p.get("ratio", "1/3")))
        else:
            X = approx.grid(int(p.get("n", 8)))
        H = approx.build_hyperbolic_approximation(X, cfg.levels)
        space, ident, base = H.graph, H.identification, X
        mode = cfg.mode or "A"
    elif cfg.generator == "free-group":
        space = approx.free_group_ball(int(p.get("rank", 2)), int(p.get("radius", 3)))
        ident, base, mode = None, None, cfg.mode or "B"
    elif cfg.generator == "ladder":
        space = approx.ladder(int(p.get("length", 12)), int(p.get("branch_at", 4)),
                              int(p.get("branch_len", 8)))
        ident, base, mode = None, None, cfg.mode or "B"
    else:
        raise UsageError(f"unknown generator {cfg.generator!r}; choose from {', '.join(GENERATORS)}")
    if cfg.pendant_length:
        at = cfg.pendant_at if cfg.pendant_at is not None else space.root
        space = approx.with_pendant(space, at, cfg.pendant_length)
    if mode == "A" and base is None:
        raise UsageError("boundary mode A needs a point-set generator")
    params = make_params(cfg.epsilon, space.delta)
    boundary = approx.boundary_model(space, params, mode, base, ident)
    return space, boundary


def make_params(epsilon, delta):
    eps = auto_epsilon(delta) if epsilon == "auto" else float(epsilon)
    return check_epsilon_admissible(eps, delta)


def read_instance(d: Path):
    space = HypGraphSpace.from_json(load(d / "space.json"))
    bdata = load(d / "boundary.json")
    return space, approx.boundary_from_json(space, bdata)


# commands --------------------------------------------------------------------

def cmd_generate(cfg: RunConfig) -> int:
    space, boundary = make_instance(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dump(out / "config.json", cfg.to_json())
    dump(out / "space.json", space.to_json())
    dump(out / "boundary.json", boundary.to_json())
    print(f"{cfg.generator}: {len(space)} vertices, {space.n_edges} edges, "
          f"{len(boundary)} boundary proxies, delta = {space.delta} -> {out}")
    return EXIT_OK


def _build(d: Path):
    cfg = RunConfig.from_json(load(d / "config.json"), str(d))
    space, boundary = read_instance(d)
    tree = build_tree(space, boundary, cfg.stage_count())
    return cfg, space, boundary, tree


def cmd_build(d: Path) -> int:
    _, space, boundary, tree = _build(d)
    dump(d / "tree.json", tree.to_json(boundary))
    print(f"tree: {len(tree)} nodes, {len(tree.stages) - 1} stages, N = {tree.N}, "
          f"{len(tree.attach_log)} attachments -> {d / 'tree.json'}")
    return EXIT_OK


def cmd_verify(d: Path) -> int:
    _, space, boundary, tree = _build(d)
    tree_json = tree.to_json(boundary)
    stale = (d / "tree.json").exists() and load(d / "tree.json") != json.loads(json.dumps(tree_json))
    if not (d / "tree.json").exists():
        dump(d / "tree.json", tree_json)
    report = verify(tree, boundary)
    data = report.to_json()
    data["tree_matches_file"] = not stale
    dump(d / "report.json", data)
    print(report.summary())
    if stale:
        print("tree.json differs from a fresh build", file=sys.stderr)
    ok = report.ok and not stale
    print(f"\n{'PASS' if ok else 'FAIL'}: report written to {d / 'report.json'}")
    return EXIT_OK if ok else EXIT_FAIL


def tree_json_to_dot(data) -> str:
    palette = ["black", "red", "blue", "darkgreen", "orange", "purple", "brown", "cyan"]
    lines = ["digraph rtree {", "  node [shape=point];", f'  "{data["root"]}" [shape=circle, label="root"];']
    for a, b, s in data["edges"]:
        lines.append(f'  "{a}" -> "{b}" [color={palette[s % len(palette)]}, label="{s}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def cmd_export(d: Path, dot: bool, svg: bool) -> int:
    data = load(d / "tree.json")
    text = tree_json_to_dot(data)
    if dot or not svg:
        (d / "tree.dot").write_text(text)
        print(f"wrote {d / 'tree.dot'}")
    if svg:
        import shutil
        import subprocess

        exe = shutil.which("dot")
        if exe is None:
            raise UsageError("SVG export needs the graphviz 'dot' program on PATH")
        subprocess.run([exe, "-Tsvg", "-o", str(d / "tree.svg")], input=text.encode(), check=True)
        print(f"wrote {d / 'tree.svg'}")
    return EXIT_OK


def cmd_report(d: Path) -> int:
    data = load(d / "report.json")
    width = max(len(c["name"]) for c in data["checks"])
    for c in data["checks"]:
        print(f"{c['name']:<{width}}  {c['status']}" + (f"  ({c['note']})" if c["note"] else ""))
    print()
    for k, v in sorted(data["constants"].items()):
        print(f"{k} = {v}")
    return EXIT_OK if data["ok"] else EXIT_FAIL


# argument parsing --------------------------------------------------------------

def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hyptree", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write an instance (space, boundary, config)")
    g.add_argument("generator", choices=GENERATORS)
    g.add_argument("--n", type=int, help="points for interval, side for grid")
    g.add_argument("--depth", type=int, help="cantor depth")
    g.add_argument("--ratio", default=None, help="cantor ratio, e.g. 1/3")
    g.add_argument("--rank", type=int)
    g.add_argument("--radius", type=int)
    g.add_argument("--length", type=int, help="ladder length")
    g.add_argument("--branch-at", type=int)
    g.add_argument("--branch-len", type=int)
    g.add_argument("--levels", type=int, default=None, help="approximation depth (default: full)")
    g.add_argument("--mode", choices=("A", "B"), default=None, help="boundary metric mode")
    g.add_argument("--epsilon", default="auto", help="visual parameter or 'auto'")
    g.add_argument("--stages", default="saturate", help="stage count or 'saturate'")
    g.add_argument("--pendant-at", default=None, help="vertex for a pendant path (default: root)")
    g.add_argument("--pendant-length", type=int, default=0)
    g.add_argument("--out", required=True)

    for name, text in (("build", "build the tree"), ("verify", "build and verify, write report.json"),
                       ("report", "print the summary of report.json")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--dir", required=True)

    e = sub.add_parser("export", help="write tree.dot (and tree.svg with graphviz)")
    e.add_argument("--dir", required=True)
    e.add_argument("--dot", action="store_true")
    e.add_argument("--svg", action="store_true")
    return ap


def config_from_args(args) -> RunConfig:
    keys = ("n", "depth", "ratio", "rank", "radius", "length", "branch_at", "branch_len")
    params = {k: getattr(args, k) for k in keys if getattr(args, k) is not None}
    if args.epsilon != "auto":
        try:
            if float(args.epsilon) <= 0:
                raise ValueError
        except ValueError:
            raise UsageError(f"--epsilon must be positive or 'auto', got {args.epsilon!r}") from None
    cfg = RunConfig(args.generator, params, args.epsilon, args.stages, args.levels, args.mode,
                    args.pendant_at, args.pendant_length, args.out)
    cfg.stage_count()
    return cfg


def main(argv=None) -> int:
    try:
        args = parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if args.command == "generate":
            return cmd_generate(config_from_args(args))
        d = Path(args.dir)
        if args.command == "build":
            return cmd_build(d)
        if args.command == "verify":
            return cmd_verify(d)
        if args.command == "export":
            return cmd_export(d, args.dot, args.svg)
        return cmd_report(d)
    except (UsageError, MetricError, OSError, ValueError) as exc:
        if isinstance(exc, ConstructionError):
            print(f"construction failed: {exc}", file=sys.stderr)
            return EXIT_FAIL
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
