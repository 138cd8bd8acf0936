"""Command-line front end.

    python -m backend.main tree comb --s 0.375
    python -m backend.main gh exact a.json b.json
    python -m backend.main lab scan-injectivity --config config.yaml

Exit codes: 0 success, 2 validation failure, 1 usage error.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from dotenv import load_dotenv
from pydantic import ValidationError

from backend.geometry.checks import run_checks
from backend.geometry.config import config
from backend.geometry.documents import (
    dumps,
    read_space,
    read_tree,
    serialize_tree,
    table_to_csv,
    write_text,
)
from backend.geometry.embedding_lab import (
    EmbedConfig,
    build_F,
    continuity_scan,
    injectivity_scan,
    load_embed_config,
    replacement_path,
    replacement_tree,
)
from backend.geometry.errors import GeometryError
from backend.geometry.families import CombParams, StarParams, comb_tree, star_tree
from backend.geometry.gh_solver import (
    best_heuristic,
    gh_tree_interval,
    lower_bounds,
    solve_gh,
)
from backend.geometry.metric_core import four_point_defect, validate_metric
from backend.geometry.tree_graph import (
    PlanEntry,
    ReplacementPlan,
    replace_edges,
    subdivide,
    wedge_sum,
)

# Load environment variables from the root .env file
load_dotenv()

EXIT_OK, EXIT_USAGE, EXIT_INVALID = 0, 1, 2


class UsageError(Exception):
    pass


class LabParser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; 2 is reserved for validation failures here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class Output:
    """Writes reports to --out (under TREELAB_OUTPUT_DIR when set) or stdout."""

    def __init__(self, out: str | None):
        self.path = None
        if out:
            base = os.getenv("TREELAB_OUTPUT_DIR")
            path = Path(out)
            self.path = Path(base) / path if base and not path.is_absolute() else path

    def emit(self, text: str):
        if self.path is None:
            print(text.rstrip("\n"))
        else:
            write_text(self.path, text)
            print(f"Wrote {self.path}", file=sys.stderr)


# --- tree ---

def cmd_tree_validate(args, out: Output) -> int:
    space, tree = read_space(args.file)
    report = validate_metric(space, args.tol)
    result = report.model_dump()
    if tree is not None and tree.size <= args.max_defect_size:
        result["four_point_defect"] = four_point_defect(space)
        result["ok"] = report.ok and result["four_point_defect"] <= args.tol
    out.emit(dumps(result))
    return EXIT_OK if result["ok"] else EXIT_INVALID


def cmd_tree_comb(args, out: Output) -> int:
    depth = args.depth or config.numerics.comb_depth
    out.emit(serialize_tree(comb_tree(CombParams(s=args.s, scale=args.scale, depth=depth))))
    return EXIT_OK


def cmd_tree_star(args, out: Output) -> int:
    if args.branches is not None and args.branches != len(args.a):
        raise GeometryError(f"--branches {args.branches} does not match {len(args.a)} values of --a")
    params = StarParams(a=args.a, scale=args.k, eps=args.eps or config.numerics.eps)
    out.emit(serialize_tree(star_tree(params)))
    return EXIT_OK


def _split_part(spec: str) -> tuple[str, str]:
    path, sep, base = spec.rpartition("@")
    if not sep:
        raise UsageError(f"Wedge part {spec!r} must look like FILE@BASEPOINT")
    return path, base


def cmd_tree_wedge(args, out: Output) -> int:
    parts = [(read_tree(path), base) for path, base in map(_split_part, args.parts)]
    out.emit(serialize_tree(wedge_sum(parts)))
    return EXIT_OK


def cmd_tree_replace(args, out: Output) -> int:
    host = read_tree(args.host)
    if args.plan:
        plan_path = Path(args.plan)
        entries = json.loads(plan_path.read_text())
        plan = ReplacementPlan(
            entries=[
                PlanEntry(
                    a=e["a"],
                    b=e["b"],
                    tree=read_tree(plan_path.parent / e["tree"]),
                    alpha=e["alpha"],
                    beta=e["beta"],
                )
                for e in entries
            ]
        )
        result = replace_edges(host, plan, args.tol)
    elif args.s is not None:
        result = replacement_tree(host, args.s, args.depth)
    else:
        raise UsageError("tree replace needs --plan or --s")
    out.emit(serialize_tree(result))
    return EXIT_OK


def cmd_tree_subdivide(args, out: Output) -> int:
    out.emit(serialize_tree(subdivide(read_tree(args.file), args.eps or config.numerics.eps, args.tol)))
    return EXIT_OK


# --- gh ---

def cmd_gh_exact(args, out: Output) -> int:
    (X, _), (Y, _) = read_space(args.a), read_space(args.b)
    value, witness = solve_gh(X, Y, args.cap)
    if args.witness:
        out.emit(dumps({"gh": value, "witness": witness.pairs}))
    else:
        out.emit(dumps(value))
    return EXIT_OK


def cmd_gh_bounds(args, out: Output) -> int:
    (X, T1), (Y, T2) = read_space(args.a), read_space(args.b)
    trees = (T1, T2) if T1 is not None and T2 is not None else None
    name, R, value = best_heuristic(X, Y, trees)
    lows = lower_bounds(X, Y)
    out.emit(dumps({"lower": max(lows.values()), "lower_parts": lows, "upper": value / 2, "upper_witness": name}))
    return EXIT_OK


def cmd_gh_trees(args, out: Output) -> int:
    interval = gh_tree_interval(read_tree(args.a), read_tree(args.b), args.eps, args.cap)
    out.emit(dumps(interval.model_dump()))
    return EXIT_OK


# --- lab ---

def _lab_config(args) -> EmbedConfig:
    cfg = load_embed_config(args.config)
    update = {}
    if args.eps:
        update["eps"] = args.eps
    if args.tol != config.solver.tol:
        update["tol"] = args.tol
    return cfg.model_copy(update=update) if update else cfg


def _grid_index(cfg: EmbedConfig, args) -> int:
    if args.u is not None:
        if not 0 <= args.u < len(cfg.coords):
            raise GeometryError(f"Grid index {args.u} out of range")
        return args.u
    target = np.array(args.coords)
    gaps = np.abs(cfg.coords - target).max(axis=1)
    index = int(np.argmin(gaps))
    if gaps[index] > 1e-9:
        raise GeometryError(f"{tuple(args.coords)} is not a point of the grid")
    return index


def cmd_lab_embed(args, out: Output) -> int:
    cfg = _lab_config(args)
    out.emit(serialize_tree(build_F(cfg, _grid_index(cfg, args), args.k)))
    return EXIT_OK


def cmd_lab_scan_continuity(args, out: Output) -> int:
    rows = continuity_scan(_lab_config(args), k=args.k)
    if args.format == "csv":
        out.emit(table_to_csv(rows, ["u1", "u2", "k", "bound", "hi", "margin"]))
    else:
        out.emit(dumps([row.model_dump() for row in rows]))
    return EXIT_OK if all(row.margin >= 0 for row in rows) else EXIT_INVALID


def cmd_lab_scan_injectivity(args, out: Output) -> int:
    report = injectivity_scan(_lab_config(args))
    result = report.model_dump()
    result["ok"] = report.ok
    out.emit(dumps(result))
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_lab_path(args, out: Output) -> int:
    steps = replacement_path(read_tree(args.file), args.s_grid, args.eps, args.cap, args.depth)
    rows = [{"s": step.s, "hi": step.hi, "bound": step.bound, "vertices": step.tree.size} for step in steps]
    eps = args.eps or config.numerics.eps
    ok = all(r["hi"] is None or r["hi"] <= r["bound"] + 2 * eps + args.tol for r in rows)
    if args.format == "csv":
        lines = ["s,hi,bound,vertices"] + [
            ",".join("" if r[c] is None else f"{r[c]:.12g}" for c in ("s", "hi", "bound", "vertices")) for r in rows
        ]
        out.emit("\n".join(lines))
    else:
        out.emit(dumps(rows))
    return EXIT_OK if ok else EXIT_INVALID


def cmd_lab_check(args, out: Output) -> int:
    report = run_checks(args.seed, args.draws, args.tol)
    result = report.model_dump()
    result["ok"] = report.ok
    out.emit(dumps(result))
    return EXIT_OK if report.ok else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    common = LabParser(add_help=False)
    common.add_argument("--tol", type=float, default=config.solver.tol, help="Comparison tolerance.")
    common.add_argument("--eps", type=float, default=None, help="Sampling resolution.")
    common.add_argument("--out", default=None, help="Write the report to this file instead of stdout.")
    common.add_argument("--format", choices=["json", "csv"], default="json")
    common.add_argument("--seed", type=int, default=0, help="Seed for randomized suites.")

    parser = LabParser(prog="python -m backend.main", description="Metric trees and Gromov-Hausdorff bounds.")
    groups = parser.add_subparsers(dest="group", required=True, parser_class=LabParser)

    tree = groups.add_parser("tree").add_subparsers(dest="command", required=True, parser_class=LabParser)
    p = tree.add_parser("validate", parents=[common])
    p.add_argument("file")
    p.add_argument("--max-defect-size", type=int, default=60)
    p.set_defaults(func=cmd_tree_validate)
    p = tree.add_parser("comb", parents=[common])
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--depth", type=int, default=None)
    p.set_defaults(func=cmd_tree_comb)
    p = tree.add_parser("star", parents=[common])
    p.add_argument("--a", type=float, nargs="+", required=True)
    p.add_argument("--k", type=float, default=1.0, help="Scale K.")
    p.add_argument("--branches", type=int, default=None)
    p.set_defaults(func=cmd_tree_star)
    p = tree.add_parser("wedge", parents=[common])
    p.add_argument("parts", nargs="+", help="FILE@BASEPOINT")
    p.set_defaults(func=cmd_tree_wedge)
    p = tree.add_parser("replace", parents=[common])
    p.add_argument("host")
    p.add_argument("--plan", default=None)
    p.add_argument("--s", type=float, default=None)
    p.add_argument("--depth", type=int, default=None)
    p.set_defaults(func=cmd_tree_replace)
    p = tree.add_parser("subdivide", parents=[common])
    p.add_argument("file")
    p.set_defaults(func=cmd_tree_subdivide)

    gh = groups.add_parser("gh").add_subparsers(dest="command", required=True, parser_class=LabParser)
    for name, func in (("exact", cmd_gh_exact), ("bounds", cmd_gh_bounds), ("trees", cmd_gh_trees)):
        p = gh.add_parser(name, parents=[common])
        p.add_argument("a")
        p.add_argument("b")
        p.add_argument("--cap", type=int, default=None)
        p.set_defaults(func=func)
    gh.choices["exact"].add_argument("--witness", action="store_true")

    lab = groups.add_parser("lab").add_subparsers(dest="command", required=True, parser_class=LabParser)
    for name, func in (
        ("embed", cmd_lab_embed),
        ("scan-continuity", cmd_lab_scan_continuity),
        ("scan-injectivity", cmd_lab_scan_injectivity),
    ):
        p = lab.add_parser(name, parents=[common])
        p.add_argument("--config", default="config.yaml")
        p.add_argument("--k", type=int, default=1)
        p.set_defaults(func=func)
    embed = lab.choices["embed"]
    where = embed.add_mutually_exclusive_group(required=True)
    where.add_argument("--u", type=int, default=None, help="Index of the grid point.")
    where.add_argument("--coords", type=float, nargs=2, default=None)
    p = lab.add_parser("path", parents=[common])
    p.add_argument("file")
    p.add_argument("--s-grid", type=float, nargs="+", required=True)
    p.add_argument("--cap", type=int, default=None)
    p.add_argument("--depth", type=int, default=None)
    p.set_defaults(func=cmd_lab_path)
    p = lab.add_parser("check", parents=[common])
    p.add_argument("--draws", type=int, default=200)
    p.set_defaults(func=cmd_lab_check)
    return parser


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    out = Output(args.out)
    try:
        return args.func(args, out)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (GeometryError, ValidationError, json.JSONDecodeError) as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_INVALID


def main(argv: list[str] | None = None) -> int:
    return run_cli(argv)


if __name__ == "__main__":
    sys.exit(main())
