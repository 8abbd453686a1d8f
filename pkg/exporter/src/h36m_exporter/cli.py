"""Command line front end.

    h36m-export export --src DIR --out DIR --split test
    h36m-export validate DIR

exit codes: 0 ok, 2 usage error, 3 export failed, 4 validation failures.
"""

from __future__ import annotations

import argparse
import sys

from . import export as export_mod
from . import motb, skeleton

EXIT_OK = 0
EXIT_EXPORT = 3
EXIT_INVALID = 4


def cmd_export(args) -> int:
    manifest = export_mod.export(args.src, args.out, args.split, args.joint_subset)
    print(f"{args.split}: {len(manifest.clips)} clips "
          f"({manifest.joints} joints at {manifest.fps} fps), "
          f"{len(manifest.skipped)} skipped")
    for source, reason in manifest.skipped:
        print(f"  skipped {source}: {reason}")
    return EXIT_OK


def cmd_validate(args) -> int:
    reports = motb.check_tree(args.dir)
    if not reports:
        print(f"no .motb files under {args.dir}", file=sys.stderr)
        return EXIT_INVALID
    failures = 0
    for r in reports:
        if r.ok:
            print(f"ok   {r.path}  K={r.joints} fps={r.fps} frames={r.frames}")
        else:
            failures += 1
            print(f"FAIL {r.path}  {r.reason}")
    print(f"{len(reports) - failures}/{len(reports)} files pass")
    return EXIT_INVALID if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="h36m-export",
        description="Convert a local Human3.6M pose tree into MOTB clips.",
        epilog="exit codes: 0 ok, 2 usage error, 3 export failed, "
               "4 validation failures",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("export", help="convert pose files into MOTB clips")
    ex.add_argument("--src", required=True,
                    help="pose tree root (holds S*/action_take.txt)")
    ex.add_argument("--out", required=True, help="output root; clips land in <out>/<split>/")
    ex.add_argument("--split", required=True, choices=sorted(export_mod.SPLIT_SUBJECTS))
    ex.add_argument("--joint-subset", default=None, metavar="FILE",
                    help="override the shipped joint index list")
    ex.set_defaults(func=cmd_export)

    va = sub.add_parser("validate", help="structurally check every .motb under a directory")
    va.add_argument("dir")
    va.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (export_mod.ExportError, skeleton.SubsetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXPORT


if __name__ == "__main__":
    sys.exit(main())
