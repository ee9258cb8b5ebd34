"""Command line entry: render one figure per invocation.

Either pass flags directly or point --spec at a JSON file with the same
fields (inputs, kind, out, title, dpi).
"""

from __future__ import annotations

import argparse
import json
import sys

from .figures import KINDS, FigureSpec, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orthoflow-plots",
        description="Render a static figure from run CSVs",
    )
    parser.add_argument("inputs", nargs="*", help="input CSV file(s)")
    parser.add_argument("--spec", help="JSON figure spec (overrides the flags)")
    parser.add_argument("--kind", choices=KINDS, help="figure kind")
    parser.add_argument("--out", help="output PNG path")
    parser.add_argument("--title", default="", help="figure title")
    parser.add_argument("--dpi", type=int, default=100)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.spec:
            fields = json.loads(open(args.spec).read())
            spec = FigureSpec(
                inputs=tuple(fields["inputs"]),
                kind=fields["kind"],
                out=fields["out"],
                title=fields.get("title", ""),
                dpi=int(fields.get("dpi", 100)),
            )
        else:
            if not args.kind or not args.out or not args.inputs:
                print("need --kind, --out and input CSVs (or --spec)", file=sys.stderr)
                return 2
            spec = FigureSpec(
                inputs=tuple(args.inputs),
                kind=args.kind,
                out=args.out,
                title=args.title,
                dpi=args.dpi,
            )
        out = render(spec)
    except (SchemaError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
