"""``metods-plots render``: CSV exports in, publication figures out.

Exit codes: 0 success, 2 schema or usage error, 3 output I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import FIGURE_KINDS, FigureSpec, render
from .schemas import SchemaError

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_IO = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metods-plots",
        description="Render exported MetODS CSV bundles into figures.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render one figure from CSV input(s)")
    p.add_argument("--kind", required=True, choices=FIGURE_KINDS,
                   help="figure kind")
    p.add_argument("--in", dest="inputs", required=True, nargs="+",
                   type=Path, metavar="CSV",
                   help="input CSV file(s); order matters for kinds that "
                        "take a secondary table")
    p.add_argument("--out", required=True, type=Path,
                   help="output image path (png, pdf, svg, ...)")
    p.add_argument("--dpi", type=int, default=150)
    p.add_argument("--title", default="")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(kind=args.kind, inputs=tuple(args.inputs),
                      out=args.out, dpi=args.dpi, title=args.title)
    try:
        out = render(spec)
    except SchemaError as err:
        print(f"schema error: {err}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
