import argparse
import sys

from .figures import FIGURE_KINDS, FigureSpec, PlotkitError, render


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="plotkit",
        description="Render figures from manl CSV experiment outputs.")
    sub = p.add_subparsers(dest="kind", required=True)
    for kind in FIGURE_KINDS:
        sp = sub.add_parser(kind, help=f"render a {kind} figure")
        sp.add_argument("--in", dest="inputs", nargs="+", required=True,
                        metavar="CSV", help="input CSV file(s)")
        sp.add_argument("--out", required=True, help="output figure path (PNG/SVG)")
        sp.add_argument("--x", default=None, help="x column name")
        sp.add_argument("--y", default=None, help="y column name")
        sp.add_argument("--se", default=None, help="standard-error column name")
        sp.add_argument("--title", default=None)
        sp.add_argument("--xlabel", default=None)
        sp.add_argument("--ylabel", default=None)
        sp.add_argument("--logx", action="store_true")
        sp.add_argument("--logy", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(kind=args.kind, inputs=tuple(args.inputs), output=args.out,
                      x=args.x, y=args.y, se=args.se, title=args.title,
                      xlabel=args.xlabel, ylabel=args.ylabel,
                      logx=args.logx, logy=args.logy)
    try:
        result = render(spec)
    except PlotkitError as exc:
        print(f"plotkit error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {result.output}")
    for line in result.lines():
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
