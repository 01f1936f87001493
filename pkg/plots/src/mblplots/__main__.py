"""Entry point: ``python -m mblplots <recipe.json> [recipe2.json ...]``."""

import sys

from .figures import FigureRecipe, RecipeError, render


def main(argv=None) -> int:
    args = sys.argv[1:] if argv is None else argv
    if not args:
        print("usage: python -m mblplots <recipe.json> [...]", file=sys.stderr)
        return 1
    for path in args:
        try:
            out = render(FigureRecipe.from_json(path))
        except RecipeError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
