import argparse

from .export import export_fixture
from .recipes import DEFAULT_RECIPES


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fixturegen",
        description="Export the ONNX fixture corpus with golden tensors.")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--only", default=None,
                        help="export a single recipe by name")
    args = parser.parse_args(argv)
    recipes = [r for r in DEFAULT_RECIPES
               if args.only is None or r.name == args.only]
    if not recipes:
        parser.error(f"no recipe named '{args.only}'")
    for recipe in recipes:
        path = export_fixture(recipe, args.out_dir)
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
