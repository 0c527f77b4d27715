"""Run figure presets and write their CSV/SVG outputs and summaries."""

import argparse
import json
from pathlib import Path

from sme_lab import export, presets


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("figures", nargs="*", default=sorted(presets.PRESETS), choices=sorted(presets.PRESETS))
    parser.add_argument("--samples", type=int, default=5000)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", type=Path, default=Path("sme_lab_out/presets"))
    args = parser.parse_args()
    for name in args.figures:
        out = args.out / name
        summary = presets.PRESETS[name](samples=args.samples, seed=args.seed, out=out)
        export.write_json(out / "summary.json", summary)
        print(json.dumps(export._jsonable(summary), sort_keys=True))


if __name__ == "__main__":
    main()
