#!/usr/bin/env python3
"""Render a strip of walker silhouettes and GEIs across views for eyeballing.

Usage: python scripts/preview_walker.py out.png [--subject-seed 7] [--views 0 45 90 135 180]
"""

import argparse
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

import numpy as np
from PIL import Image

from dvgait import gaitgen, gei


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", help="output PNG path")
    parser.add_argument("--subject-seed", type=int, default=7)
    parser.add_argument("--views", type=float, nargs="+", default=[0, 45, 90, 135, 180])
    args = parser.parse_args()

    spec = gaitgen.sample_subjects(1, seed=args.subject_seed)[0]
    rows = []
    # row 1: a silhouette at phase 0.25 per view; row 2: the GEI per view
    sils, geis = [], []
    for view in args.views:
        sil = gaitgen.render_silhouette(spec, view, 0.25)
        sils.append(sil.astype(np.float64))
        seq = gaitgen.generate_sequence(spec, view, "nm01")
        g = gei.compute_gei(seq)
        up = np.kron(g.pixels.astype(np.float64), np.ones((2, 2)))  # 64 -> 128
        geis.append(up)
    rows.append(np.concatenate(sils, axis=1))
    rows.append(np.concatenate(geis, axis=1))
    grid = np.concatenate(rows, axis=0)
    Image.fromarray(np.floor(grid * 255 + 0.5).astype(np.uint8), mode="L").save(args.out)
    print(f"wrote {args.out} ({spec.subject_id}, views {args.views})")


if __name__ == "__main__":
    main()
