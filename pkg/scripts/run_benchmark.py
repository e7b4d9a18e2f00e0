#!/usr/bin/env python3
"""Run the full seeded benchmark pipeline and print the headline metrics.

This is the measurement procedure behind the acceptance thresholds: corpus,
GAN, dense synthesis, both CNN runs, evaluation, and the morph-vs-synthesis
midpoint comparison, all from configs/bench.json.

Usage: python scripts/run_benchmark.py [--config configs/bench.json] [--out DIR]
"""

import argparse
import os
import sys
import time
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(REPO / "configs" / "bench.json"))
    parser.add_argument("--out", default=None, help="override the run directory")
    parser.add_argument("--threads", default=None, help="set DVGAIT_THREADS before numpy loads")
    args = parser.parse_args()
    if args.threads:
        os.environ["DVGAIT_THREADS"] = args.threads
        from dvgait.cli import _apply_thread_cap

        _apply_thread_cap()

    import logging

    import numpy as np

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    from dvgait import dvgan, evalproto, featnet, gaitgen, gei, pipeline
    from dvgait import numgrad as ng
    from dvgait.config import load_config, write_effective_config

    cfg = load_config(args.config, out_dir_override=args.out)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_effective_config(cfg, cfg.out_dir / "effective_config.json")
    pipeline.write_run_manifest(cfg)

    t_start = time.time()

    def mark(stage):
        print(f"== {stage} done at {time.time() - t_start:.0f}s", flush=True)

    pipeline.stage_gen_data(cfg)
    mark("gen-data")
    pipeline.stage_train_gan(cfg)
    mark("train-gan")
    pipeline.stage_synth(cfg)
    mark("synth")
    pipeline.stage_train_cnn(cfg, "og")
    mark("train-cnn og")
    pipeline.stage_train_cnn(cfg, "dv")
    mark("train-cnn dv")
    matrices, report = pipeline.stage_evaluate(cfg, ["dv", "og"], oracle=True)
    mark("evaluate")
    pipeline.stage_morph_demo(cfg)
    mark("morph-demo")

    # headline measurements -------------------------------------------------
    import csv

    with open(pipeline.gan_dir(cfg) / "loss_history.csv") as fh:
        rows = list(csv.DictReader(fh))
    first = [float(r["L1"]) for r in rows if int(r["epoch"]) == 1]
    last_epoch = max(int(r["epoch"]) for r in rows)
    last = [float(r["L1"]) for r in rows if int(r["epoch"]) == last_epoch]
    ratio = np.mean(last) / np.mean(first)
    print(f"L1 epoch-1 mean {np.mean(first):.4f} -> epoch-{last_epoch} mean {np.mean(last):.4f} "
          f"(ratio {ratio:.3f})")

    gen = dvgan.load_generator(pipeline.gan_dir(cfg) / "generator.dvgw", cfg.gan.base_width)
    originals = pipeline.ensure_gei_cache(cfg)
    held = [g for g in originals if g.subject_id in set(cfg.eval.split.test_subjects)]
    errs = []
    with ng.no_grad():
        for start in range(0, len(held), 64):
            x = dvgan.stack_pixels(held[start : start + 64])
            out = gen.forward_tensor(ng.Tensor(x)).data
            errs.extend(np.abs(out - x).mean(axis=(1, 2, 3)))
    print(f"held-out reconstruction mean L1: {np.mean(errs):.4f}")

    for which, matrix in matrices.items():
        diag = float(np.mean(np.diag(matrix.cells)))
        cross = evalproto.row_mean(evalproto.mean_excluding_identical(matrix))
        print(f"run {which}: diagonal {diag:.2f}  cross-view {cross:.2f}")
    print(f"delta dv - og overall: {report.overall_delta:.4f}")

    # midpoint comparison: latent synthesis vs pixel morph, held-out subjects
    specs = {s.subject_id: s for s in gaitgen.sample_subjects(cfg.corpus.subjects, seed=cfg.seed)}
    groups = dvgan.group_by_sequence(held)
    probe_seq = cfg.eval.split.probe_sequences[0]
    wins = total = 0
    for sid in cfg.eval.split.test_subjects:
        cell = groups[(sid, probe_seq)]
        for p, q in zip(cfg.corpus.views, cfg.corpus.views[1:]):
            seq = gaitgen.generate_sequence(
                specs[sid], 0.5 * p + 0.5 * q, probe_seq,
                cfg.corpus.cycles, cfg.corpus.frames_per_cycle,
            )
            truth = gei.compute_gei(seq).pixels.astype(np.float64)
            morph = gei.pixel_morph(cell[p], cell[q], 0.5).pixels.astype(np.float64)
            z_p, z_q = gen.encode(cell[p]), gen.encode(cell[q])
            synth = gen.decode(dvgan.interpolate_latent(z_p, z_q, 0.5)).pixels.astype(np.float64)
            wins += np.abs(synth - truth).mean() < np.abs(morph - truth).mean()
            total += 1
    print(f"midpoint synthesis beats pixel morph: {wins}/{total} ({100 * wins / total:.1f}%)")
    print(f"total wall time: {time.time() - t_start:.0f}s")


if __name__ == "__main__":
    main()
