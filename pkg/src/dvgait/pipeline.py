"""Pipeline stages behind the CLI: each stage reads artifacts written by
earlier stages from the run directory and writes its own under it. All
stages are idempotent for a fixed config and seed."""

from __future__ import annotations

import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import dvgan, evalproto, featnet, gaitgen, gei
from . import __version__

log = logging.getLogger(__name__)


class MissingArtifact(FileNotFoundError):
    """A stage prerequisite (corpus, checkpoint, ...) has not been built."""


# --- layout ------------------------------------------------------------


def corpus_dir(cfg):
    return cfg.out_dir / "corpus"


def cache_dir(cfg):
    return cfg.out_dir / "gei_cache"


def gan_dir(cfg):
    return cfg.out_dir / "gan"


def synth_dir(cfg):
    return cfg.out_dir / "synth"


def cnn_dir(cfg, which):
    return cfg.out_dir / f"cnn_{which}"


def eval_dir(cfg, which):
    return cfg.out_dir / "eval" / which


def _require_artifact(path, hint):
    if not Path(path).exists():
        raise MissingArtifact(f"missing {path} (run `{hint}` first)")
    return Path(path)


def write_run_manifest(cfg):
    """Deterministic run metadata for reproducibility audits."""
    manifest = {
        "seed": cfg.seed,
        "threads": os.environ.get("DVGAIT_THREADS"),
        "dvgait_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
    }
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.out_dir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# --- stages ------------------------------------------------------------


def stage_gen_data(cfg):
    """Render the walker corpus onto disk."""
    specs = gaitgen.sample_subjects(cfg.corpus.subjects, seed=cfg.seed)
    manifest = gaitgen.build_corpus(
        specs,
        views=cfg.corpus.views,
        sequences_per_subject=cfg.corpus.sequences_per_subject,
        out_dir=corpus_dir(cfg),
        cycles=cfg.corpus.cycles,
        frames_per_cycle=cfg.corpus.frames_per_cycle,
        canvas=(cfg.corpus.canvas, cfg.corpus.canvas),
    )
    log.info("corpus written to %s", corpus_dir(cfg))
    return manifest


def ensure_gei_cache(cfg):
    """All original GEIs, computed from the corpus once and cached as PNG.

    Later stages read the cache, so the quantized (8-bit) images are the
    single source of truth for training and evaluation alike.
    """
    manifest = _require_artifact(corpus_dir(cfg) / "manifest.txt", "gen-data")
    rows = gaitgen.parse_manifest(manifest)
    out = []
    for row in rows:
        path = gei.gei_cache_path(cache_dir(cfg), row.subject_id, row.sequence_id, row.view_label)
        if not path.exists():
            seq = gaitgen.load_sequence(
                corpus_dir(cfg), row, frames_per_cycle=cfg.corpus.frames_per_cycle
            )
            gei.save_gei_png(path, gei.compute_gei(seq))
        out.append(
            gei.load_gei_png(path, row.subject_id, row.sequence_id, row.view_deg)
        )
    return out


def _train_subject_geis(cfg, originals):
    train_ids = set(cfg.eval.split.train_subjects)
    return [g for g in originals if g.subject_id in train_ids]


def stage_train_gan(cfg):
    originals = ensure_gei_cache(cfg)
    train_geis = _train_subject_geis(cfg, originals)
    log.info("training GAN on %d GEIs from %d subjects", len(train_geis), len(cfg.eval.split.train_subjects))
    dvgan.train(train_geis, cfg.gan, gan_dir(cfg))
    return gan_dir(cfg)


def synth_manifest_path(cfg):
    return synth_dir(cfg) / "manifest.txt"


def stage_synth(cfg):
    """Decode the dense view set from the trained generator and store it."""
    checkpoint = _require_artifact(gan_dir(cfg) / "generator.dvgw", "train-gan")
    gen = dvgan.load_generator(checkpoint, cfg.gan.base_width)
    originals = ensure_gei_cache(cfg)
    train_geis = _train_subject_geis(cfg, originals)
    synthesized, skipped = dvgan.synthesize_dense_set(
        gen, train_geis, pairs=cfg.synth.pairs, alphas=cfg.synth.alphas
    )
    base = synth_dir(cfg)
    lines = []
    for g in synthesized:
        label = gaitgen.format_view(g.view_deg)
        path = gei.gei_cache_path(base / "geis", g.subject_id, g.sequence_id, label)
        gei.save_gei_png(path, g)
        rel = path.relative_to(cfg.out_dir).as_posix()
        lines.append(f"{g.subject_id}\t{g.sequence_id}\t{label}\t{g.origin}\t{rel}")
    base.mkdir(parents=True, exist_ok=True)
    with open(synth_manifest_path(cfg), "w") as fh:
        for subject, seq, p, q in skipped:
            fh.write(f"# skipped pair ({p:g}, {q:g}) for {subject}/{seq}: view missing\n")
        fh.write("\n".join(lines) + "\n")
    log.info("synthesized %d GEIs (%d pairs skipped)", len(synthesized), len(skipped))
    return synth_manifest_path(cfg)


def load_synth(cfg):
    manifest = _require_artifact(synth_manifest_path(cfg), "synth")
    out = []
    for line in manifest.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        subject, seq, label, origin, rel = line.split("\t")
        out.append(
            gei.load_gei_png(cfg.out_dir / rel, subject, seq, float(label), origin=origin)
        )
    return out


def stage_train_cnn(cfg, which):
    """Train the feature CNN on originals only (og) or the densified set (dv)."""
    if which not in ("og", "dv"):
        raise ValueError("--set must be 'og' or 'dv'")
    originals = ensure_gei_cache(cfg)
    train_geis = _train_subject_geis(cfg, originals)
    synthesized = load_synth(cfg) if which == "dv" else None
    log.info(
        "training %s CNN: %d originals%s",
        which,
        len(train_geis),
        f" + {len(synthesized)} synthesized" if synthesized else "",
    )
    featnet.train_features(train_geis, cfg.cnn, synthesized=synthesized, out_dir=cnn_dir(cfg, which))
    return cnn_dir(cfg, which)


class OracleMismatch(AssertionError):
    pass


def stage_evaluate(cfg, runs, oracle=False):
    """Per-run recognition matrix and aggregates; a delta report when two
    runs are given (first minus second)."""
    originals = ensure_gei_cache(cfg)
    _, gallery_geis, probe_geis = evalproto.build_split(originals, cfg.eval.split)
    matrices = {}
    for which in runs:
        checkpoint = _require_artifact(cnn_dir(cfg, which) / "featnet.dvgw", f"train-cnn --set {which}")
        net = featnet.load_feature_net(
            checkpoint,
            num_classes=len(cfg.eval.split.train_subjects),
            base_width=cfg.cnn.base_width,
            embedding_dim=cfg.cnn.embedding_dim,
        )
        gallery = featnet.extract(net, gallery_geis)
        probe = featnet.extract(net, probe_geis)
        matrix = evalproto.rank1_matrix(gallery, probe, metric=cfg.eval.metric)
        if oracle:
            check = evalproto.rank1_matrix_bruteforce(gallery, probe, metric=cfg.eval.metric)
            if not np.array_equal(matrix.cells, check.cells):
                raise OracleMismatch(
                    f"rank-1 matrix for run {which} disagrees with the brute-force oracle"
                )
        out = eval_dir(cfg, which)
        evalproto.write_matrix_csv(out / "matrix.csv", matrix)
        per_view = evalproto.mean_excluding_identical(matrix)
        evalproto.write_aggregate_csv(
            out / "aggregates.csv", matrix.probe_views, per_view, evalproto.row_mean(per_view)
        )
        featnet.write_embeddings_csv(out / "embeddings_gallery.csv", gallery)
        featnet.write_embeddings_csv(out / "embeddings_probe.csv", probe)
        matrices[which] = matrix
        log.info(
            "run %s: diagonal mean %.2f, cross-view mean %.2f",
            which,
            float(np.mean(np.diag(matrix.cells))),
            evalproto.row_mean(per_view),
        )
    report = None
    if len(runs) == 2:
        a, b = runs
        report = evalproto.compare_runs(matrices[a], matrices[b])
        evalproto.write_delta_csv(cfg.out_dir / "eval" / f"delta_{a}_minus_{b}.csv", report)
        log.info("delta %s - %s: overall %.4f", a, b, report.overall_delta)
    return matrices, report


def stage_morph_demo(cfg, low=0.0, high=90.0, subjects=2):
    """Side-by-side pixel morphs vs latent-space syntheses vs ground truth
    for intermediate views between two distant originals."""
    checkpoint = _require_artifact(gan_dir(cfg) / "generator.dvgw", "train-gan")
    gen = dvgan.load_generator(checkpoint, cfg.gan.base_width)
    originals = ensure_gei_cache(cfg)
    groups = dvgan.group_by_sequence(originals)
    seq_id = cfg.eval.split.probe_sequences[0]
    subject_ids = cfg.eval.split.test_subjects[:subjects]
    mids = [v for v in cfg.corpus.views if low < v < high]
    if not mids:
        raise ValueError(f"no corpus views strictly between {low} and {high}")
    span = high - low
    out_root = cfg.out_dir / "morph_demo"
    grid_rows = []
    for sid in subject_ids:
        cell = groups.get((sid, seq_id))
        if cell is None or low not in cell or high not in cell:
            raise MissingArtifact(f"missing cached GEIs for {sid}/{seq_id} at {low:g}/{high:g}")
        sub_dir = out_root / sid
        x_p, x_q = cell[low], cell[high]
        gei.save_gei_png(sub_dir / f"endpoint_{low:g}.png", x_p)
        gei.save_gei_png(sub_dir / f"endpoint_{high:g}.png", x_q)
        z_p, z_q = gen.encode(x_p), gen.encode(x_q)
        morphs, synths, truths = [], [], []
        for view in mids:
            alpha = (high - view) / span  # blend weight on the low view
            morph = gei.pixel_morph(x_p, x_q, alpha)
            synth = gen.decode(dvgan.interpolate_latent(z_p, z_q, alpha))
            truth = cell.get(view)
            gei.save_gei_png(sub_dir / f"morph_{view:g}.png", morph)
            gei.save_gei_png(sub_dir / f"synth_{view:g}.png", synth)
            if truth is not None:
                gei.save_gei_png(sub_dir / f"truth_{view:g}.png", truth)
            morphs.append(morph.pixels)
            synths.append(synth.pixels)
            truths.append(truth.pixels if truth is not None else np.zeros_like(morph.pixels))
        pad = np.zeros_like(x_p.pixels)
        grid_rows.append(np.concatenate([x_p.pixels, *morphs, x_q.pixels], axis=1))
        grid_rows.append(np.concatenate([pad, *synths, pad], axis=1))
        grid_rows.append(np.concatenate([pad, *truths, pad], axis=1))
    grid = np.concatenate(grid_rows, axis=0)
    from PIL import Image

    Image.fromarray(np.floor(grid * 255.0 + 0.5).astype(np.uint8), mode="L").save(
        out_root / "grid.png", optimize=False
    )
    log.info("morph demo written to %s", out_root)
    return out_root
