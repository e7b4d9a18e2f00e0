"""Gallery/probe recognition protocol: deterministic splits, rank-1
cross-view matrices, aggregate means, and run-vs-run deltas.

Rank-1 assignment: each probe item takes the subject of its nearest gallery
item among gallery items at the gallery view; distance ties break to the
lowest gallery index, so results are deterministic. A brute-force
all-pairs oracle with the same tie rule is provided for verification.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gei import ORIGIN_ORIGINAL, ORIGIN_SYNTHESIZED

DISTANCE_METRICS = ("euclidean", "cosine")


@dataclass
class SplitSpec:
    train_subjects: list
    test_subjects: list
    gallery_sequences: list
    probe_sequences: list

    def validate(self):
        if set(self.train_subjects) & set(self.test_subjects):
            raise ValueError("train and test subjects overlap")
        if set(self.gallery_sequences) & set(self.probe_sequences):
            raise ValueError("gallery and probe sequences overlap")
        if not self.train_subjects or not self.test_subjects:
            raise ValueError("both train and test subject lists must be nonempty")
        if not self.gallery_sequences or not self.probe_sequences:
            raise ValueError("both gallery and probe sequence lists must be nonempty")
        return self


def build_split(geis, spec):
    """Partition GEI records into (train, gallery, probe).

    Synthesized GEIs may only appear in the train set; a synthesized record
    of a test subject means the pipeline leaked synthesis into evaluation
    and is rejected. Every (test subject, gallery/probe sequence) cell must
    be present.
    """
    spec.validate()
    train_ids = set(spec.train_subjects)
    test_ids = set(spec.test_subjects)
    train, gallery, probe = [], [], []
    for g in geis:
        if g.origin == ORIGIN_SYNTHESIZED and g.subject_id in test_ids:
            raise ValueError(
                f"synthesized GEI of test subject {g.subject_id}: synthesis is train-only"
            )
        if g.subject_id in train_ids:
            train.append(g)
        elif g.subject_id in test_ids and g.origin == ORIGIN_ORIGINAL:
            if g.sequence_id in spec.gallery_sequences:
                gallery.append(g)
            elif g.sequence_id in spec.probe_sequences:
                probe.append(g)
    missing = []
    have = {(g.subject_id, g.sequence_id) for g in gallery + probe}
    for sid in spec.test_subjects:
        for seq in list(spec.gallery_sequences) + list(spec.probe_sequences):
            if (sid, seq) not in have:
                missing.append(f"{sid}/{seq}")
    if missing:
        raise ValueError(f"split is missing test cells: {', '.join(missing[:10])}")
    return train, gallery, probe


def kfold_split_specs(subject_ids, folds, gallery_sequences, probe_sequences, seed):
    """Random k-fold partition: each fold tests one subject block and trains
    on the rest."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(21,)))
    order = [subject_ids[i] for i in rng.permutation(len(subject_ids))]
    blocks = [sorted(order[i::folds]) for i in range(folds)]
    specs = []
    for i in range(folds):
        test = blocks[i]
        train = sorted(sid for j, b in enumerate(blocks) if j != i for sid in b)
        specs.append(
            SplitSpec(train, test, list(gallery_sequences), list(probe_sequences)).validate()
        )
    return specs


@dataclass
class RecognitionMatrix:
    gallery_views: list  # row labels, degrees
    probe_views: list  # column labels, degrees
    cells: np.ndarray  # (rows, cols) rank-1 accuracy in percent

    def validate(self):
        if self.cells.shape != (len(self.gallery_views), len(self.probe_views)):
            raise ValueError("matrix shape does not match view labels")
        if self.cells.min() < 0.0 or self.cells.max() > 100.0:
            raise ValueError("accuracies must lie in [0, 100]")
        return self


def _distances(probe_vecs, gallery_vecs, metric):
    p = probe_vecs.astype(np.float64)
    g = gallery_vecs.astype(np.float64)
    if metric == "euclidean":
        diff = p[:, None, :] - g[None, :, :]
        return np.sqrt((diff * diff).sum(axis=2))
    if metric == "cosine":
        pn = p / np.maximum(np.linalg.norm(p, axis=1, keepdims=True), 1e-12)
        gn = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
        return 1.0 - pn @ gn.T
    raise ValueError(f"unknown metric {metric!r}; choose from {DISTANCE_METRICS}")


def rank1_matrix(gallery, probe, metric="euclidean"):
    """Cross-view rank-1 accuracy grid from labeled embeddings."""
    if not gallery or not probe:
        raise ValueError("gallery and probe sets must both be nonempty")
    gallery_views = sorted({e.view_deg for e in gallery})
    probe_views = sorted({e.view_deg for e in probe})
    cells = np.zeros((len(gallery_views), len(probe_views)))
    for gi, gv in enumerate(gallery_views):
        gsub = [e for e in gallery if e.view_deg == gv]
        if not gsub:
            raise ValueError(f"no gallery items at view {gv}")
        gvecs = np.stack([e.vector for e in gsub])
        gids = [e.subject_id for e in gsub]
        for pi, pv in enumerate(probe_views):
            psub = [e for e in probe if e.view_deg == pv]
            if not psub:
                raise ValueError(f"no probe items at view {pv}")
            pvecs = np.stack([e.vector for e in psub])
            dist = _distances(pvecs, gvecs, metric)
            nearest = dist.argmin(axis=1)  # argmin takes the lowest index on ties
            correct = sum(
                gids[j] == e.subject_id for j, e in zip(nearest, psub)
            )
            cells[gi, pi] = 100.0 * correct / len(psub)
    return RecognitionMatrix(gallery_views, probe_views, cells).validate()


def rank1_matrix_bruteforce(gallery, probe, metric="euclidean"):
    """Independent all-pairs oracle: explicit loops, explicit tie rule."""
    if not gallery or not probe:
        raise ValueError("gallery and probe sets must both be nonempty")
    gallery_views = sorted({e.view_deg for e in gallery})
    probe_views = sorted({e.view_deg for e in probe})
    cells = np.zeros((len(gallery_views), len(probe_views)))
    for gi, gv in enumerate(gallery_views):
        gsub = [e for e in gallery if e.view_deg == gv]
        for pi, pv in enumerate(probe_views):
            psub = [e for e in probe if e.view_deg == pv]
            if not gsub or not psub:
                raise ValueError("empty cell population")
            correct = 0
            for p in psub:
                best_j, best_d = -1, np.inf
                for j, g in enumerate(gsub):
                    diff = p.vector.astype(np.float64) - g.vector.astype(np.float64)
                    if metric == "euclidean":
                        d = np.sqrt((diff * diff).sum())
                    else:
                        pv_ = p.vector.astype(np.float64)
                        gv_ = g.vector.astype(np.float64)
                        denom = max(np.linalg.norm(pv_) * np.linalg.norm(gv_), 1e-12 * 1e-12)
                        d = 1.0 - float(pv_ @ gv_) / denom
                    if d < best_d:  # strict: first minimum wins
                        best_j, best_d = j, d
                correct += gsub[best_j].subject_id == p.subject_id
            cells[gi, pi] = 100.0 * correct / len(psub)
    return RecognitionMatrix(gallery_views, probe_views, cells).validate()


def mean_excluding_identical(matrix):
    """Per-probe-view column means omitting the identical-view diagonal."""
    if matrix.gallery_views != matrix.probe_views:
        raise ValueError("matrix must be square with matching view labels")
    n = len(matrix.probe_views)
    out = np.empty(n)
    for j in range(n):
        col = np.delete(matrix.cells[:, j], j)
        out[j] = col.mean()
    return out


def row_mean(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("row_mean of an empty vector")
    return float(values.mean())


@dataclass
class DeltaReport:
    views_gallery: list
    views_probe: list
    cell_delta: np.ndarray  # A - B per cell
    per_probe_delta: np.ndarray  # column means of cell_delta
    overall_delta: float
    regressed_cells: list = field(default_factory=list)  # where B >= A


def compare_runs(matrix_a, matrix_b):
    """Cellwise / per-probe-view / overall deltas of run A over run B,
    flagging cells where B is at least as good as A."""
    if (
        matrix_a.gallery_views != matrix_b.gallery_views
        or matrix_a.probe_views != matrix_b.probe_views
    ):
        raise ValueError("recognition matrices have different view labels")
    delta = matrix_a.cells - matrix_b.cells
    regressed = [
        (gv, pv)
        for i, gv in enumerate(matrix_a.gallery_views)
        for j, pv in enumerate(matrix_a.probe_views)
        if delta[i, j] <= 0.0
    ]
    return DeltaReport(
        views_gallery=list(matrix_a.gallery_views),
        views_probe=list(matrix_a.probe_views),
        cell_delta=delta,
        per_probe_delta=delta.mean(axis=0),
        overall_delta=float(delta.mean()),
        regressed_cells=regressed,
    )


# --- CSV interfaces --------------------------------------------------------


def _fmt_view(v):
    return f"{v:g}"


def write_matrix_csv(path, matrix):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("gallery\\probe," + ",".join(_fmt_view(v) for v in matrix.probe_views) + "\n")
        for gv, row in zip(matrix.gallery_views, matrix.cells):
            fh.write(_fmt_view(gv) + "," + ",".join(f"{c:.2f}" for c in row) + "\n")


def read_matrix_csv(path):
    lines = Path(path).read_text().strip().splitlines()
    probe_views = [float(v) for v in lines[0].split(",")[1:]]
    gallery_views, rows = [], []
    for line in lines[1:]:
        parts = line.split(",")
        gallery_views.append(float(parts[0]))
        rows.append([float(c) for c in parts[1:]])
    return RecognitionMatrix(gallery_views, probe_views, np.array(rows)).validate()


def write_aggregate_csv(path, probe_views, per_view_means, mean_value):
    """One-row aggregate table: per-probe-view means plus the overall mean,
    one decimal place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(_fmt_view(v) for v in probe_views) + ",mean\n")
        fh.write(",".join(f"{m:.1f}" for m in per_view_means) + f",{mean_value:.1f}\n")


def write_delta_csv(path, report):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("gallery\\probe," + ",".join(_fmt_view(v) for v in report.views_probe) + "\n")
        for gv, row in zip(report.views_gallery, report.cell_delta):
            fh.write(_fmt_view(gv) + "," + ",".join(f"{c:.2f}" for c in row) + "\n")
        fh.write(
            "overall,"
            + ",".join(f"{d:.2f}" for d in report.per_probe_delta)
            + f",{report.overall_delta:.4f}\n"
        )
