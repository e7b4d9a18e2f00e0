"""Gait energy images: silhouette normalization, cycle averaging, the
pixel-morphing baseline, and the on-disk GEI cache.

Normalization crops each binary frame to its foreground box, rescales so the
figure is exactly 64 px tall (area-weighted box resampling, aspect ratio
preserved), then centers horizontally on the centroid of the top half of the
figure. Top-half centering is the usual convention: the torso barely moves
while the legs swing, so it is far more stable than a whole-body centroid.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

GEI_SIZE = 64

ORIGIN_ORIGINAL = "original"
ORIGIN_SYNTHESIZED = "synthesized"


@dataclass
class GEI:
    pixels: np.ndarray  # (64, 64) float32 in [0, 1]
    subject_id: str
    sequence_id: str
    view_deg: float
    origin: str = ORIGIN_ORIGINAL

    def validate(self):
        if self.pixels.shape != (GEI_SIZE, GEI_SIZE):
            raise ValueError(f"GEI must be {GEI_SIZE}x{GEI_SIZE}, got {self.pixels.shape}")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError(
                f"GEI pixels outside [0,1]: [{self.pixels.min()}, {self.pixels.max()}]"
            )
        if not (self.pixels > 0).any():
            raise ValueError("GEI has no foreground")
        if self.origin not in (ORIGIN_ORIGINAL, ORIGIN_SYNTHESIZED):
            raise ValueError(f"unknown origin {self.origin!r}")
        return self

    @property
    def key(self):
        return (self.subject_id, self.sequence_id, self.view_deg)


def _overlap_weights(n_in, n_out):
    """(n_out, n_in) box-filter weights; rows sum to 1, identity when equal."""
    if n_in == n_out:
        return np.eye(n_out)
    w = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        k0, k1 = int(np.floor(lo)), min(int(np.ceil(hi)), n_in)
        for k in range(k0, k1):
            w[i, k] = min(hi, k + 1) - max(lo, k)
    return w / scale


def resize_area(img, out_h, out_w):
    """Separable area-weighted (box filter) resampling, float64 math."""
    img = np.asarray(img, dtype=np.float64)
    rows = _overlap_weights(img.shape[0], out_h)
    cols = _overlap_weights(img.shape[1], out_w)
    return rows @ img @ cols.T


def normalize_silhouette(frame):
    """Binary frame -> (64, 64) float image in [0, 1]."""
    frame = np.asarray(frame)
    ys, xs = np.nonzero(frame)
    if ys.size == 0:
        raise ValueError("cannot normalize an empty silhouette frame")
    crop = frame[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1].astype(np.float64)
    h, w = crop.shape
    scale = GEI_SIZE / h
    out_w = max(1, int(np.floor(w * scale + 0.5)))
    scaled = resize_area(crop, GEI_SIZE, out_w)

    top = scaled[: GEI_SIZE // 2]
    mass = top.sum()
    if mass <= 0.0:
        top = scaled
        mass = top.sum()
    cx = float((top.sum(axis=0) * (np.arange(out_w) + 0.5)).sum() / mass)

    out = np.zeros((GEI_SIZE, GEI_SIZE), dtype=np.float64)
    offset = int(np.floor(GEI_SIZE / 2.0 - cx + 0.5))
    dst0, src0 = max(0, offset), max(0, -offset)
    width = min(GEI_SIZE - dst0, out_w - src0)
    if width <= 0:
        raise ValueError("silhouette centering pushed all foreground off-canvas")
    out[:, dst0 : dst0 + width] = scaled[:, src0 : src0 + width]
    return np.clip(out, 0.0, 1.0)


def compute_gei(seq, origin=ORIGIN_ORIGINAL):
    """Pixelwise mean of the normalized frames over whole gait cycles."""
    seq.validate()
    acc = np.zeros((GEI_SIZE, GEI_SIZE), dtype=np.float64)
    for frame in seq.frames:
        acc += normalize_silhouette(frame)
    acc /= len(seq.frames)
    return GEI(
        pixels=acc.astype(np.float32),
        subject_id=seq.subject_id,
        sequence_id=seq.sequence_id,
        view_deg=float(seq.view_deg),
        origin=origin,
    ).validate()


def pixel_morph(x_p, x_q, alpha):
    """Direct image-space blend alpha * x_p + (1 - alpha) * x_q.

    The view label blends the same way. This is the ghosting-prone baseline
    the latent-space synthesis is compared against.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha={alpha} outside [0, 1]")
    if (x_p.subject_id, x_p.sequence_id) != (x_q.subject_id, x_q.sequence_id):
        raise ValueError("pixel_morph endpoints must share subject and sequence")
    a = np.float64(alpha)
    blend = a * x_p.pixels.astype(np.float64) + (np.float64(1.0) - a) * x_q.pixels.astype(np.float64)
    return GEI(
        pixels=blend.astype(np.float32),
        subject_id=x_p.subject_id,
        sequence_id=x_p.sequence_id,
        view_deg=float(alpha * x_p.view_deg + (1.0 - alpha) * x_q.view_deg),
        origin=ORIGIN_SYNTHESIZED,
    ).validate()


# --- on-disk cache: 8-bit grayscale PNG, value = round(p * 255) ------------
# The round trip is lossy with tolerance 1/255.


def gei_cache_path(cache_dir, subject_id, sequence_id, view_label):
    return Path(cache_dir) / subject_id / sequence_id / f"{view_label}.png"


def save_gei_png(path, g):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.floor(g.pixels.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, optimize=False)


def load_gei_png(path, subject_id, sequence_id, view_deg, origin=ORIGIN_ORIGINAL):
    data = np.asarray(Image.open(path), dtype=np.float32) / np.float32(255.0)
    return GEI(
        pixels=data,
        subject_id=subject_id,
        sequence_id=sequence_id,
        view_deg=float(view_deg),
        origin=origin,
    ).validate()
