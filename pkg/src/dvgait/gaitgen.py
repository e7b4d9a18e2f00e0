"""Procedural multi-view walking-silhouette corpus.

An articulated figure (head, torso, two arms, two legs, feet) is built from
3-d capsule segments, driven by phase-locked sinusoidal joint angles, and
projected orthographically at a configurable camera azimuth: 0 deg faces the
walker, 90 deg is the side profile, 180 deg is the rear. Because the
projection is orthographic, the view angle is the only camera parameter, and
ground-truth silhouettes exist at any real-valued view in [0, 180].

Rendering is a pure function of (subject spec, view, phase); sequence-level
jitter (a sub-frame phase offset and per-frame +-1 px translation) is seeded
by (subject seed, sequence id) so sequences of one subject differ while the
whole corpus stays byte-reproducible.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

# Phases are quantized to 2^-20 of a cycle so that wrapped phases (p vs p+1)
# hit bit-identical joint angles.
_PHASE_QUANT = 2**20

# The right limbs reach slightly less far along the walking direction. Gait
# is mildly asymmetric in reality, and without this the two half-cycles of a
# side view would rasterize to identical unions of left/right capsules. The
# scale applies to the z displacement only, so a frontal view (which projects
# x alone, with limb heights even functions of the joint angles) stays
# exactly mirror-symmetric.
_RIGHT_Z_SCALE = 0.88

# Cross-sections are elliptical, not round: a torso is wider than it is deep
# and a head is deeper than it is wide, so silhouette width genuinely depends
# on the camera azimuth (the projected capsule radius interpolates between
# the lateral and anterior radii).
_TORSO_DEPTH_RATIO = 0.58
_HEAD_DEPTH_RATIO = 1.18

# Constant forward lean of the upper body: purely a z offset growing with
# height above the pelvis, visible in profile, invisible head-on.
_FORWARD_LEAN = 0.10

_CANVAS_MARGIN = 6

RATIO_FIELDS = (
    "torso_width_ratio",
    "head_radius_ratio",
    "leg_length_ratio",
    "arm_length_ratio",
)


@dataclass(frozen=True)
class SubjectSpec:
    """Procedural body and stride parameters for one walker identity."""

    subject_id: str
    height_px: float
    torso_width_ratio: float
    head_radius_ratio: float
    leg_length_ratio: float
    arm_length_ratio: float
    stride_amplitude_deg: float
    arm_swing_deg: float
    cadence: float
    rng_seed: int

    def validate(self):
        for name in RATIO_FIELDS:
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{self.subject_id}: {name}={value} outside (0, 1]")
        if not 10.0 <= self.stride_amplitude_deg <= 45.0:
            raise ValueError(
                f"{self.subject_id}: stride_amplitude_deg={self.stride_amplitude_deg} "
                "outside [10, 45]"
            )
        return self


@dataclass
class SilhouetteSequence:
    frames: np.ndarray  # (T, H, W) bool
    view_deg: float
    subject_id: str
    sequence_id: str
    frames_per_cycle: int

    def validate(self):
        if len(self.frames) == 0 or len(self.frames) % self.frames_per_cycle:
            raise ValueError(
                f"{self.subject_id}/{self.sequence_id}: {len(self.frames)} frames is not "
                f"a whole number of {self.frames_per_cycle}-frame cycles"
            )
        for i, frame in enumerate(self.frames):
            if not frame.any():
                raise ValueError(f"{self.subject_id}/{self.sequence_id}: frame {i} is empty")
        return self


def sample_subjects(count, seed, start_index=1):
    """Draw ``count`` mutually distinct subjects (ids 001, 002, ...).

    Two accepted specs always differ by at least 2% (relative) in one of the
    body-ratio fields; colliding draws are rejected and resampled.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(101,)))
    specs = []
    attempts = 0
    while len(specs) < count:
        attempts += 1
        if attempts > 1000 * count:
            raise RuntimeError("subject sampling failed to find distinct body ratios")
        cand = SubjectSpec(
            subject_id=f"{start_index + len(specs):03d}",
            height_px=float(rng.uniform(102.0, 115.0)),
            torso_width_ratio=float(rng.uniform(0.16, 0.24)),
            head_radius_ratio=float(rng.uniform(0.055, 0.075)),
            leg_length_ratio=float(rng.uniform(0.46, 0.54)),
            arm_length_ratio=float(rng.uniform(0.30, 0.38)),
            stride_amplitude_deg=float(rng.uniform(20.0, 38.0)),
            arm_swing_deg=float(rng.uniform(18.0, 40.0)),
            cadence=float(rng.uniform(0.85, 1.15)),
            rng_seed=int(rng.integers(0, 2**63)),
        ).validate()
        if all(_ratios_distinct(cand, other) for other in specs):
            specs.append(cand)
    return specs


def _ratios_distinct(a, b):
    for name in RATIO_FIELDS:
        va, vb = getattr(a, name), getattr(b, name)
        if abs(va - vb) / max(abs(va), abs(vb)) >= 0.02:
            return True
    return False


def _quantize_phase(phase):
    return round((phase % 1.0) * _PHASE_QUANT) / _PHASE_QUANT


def _capsules(spec, phase):
    """3-d capsule segments ((x,y,z) endpoints plus lateral and anterior
    radii) at the given phase.

    Coordinates: x lateral, y up (feet near y=0), z along walking direction.
    """
    h = spec.height_px
    head_r = spec.head_radius_ratio * h
    torso_r = spec.torso_width_ratio * h / 2.0
    pelvis_y = spec.leg_length_ratio * h
    neck_y = h - 2.0 * head_r - 0.01 * h
    bob = 0.01 * h * math.sin(4.0 * math.pi * phase)

    def lean(y):
        return _FORWARD_LEAN * max(0.0, y - pelvis_y)

    caps = []
    # head and torso
    head_y = h - head_r + bob
    caps.append(((0.0, head_y, lean(head_y)), (0.0, head_y, lean(head_y)), head_r, head_r * _HEAD_DEPTH_RATIO))
    caps.append(
        (
            (0.0, pelvis_y, 0.0),
            (0.0, neck_y + bob, lean(neck_y + bob)),
            torso_r,
            torso_r * _TORSO_DEPTH_RATIO,
        )
    )

    thigh_len = 0.54 * pelvis_y
    shank_len = 0.46 * pelvis_y
    hip_dx = 0.55 * torso_r
    stride = math.radians(spec.stride_amplitude_deg)
    knee_amp = 0.55 * stride

    for side, leg_phase, z_scale in (
        (-1.0, phase, 1.0),
        (1.0, phase + 0.5, _RIGHT_Z_SCALE),
    ):
        hip_ang = stride * math.sin(2.0 * math.pi * leg_phase)
        # knees flex twice per cycle (stance flexion plus swing flexion);
        # with the half-cycle period both knees agree at every instant
        knee_flex = knee_amp * 0.5 * (1.0 - math.cos(4.0 * math.pi * leg_phase))
        hip = (side * hip_dx, pelvis_y, 0.0)
        # vertical drops are even in the hip angle and shared between legs,
        # which keeps the frontal projection exactly mirror-symmetric
        knee = (
            hip[0],
            hip[1] - thigh_len * math.cos(hip_ang),
            hip[2] + thigh_len * math.sin(hip_ang) * z_scale,
        )
        ankle = (
            knee[0],
            knee[1] - shank_len * math.cos(hip_ang) * math.cos(knee_flex),
            knee[2] + shank_len * math.sin(hip_ang - knee_flex) * z_scale,
        )
        toe = (ankle[0], ankle[1] - 0.012 * h, ankle[2] + 0.055 * h * z_scale)
        caps.append((hip, knee, 0.040 * h, 0.040 * h))
        caps.append((knee, ankle, 0.030 * h, 0.030 * h))
        caps.append((ankle, toe, 0.018 * h, 0.018 * h))

    shoulder_y = neck_y - 0.02 * h + bob
    shoulder_dx = 0.9 * torso_r
    arm_len = spec.arm_length_ratio * h
    upper_len = 0.55 * arm_len
    fore_len = 0.45 * arm_len
    swing = math.radians(spec.arm_swing_deg)
    elbow_bend = math.radians(25.0)

    for side, arm_phase, z_scale in (
        (-1.0, phase + 0.5, 1.0),
        (1.0, phase, _RIGHT_Z_SCALE),
    ):
        arm_ang = swing * math.sin(2.0 * math.pi * arm_phase)
        shoulder = (side * shoulder_dx, shoulder_y, lean(shoulder_y))
        elbow = (
            shoulder[0],
            shoulder[1] - upper_len * math.cos(arm_ang),
            shoulder[2] + upper_len * math.sin(arm_ang) * z_scale,
        )
        hand = (
            elbow[0],
            elbow[1] - fore_len * math.cos(arm_ang) * math.cos(elbow_bend),
            elbow[2] + fore_len * math.sin(arm_ang + elbow_bend) * z_scale,
        )
        caps.append((shoulder, elbow, 0.024 * h, 0.024 * h))
        caps.append((elbow, hand, 0.020 * h, 0.020 * h))

    return caps


def render_silhouette(spec, view_deg, phase, canvas=(128, 128)):
    """Rasterize the walker at camera azimuth ``view_deg`` and gait ``phase``.

    Returns a (H, W) boolean image. Deterministic in all arguments.
    """
    if not 0.0 <= view_deg <= 180.0:
        raise ValueError(f"view_deg={view_deg} outside [0, 180]")
    ch, cw = int(canvas[0]), int(canvas[1])
    if ch <= 0 or cw <= 0:
        raise ValueError(f"empty canvas {canvas}")
    # leave room for the bottom margin plus vertical bob and jitter on top
    if spec.height_px * 1.01 + _CANVAS_MARGIN + 3 > ch:
        raise ValueError(
            f"{spec.subject_id}: height {spec.height_px} does not fit canvas of {ch} rows"
        )
    phase = _quantize_phase(phase)
    theta = math.radians(view_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cx = cw / 2.0
    ground = float(ch - _CANVAS_MARGIN)

    mask = np.zeros((ch, cw), dtype=bool)
    for p0, p1, r_lat, r_ant in _capsules(spec, phase):
        ax = cx + (p0[0] * cos_t - p0[2] * sin_t)
        ay = ground - p0[1]
        bx = cx + (p1[0] * cos_t - p1[2] * sin_t)
        by = ground - p1[1]
        radius = math.sqrt((r_lat * cos_t) ** 2 + (r_ant * sin_t) ** 2)
        _stamp_capsule(mask, ax, ay, bx, by, radius)
    return mask


def _stamp_capsule(mask, ax, ay, bx, by, radius):
    h, w = mask.shape
    r0 = max(0, int(math.floor(min(ay, by) - radius - 1)))
    r1 = min(h, int(math.ceil(max(ay, by) + radius + 1)))
    c0 = max(0, int(math.floor(min(ax, bx) - radius - 1)))
    c1 = min(w, int(math.ceil(max(ax, bx) + radius + 1)))
    if r0 >= r1 or c0 >= c1:
        return
    py = np.arange(r0, r1, dtype=np.float64)[:, None] + 0.5
    px = np.arange(c0, c1, dtype=np.float64)[None, :] + 0.5
    wx, wy = bx - ax, by - ay
    seg_len2 = wx * wx + wy * wy
    if seg_len2 < 1e-12:
        dx, dy = px - ax, py - ay
    else:
        t = np.clip(((px - ax) * wx + (py - ay) * wy) / seg_len2, 0.0, 1.0)
        dx = px - (ax + t * wx)
        dy = py - (ay + t * wy)
    mask[r0:r1, c0:c1] |= dx * dx + dy * dy <= radius * radius


def _shift_frame(frame, dx, dy):
    out = np.zeros_like(frame)
    h, w = frame.shape
    src_r = slice(max(0, -dy), min(h, h - dy))
    dst_r = slice(max(0, dy), min(h, h + dy))
    src_c = slice(max(0, -dx), min(w, w - dx))
    dst_c = slice(max(0, dx), min(w, w + dx))
    out[dst_r, dst_c] = frame[src_r, src_c]
    return out


def _sequence_key(sequence_id):
    digest = hashlib.blake2s(sequence_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def generate_sequence(spec, view_deg, sequence_id, cycles=1, frames_per_cycle=16, canvas=(128, 128)):
    """Render one walking sequence at uniform phases over whole gait cycles."""
    if cycles < 1:
        raise ValueError(f"cycles must be >= 1, got {cycles}")
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=spec.rng_seed, spawn_key=(_sequence_key(sequence_id),))
    )
    phase0 = float(rng.uniform(0.0, 1.0 / frames_per_cycle))
    frames = []
    for i in range(cycles * frames_per_cycle):
        base = render_silhouette(spec, view_deg, phase0 + i / frames_per_cycle, canvas)
        dx = int(rng.integers(-1, 2))
        dy = int(rng.integers(-1, 2))
        frames.append(_shift_frame(base, dx, dy))
    return SilhouetteSequence(
        frames=np.stack(frames),
        view_deg=float(view_deg),
        subject_id=spec.subject_id,
        sequence_id=sequence_id,
        frames_per_cycle=frames_per_cycle,
    ).validate()


def format_view(view_deg):
    """Canonical directory/manifest label for a view angle."""
    return f"{float(view_deg):g}"


@dataclass
class ManifestRow:
    subject_id: str
    sequence_id: str
    view_label: str
    frame_count: int

    @property
    def view_deg(self):
        return float(self.view_label)


def sequence_dir(corpus_dir, subject_id, sequence_id, view_label):
    return Path(corpus_dir) / subject_id / sequence_id / view_label


def build_corpus(specs, views, sequences_per_subject, out_dir, cycles=1, frames_per_cycle=16, canvas=(128, 128)):
    """Render and write the full corpus; returns the manifest path.

    Layout: ``<out>/<subject>/<seq>/<view>/frame-%04d.png`` with 1-bit PNG
    frames, plus ``manifest.txt`` with one
    ``subject<TAB>sequence<TAB>view<TAB>frame_count`` row per cell.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for spec in specs:
        for s in range(1, sequences_per_subject + 1):
            sequence_id = f"nm{s:02d}"
            for view in views:
                label = format_view(view)
                seq = generate_sequence(spec, view, sequence_id, cycles, frames_per_cycle, canvas)
                cell = sequence_dir(out_dir, spec.subject_id, sequence_id, label)
                cell.mkdir(parents=True, exist_ok=True)
                for i, frame in enumerate(seq.frames):
                    _save_binary_png(cell / f"frame-{i:04d}.png", frame)
                rows.append(ManifestRow(spec.subject_id, sequence_id, label, len(seq.frames)))
    manifest = out_dir / "manifest.txt"
    with open(manifest, "w") as fh:
        for row in rows:
            fh.write(f"{row.subject_id}\t{row.sequence_id}\t{row.view_label}\t{row.frame_count}\n")
    return manifest


def parse_manifest(path):
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
        rows.append(ManifestRow(parts[0], parts[1], parts[2], int(parts[3])))
    return rows


def load_sequence(corpus_dir, row, frames_per_cycle=None):
    """Read one manifest cell back from disk.

    External silhouette directories use the same layout; when no
    ``frames_per_cycle`` is known the whole sequence is treated as one cycle
    (external data is assumed pre-trimmed to whole cycles).
    """
    cell = sequence_dir(corpus_dir, row.subject_id, row.sequence_id, row.view_label)
    frames = []
    for i in range(row.frame_count):
        path = cell / f"frame-{i:04d}.png"
        if not path.exists():
            raise FileNotFoundError(f"missing frame listed in manifest: {path}")
        frames.append(np.asarray(Image.open(path)).astype(bool))
    return SilhouetteSequence(
        frames=np.stack(frames),
        view_deg=row.view_deg,
        subject_id=row.subject_id,
        sequence_id=row.sequence_id,
        frames_per_cycle=frames_per_cycle or row.frame_count,
    ).validate()


def _save_binary_png(path, frame):
    img = Image.fromarray(frame.astype(np.uint8) * 255, mode="L").convert("1")
    img.save(path, optimize=False)
