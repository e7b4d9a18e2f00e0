"""View-invariant feature CNN: a residual conv stack producing a 512-d
embedding, trained with softmax plus center loss so embeddings cluster by
subject regardless of view. The classification head only exists for
training; recognition uses the embedding."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numgrad as ng

log = logging.getLogger(__name__)


@dataclass
class FeatConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    gamma_center: float = 0.008
    eta_center: float = 0.5
    base_width: int = 32
    embedding_dim: int = 512
    seed: int = 0

    def validate(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 < self.eta_center <= 1.0:
            raise ValueError("eta_center must lie in (0, 1]")
        return self


class FeatureNet(ng.Module):
    """Ten 3x3 convs with PReLU, two 2x2 pools, and three residual sums
    (pool1+conv4, pool2+conv7, that sum+conv9), flattened into a dense
    embedding. All convs are stride 1, padding 1, so the residual shapes
    match by construction."""

    def __init__(self, num_classes, base_width=32, embedding_dim=512, input_hw=64, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        w = base_width
        if input_hw % 4:
            raise ValueError("input extent must be divisible by 4 (two 2x2 pools)")
        conv = lambda ci, co: ng.Conv2d(ci, co, 3, 1, 1, rng, dtype=dtype)
        widths = [w, 2 * w, 2 * w, 2 * w, 4 * w, 4 * w, 4 * w, 4 * w, 4 * w, 4 * w]
        ins = [1] + widths[:-1]
        self.convs = [conv(ci, co) for ci, co in zip(ins, widths)]
        self.acts = [ng.PReLU(co, dtype=dtype) for co in widths]
        # residual sums need channel-matched operands
        assert widths[3] == widths[1] and widths[6] == widths[4] and widths[8] == widths[6]
        feat_hw = input_hw // 4
        self.fc = ng.Dense(widths[-1] * feat_hw * feat_hw, embedding_dim, rng, dtype=dtype)
        self.head = ng.Dense(embedding_dim, num_classes, rng, dtype=dtype)
        self.num_classes = num_classes
        self.embedding_dim = embedding_dim
        self.input_hw = input_hw
        self.dtype = dtype

    def forward_tensor(self, x):
        """(N,1,H,W) GEIs in [0,1] -> (embedding (N,512), logits (N,K))."""
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != self.input_hw:
            raise ValueError(f"expected (N,1,{self.input_hw},{self.input_hw}) input, got {x.shape}")
        a, c = self.acts, self.convs
        h = a[0](c[0](x))
        h = a[1](c[1](h))
        p1 = ng.maxpool2x2(h)
        h = a[2](c[2](p1))
        h = a[3](c[3](h))
        e1 = ng.add(p1, h)
        h = a[4](c[4](e1))
        p2 = ng.maxpool2x2(h)
        h = a[5](c[5](p2))
        h = a[6](c[6](h))
        e2 = ng.add(p2, h)
        h = a[7](c[7](e2))
        h = a[8](c[8](h))
        e3 = ng.add(e2, h)
        h = a[9](c[9](e3))
        emb = self.fc(ng.flatten(h))
        return emb, self.head(emb)


def multi_loss(embeddings, logits, labels, centers, gamma=0.008):
    """Softmax cross-entropy plus (gamma/2) * sum ||embedding - center||^2."""
    ce = ng.softmax_ce(logits, labels)
    cl = ng.center_loss(embeddings, labels, centers, gamma)
    total = ng.add(ce, cl)
    return total, {"softmax": ce.item(), "center": cl.item(), "total": total.item()}


def update_centers(embeddings, labels, centers, eta=0.5):
    """Pull each present class center halfway toward its batch mean:
    c <- c + eta * (batch_mean - c). Absent classes never move."""
    embeddings = np.asarray(embeddings)
    labels = np.asarray(labels)
    for cls in np.unique(labels):
        batch_mean = embeddings[labels == cls].mean(axis=0)
        centers[cls] += eta * (batch_mean - centers[cls])
    return centers


@dataclass
class FeatHistory:
    rows: list = field(default_factory=list)

    HEADER = ("epoch", "loss", "softmax", "center", "accuracy")

    def append(self, epoch, loss, softmax, center, accuracy):
        self.rows.append(
            {"epoch": epoch, "loss": loss, "softmax": softmax, "center": center, "accuracy": accuracy}
        )

    def save_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.HEADER) + "\n")
            for r in self.rows:
                fh.write(
                    f"{r['epoch']},{r['loss']:.9g},{r['softmax']:.9g},"
                    f"{r['center']:.9g},{r['accuracy']:.9g}\n"
                )


def class_index(geis):
    """Stable subject -> class id mapping (sorted by subject id)."""
    return {sid: i for i, sid in enumerate(sorted({g.subject_id for g in geis}))}


def _pixels_and_labels(geis, classes, dtype):
    x = np.stack([g.pixels for g in geis]).astype(dtype)[:, None]
    y = np.array([classes[g.subject_id] for g in geis])
    return x, y


def train_features(originals, config, synthesized=None, out_dir=None):
    """Train the feature CNN on original GEIs, optionally mixed 1:1 per
    batch with synthesized GEIs (which carry their source subject's label).

    Epoch length is driven by the originals count in both modes, so an
    originals-only run and a densified run take the same number of
    optimizer steps. Returns (net, centers, classes, history).
    """
    config.validate()
    if not originals:
        raise ValueError("no training GEIs")
    classes = class_index(originals)
    if synthesized:
        unknown = {g.subject_id for g in synthesized} - set(classes)
        if unknown:
            raise ValueError(f"synthesized GEIs of subjects outside the train set: {sorted(unknown)}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(11,)))
    net = FeatureNet(
        num_classes=len(classes),
        base_width=config.base_width,
        embedding_dim=config.embedding_dim,
        rng=np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(12,))),
    )
    net.assign_parameter_names("F")
    opt = ng.Adam(net.parameters(), config.lr, config.beta1, config.beta2)
    centers = np.zeros((len(classes), config.embedding_dim), dtype=np.float32)
    history = FeatHistory()

    x_orig, y_orig = _pixels_and_labels(originals, classes, net.dtype)
    x_syn = y_syn = None
    if synthesized:
        x_syn, y_syn = _pixels_and_labels(synthesized, classes, net.dtype)

    batch = config.batch_size
    half = batch // 2
    # an epoch walks every original exactly once in both modes; densified
    # batches are half originals, half sampled synthesized views, so they
    # take twice as many steps to cover the originals
    steps = max(1, len(originals) // (half if x_syn is not None else batch))

    try:
        for epoch in range(1, config.epochs + 1):
            perm = rng.permutation(len(originals))
            losses, softmaxes, centers_c, hits, seen = [], [], [], 0, 0
            for it in range(steps):
                if x_syn is None:
                    idx = perm[it * batch : (it + 1) * batch]
                    xb, yb = x_orig[idx], y_orig[idx]
                else:
                    idx = perm[it * half : (it + 1) * half]
                    sidx = rng.integers(0, len(x_syn), size=batch - half)
                    xb = np.concatenate([x_orig[idx], x_syn[sidx]])
                    yb = np.concatenate([y_orig[idx], y_syn[sidx]])
                if len(xb) < 2:
                    continue
                emb, logits = net.forward_tensor(ng.Tensor(xb))
                total, comps = multi_loss(emb, logits, yb, centers, config.gamma_center)
                opt.zero_grad()
                total.backward()
                opt.step()
                update_centers(emb.data, yb, centers, config.eta_center)
                losses.append(comps["total"])
                softmaxes.append(comps["softmax"])
                centers_c.append(comps["center"])
                hits += int((logits.data.argmax(axis=1) == yb).sum())
                seen += len(yb)
            history.append(
                epoch,
                float(np.mean(losses)),
                float(np.mean(softmaxes)),
                float(np.mean(centers_c)),
                hits / max(seen, 1),
            )
            log.info(
                "cnn epoch %d/%d: loss %.4f acc %.3f",
                epoch, config.epochs, history.rows[-1]["loss"], history.rows[-1]["accuracy"],
            )
    except FloatingPointError as exc:
        raise RuntimeError(f"feature training diverged (non-finite value): {exc}") from exc

    if out_dir is not None:
        out_dir = Path(out_dir)
        ng.save_checkpoint(out_dir / "featnet.dvgw", net.state_dict("F."))
        history.save_csv(out_dir / "history.csv")
    return net, centers, classes, history


def load_feature_net(path, num_classes, base_width, embedding_dim=512):
    """Restore a feature-CNN checkpoint, ready for eval-mode inference."""
    net = FeatureNet(num_classes=num_classes, base_width=base_width, embedding_dim=embedding_dim)
    net.assign_parameter_names("F")
    net.load_state_dict(ng.load_checkpoint(path), "F.")
    return net.eval()


@dataclass
class Embedding:
    vector: np.ndarray  # (embedding_dim,) float32
    subject_id: str
    sequence_id: str
    view_deg: float
    origin: str

    def validate(self):
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("non-finite embedding")
        return self


def extract(net, geis, batch_size=64):
    """Eval-mode embeddings for a list of GEIs (order preserved)."""
    net.eval()
    out = []
    with ng.no_grad():
        for start in range(0, len(geis), batch_size):
            chunk = geis[start : start + batch_size]
            x = np.stack([g.pixels for g in chunk]).astype(net.dtype)[:, None]
            emb, _ = net.forward_tensor(ng.Tensor(x))
            for g, vec in zip(chunk, emb.data):
                out.append(
                    Embedding(
                        vector=vec.astype(np.float32),
                        subject_id=g.subject_id,
                        sequence_id=g.sequence_id,
                        view_deg=g.view_deg,
                        origin=g.origin,
                    ).validate()
                )
    return out


def write_embeddings_csv(path, embeddings):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dim = len(embeddings[0].vector) if embeddings else 0
    with open(path, "w", newline="") as fh:
        fh.write("subject,sequence,view,origin," + ",".join(f"f{i}" for i in range(dim)) + "\n")
        for e in embeddings:
            values = ",".join(f"{v:.7g}" for v in e.vector)
            fh.write(f"{e.subject_id},{e.sequence_id},{e.view_deg:g},{e.origin},{values}\n")
