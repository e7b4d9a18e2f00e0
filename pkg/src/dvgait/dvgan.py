"""Three-network GAN for dense-view GEI synthesis.

The generator is a U-Net autoencoder whose first-conv feature map is the
latent space: new views are made by linearly blending the latent codes of
two source views and decoding the blend. A discriminator judges whether a
(reference, candidate) image pair looks real, and a monitor judges whether
the decoded midpoint of two flanking views matches the true middle view,
which is what holds identity and view information together during training.

Images cross the module boundary in [0, 1]; internally they are mapped to
[-1, 1] to meet the generator's tanh output.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numgrad as ng
from .gei import GEI, ORIGIN_SYNTHESIZED

log = logging.getLogger(__name__)

LATENT_DOWNSCALE = 2  # latent spatial extent is input / 2 (one stride-2 conv)

# images are reconstructed as clamp(tanh * OUTPUT_GAIN/2 + 1/2); the small
# over-range lets saturating pixels land exactly on 0 or 1
_OUTPUT_GAIN = 1.05


@dataclass
class LatentCode:
    """First-layer feature map of one GEI plus its provenance labels."""

    tensor: ng.Tensor  # (1, w, 32, 32) for 64x64 inputs
    view_deg: float
    subject_id: str
    sequence_id: str


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lambda_l1: float = 100.0
    w_d: float = 1.0
    w_m: float = 1.0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    theta_prime_deg: float = 18.0
    seed: int = 0
    views: tuple = tuple(float(v) for v in range(0, 181, 18))
    base_width: int = 64

    def validate(self):
        views = [float(v) for v in self.views]
        if len(views) < 3:
            raise ValueError("need at least 3 views to form monitor triples")
        if sorted(views) != views or len(set(views)) != len(views):
            raise ValueError("views must be strictly increasing")
        spacings = {round(b - a, 6) for a, b in zip(views, views[1:])}
        if len(spacings) != 1:
            raise ValueError(f"views must be uniformly spaced, got spacings {sorted(spacings)}")
        spacing = spacings.pop()
        if abs(spacing - self.theta_prime_deg) > 1e-9:
            raise ValueError(
                f"monitor offset {self.theta_prime_deg} must equal the view spacing {spacing}"
            )
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm needs real batches)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        return self

    @property
    def interior_views(self):
        return tuple(self.views[1:-1])

    @property
    def adjacent_pairs(self):
        return tuple((a, b) for a, b in zip(self.views, self.views[1:]))

    def default_alphas(self):
        n = int(round(self.theta_prime_deg))
        return tuple(k / n for k in range(1, n))


class GeneratorNet(ng.Module):
    """U-Net: 6 stride-2 conv stages down to 1x1, 6 deconv stages back up,
    skip connections by channel concatenation. ``encode`` is the first conv
    stage only; ``decode`` runs everything after it, deriving all deeper
    skip features from the latent code itself."""

    def __init__(self, base_width=64, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        w = self.base_width = base_width
        enc = [w, 2 * w, 4 * w, 8 * w, 8 * w, 8 * w]
        conv = lambda ci, co: ng.Conv2d(ci, co, 5, 2, 2, rng, weight_std=0.02, dtype=dtype)
        deconv = lambda ci, co: ng.Deconv2d(ci, co, 5, 2, 2, rng, weight_std=0.02, dtype=dtype)
        self.e1 = conv(1, enc[0])
        self.e2 = conv(enc[0], enc[1])
        self.e3 = conv(enc[1], enc[2])
        self.e4 = conv(enc[2], enc[3])
        self.e5 = conv(enc[3], enc[4])
        self.e6 = conv(enc[4], enc[5])
        self.bn_e = [ng.BatchNorm2d(c, dtype=dtype) for c in enc[1:]]
        # decoder inputs include the concatenated skip from the stage below
        self.d1 = deconv(enc[5], 8 * w)
        self.d2 = deconv(8 * w + enc[4], 8 * w)
        self.d3 = deconv(8 * w + enc[3], 4 * w)
        self.d4 = deconv(4 * w + enc[2], 2 * w)
        self.d5 = deconv(2 * w + enc[1], w)
        self.d6 = deconv(w + enc[0], 1)
        self.bn_d = [ng.BatchNorm2d(c, dtype=dtype) for c in (8 * w, 8 * w, 4 * w, 2 * w, w)]
        self.dtype = dtype
        self.input_hw = 64  # six stride-2 stages require exactly 64 -> 1

    def encode_tensor(self, x):
        """(N,1,64,64) images in [0,1] -> latent feature map after e1."""
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (self.input_hw, self.input_hw):
            raise ValueError(
                f"encode expects (N,1,{self.input_hw},{self.input_hw}) images, got {x.shape}"
            )
        scaled = x * 2.0 - 1.0
        return ng.leaky_relu(self.e1(scaled), 0.2)

    def decode_tensor(self, z):
        """Latent code -> image in [0,1]. Deeper encoder stages are computed
        from z so the code alone determines the output."""
        h2 = ng.leaky_relu(self.bn_e[0](self.e2(z)), 0.2)
        h3 = ng.leaky_relu(self.bn_e[1](self.e3(h2)), 0.2)
        h4 = ng.leaky_relu(self.bn_e[2](self.e4(h3)), 0.2)
        h5 = ng.leaky_relu(self.bn_e[3](self.e5(h4)), 0.2)
        h6 = ng.leaky_relu(self.bn_e[4](self.e6(h5)), 0.2)
        u = ng.relu(self.bn_d[0](self.d1(h6)))
        u = ng.relu(self.bn_d[1](self.d2(ng.concat_channels(u, h5))))
        u = ng.relu(self.bn_d[2](self.d3(ng.concat_channels(u, h4))))
        u = ng.relu(self.bn_d[3](self.d4(ng.concat_channels(u, h3))))
        u = ng.relu(self.bn_d[4](self.d5(ng.concat_channels(u, h2))))
        out = ng.tanh(self.d6(ng.concat_channels(u, z)))
        # slightly over-ranged affine back to [0,1], clamped, so moderate
        # tanh saturation can reach exact black and white instead of
        # carrying a permanent bias on every background pixel
        return ng.clamp(out * (0.5 * _OUTPUT_GAIN) + 0.5, 0.0, 1.0)

    def forward_tensor(self, x):
        return self.decode_tensor(self.encode_tensor(x))

    # GEI-level wrappers -----------------------------------------------
    def encode(self, g):
        x = ng.Tensor(g.pixels[None, None].astype(self.dtype))
        return LatentCode(
            tensor=self.encode_tensor(x),
            view_deg=g.view_deg,
            subject_id=g.subject_id,
            sequence_id=g.sequence_id,
        )

    def decode(self, code):
        out = self.decode_tensor(code.tensor)
        return GEI(
            pixels=out.data[0, 0].astype(np.float32),
            subject_id=code.subject_id,
            sequence_id=code.sequence_id,
            view_deg=code.view_deg,
            origin=ORIGIN_SYNTHESIZED,
        ).validate()


class DiscriminatorNet(ng.Module):
    """Two-conv judge of (reference, candidate) pairs, stacked as 2 input
    channels; the conv stack is reduced to one logit by global average
    pooling plus a single dense unit."""

    def __init__(self, base_width=64, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        w = base_width
        self.conv1 = ng.Conv2d(2, w, 5, 2, 2, rng, weight_std=0.02, dtype=dtype)
        self.conv2 = ng.Conv2d(w, 2 * w, 5, 1, 2, rng, weight_std=0.02, dtype=dtype)
        self.bn = ng.BatchNorm2d(2 * w, dtype=dtype)
        self.head = ng.Dense(2 * w, 1, rng, dtype=dtype)

    def forward_pair(self, reference, candidate):
        """Two (N,1,H,W) images in [0,1] -> (N,1) logits."""
        pair = ng.concat_channels(reference * 2.0 - 1.0, candidate * 2.0 - 1.0)
        h = ng.leaky_relu(self.conv1(pair), 0.2)
        h = ng.leaky_relu(self.bn(self.conv2(h)), 0.2)
        return self.head(ng.global_avg_pool(h))

    def prob_pair(self, reference, candidate):
        """Sigmoid output in (0,1); the training losses stay on logits."""
        return ng.sigmoid(self.forward_pair(reference, candidate))


class MonitorNet(DiscriminatorNet):
    """Same architecture as the discriminator; judges whether a synthesized
    midpoint view matches the true middle view of a triple."""


def interpolate_latent(z_p, z_q, alpha):
    """Exact elementwise blend alpha * z_p + (1 - alpha) * z_q."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha={alpha} outside [0, 1]")
    if z_p.tensor.shape != z_q.tensor.shape:
        raise ValueError(
            f"latent shapes differ: {z_p.tensor.shape} vs {z_q.tensor.shape}"
        )
    blend = z_p.tensor * alpha + z_q.tensor * (1.0 - alpha)
    return LatentCode(
        tensor=blend,
        view_deg=alpha * z_p.view_deg + (1.0 - alpha) * z_q.view_deg,
        subject_id=z_p.subject_id,
        sequence_id=z_p.sequence_id,
    )


def generator_loss(x, x_hat, d_logit, m_logit, config):
    """lambda * L1(x_hat, x) + w_d * bce(d, real) + w_m * bce(m, real).

    Returns (total tensor, components dict of plain floats).
    """
    l1 = ng.l1_loss(x_hat, x)
    adv_d = ng.bce_with_logits(d_logit, np.ones(d_logit.shape, dtype=d_logit.dtype))
    adv_m = ng.bce_with_logits(m_logit, np.ones(m_logit.shape, dtype=m_logit.dtype))
    total = ng.add(
        ng.add(l1 * config.lambda_l1, adv_d * config.w_d),
        adv_m * config.w_m,
    )
    components = {
        "l1": l1.item(),
        "adv_d": adv_d.item(),
        "adv_m": adv_m.item(),
        "total": total.item(),
    }
    return total, components


def _ones_like_logits(logits):
    return np.ones(logits.shape, dtype=logits.dtype)


def _zeros_like_logits(logits):
    return np.zeros(logits.shape, dtype=logits.dtype)


def judge_loss(net, reference, real, fake):
    """bce(net(ref, real), 1) + bce(net(ref, fake), 0)."""
    real_logit = net.forward_pair(reference, real)
    fake_logit = net.forward_pair(reference, fake)
    return ng.add(
        ng.bce_with_logits(real_logit, _ones_like_logits(real_logit)),
        ng.bce_with_logits(fake_logit, _zeros_like_logits(fake_logit)),
    )


def discriminator_step(disc, opt, x_real, x_fake):
    """One optimizer step separating (x, x) pairs from (x, fake) pairs."""
    loss = judge_loss(disc, x_real, x_real, x_fake)
    opt.zero_grad()
    loss.backward()
    opt.step()
    return loss.item()


def synthesize_monitor_mid(gen, x_lo, x_hi):
    """Decoded midpoint of two flanking views (tensor-level, differentiable)."""
    z = gen.encode_tensor(x_lo) * 0.5 + gen.encode_tensor(x_hi) * 0.5
    return gen.decode_tensor(z)


def monitor_step(mon, opt, gen, x_lo, x_mid, x_hi):
    """One optimizer step teaching the monitor to tell (x_mid, x_mid) from
    (x_mid, synthesized midpoint). The generator is not updated here."""
    with ng.no_grad():
        x_hat = synthesize_monitor_mid(gen, x_lo, x_hi)
    fake = ng.Tensor(x_hat.data)
    loss = judge_loss(mon, x_mid, x_mid, fake)
    opt.zero_grad()
    loss.backward()
    opt.step()
    return loss.item()


# --- data plumbing ---------------------------------------------------------


def group_by_sequence(geis):
    """{(subject, sequence): {view_deg: GEI}} with duplicate detection."""
    groups = {}
    for g in geis:
        cell = groups.setdefault((g.subject_id, g.sequence_id), {})
        if g.view_deg in cell:
            raise ValueError(f"duplicate GEI for {g.subject_id}/{g.sequence_id}@{g.view_deg}")
        cell[g.view_deg] = g
    return groups


def require_views(groups, views):
    missing = [
        (subj, seq, v)
        for (subj, seq), cell in sorted(groups.items())
        for v in views
        if v not in cell
    ]
    if missing:
        preview = ", ".join(f"{s}/{q}@{v:g}" for s, q, v in missing[:8])
        raise ValueError(f"{len(missing)} missing corpus views (e.g. {preview})")


def stack_pixels(geis, dtype=np.float32):
    return np.stack([g.pixels for g in geis]).astype(dtype)[:, None]


@dataclass
class LossHistory:
    rows: list = field(default_factory=list)  # dict per iteration

    HEADER = ("epoch", "iter", "L1", "adv_D", "adv_M", "D_loss", "M_loss")

    def append(self, epoch, it, comps, d_loss, m_loss):
        self.rows.append(
            {
                "epoch": epoch,
                "iter": it,
                "L1": comps["l1"],
                "adv_D": comps["adv_d"],
                "adv_M": comps["adv_m"],
                "D_loss": d_loss,
                "M_loss": m_loss,
            }
        )

    def save_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.HEADER)
            for row in self.rows:
                writer.writerow(
                    [row["epoch"], row["iter"]]
                    + [f"{row[k]:.9g}" for k in self.HEADER[2:]]
                )

    def epoch_mean(self, column, epoch):
        vals = [r[column] for r in self.rows if r["epoch"] == epoch]
        return float(np.mean(vals)) if vals else math.nan


def _rng_for(seed, tag):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(tag,)))


def build_networks(config):
    gen = GeneratorNet(config.base_width, _rng_for(config.seed, 1))
    disc = DiscriminatorNet(config.base_width, _rng_for(config.seed, 2))
    mon = MonitorNet(config.base_width, _rng_for(config.seed, 3))
    gen.assign_parameter_names("G")
    disc.assign_parameter_names("D")
    mon.assign_parameter_names("M")
    return gen, disc, mon


def train(geis, config, out_dir=None):
    """Alternating D / M / G optimization over the training GEIs.

    Returns (generator, discriminator, monitor, history). With ``out_dir``
    set, writes generator/discriminator/monitor checkpoints plus
    ``loss_history.csv`` there.
    """
    config.validate()
    groups = group_by_sequence(geis)
    require_views(groups, config.views)
    keys = sorted(groups)
    # triples reference view-list positions so the three views are read back
    # exactly, without float arithmetic on angle labels
    triples = [(key, i) for key in keys for i in range(1, len(config.views) - 1)]
    recon_items = [(key, view) for key in keys for view in config.views]
    if len(triples) < config.batch_size:
        raise ValueError(
            f"{len(triples)} monitor triples cannot fill a batch of {config.batch_size}"
        )

    gen, disc, mon = build_networks(config)
    opt_g = ng.Adam(gen.parameters(), config.lr, config.beta1, config.beta2)
    opt_d = ng.Adam(disc.parameters(), config.lr, config.beta1, config.beta2)
    opt_m = ng.Adam(mon.parameters(), config.lr, config.beta1, config.beta2)
    history = LossHistory()
    rng = _rng_for(config.seed, 4)
    batch = config.batch_size
    iters_per_epoch = len(triples) // batch

    def triple_batch(items, view_offset):
        return stack_pixels(
            [groups[key][config.views[i + view_offset]] for key, i in items]
        )

    try:
        for epoch in range(1, config.epochs + 1):
            perm_t = rng.permutation(len(triples))
            perm_r = rng.permutation(len(recon_items))
            for it in range(iters_per_epoch):
                # iters_per_epoch * batch <= len(triples) <= len(recon_items),
                # so neither slice ever wraps
                tb = [triples[i] for i in perm_t[it * batch : (it + 1) * batch]]
                rb = [recon_items[i] for i in perm_r[it * batch : (it + 1) * batch]]

                x_r = ng.Tensor(stack_pixels([groups[key][view] for key, view in rb]))
                x_lo = ng.Tensor(triple_batch(tb, -1))
                x_mid = ng.Tensor(triple_batch(tb, 0))
                x_hi = ng.Tensor(triple_batch(tb, 1))

                # discriminator: real (x, x) vs fake (x, G(x)) pairs
                with ng.no_grad():
                    fake_r = ng.Tensor(gen.forward_tensor(x_r).data)
                d_loss = discriminator_step(disc, opt_d, x_r, fake_r)

                # monitor: true middle view vs decoded latent midpoint
                m_loss = monitor_step(mon, opt_m, gen, x_lo, x_mid, x_hi)

                # generator: reconstruction plus both adversarial terms
                x_hat = gen.forward_tensor(x_r)
                x_hat_mid = synthesize_monitor_mid(gen, x_lo, x_hi)
                with ng.frozen(disc, mon):
                    d_logit = disc.forward_pair(x_r, x_hat)
                    m_logit = mon.forward_pair(x_mid, x_hat_mid)
                    total, comps = generator_loss(x_r, x_hat, d_logit, m_logit, config)
                    opt_g.zero_grad()
                    total.backward()
                    opt_g.step()

                history.append(epoch, it, comps, d_loss, m_loss)
            log.info(
                "gan epoch %d/%d: L1 %.4f adv_D %.4f adv_M %.4f",
                epoch,
                config.epochs,
                history.epoch_mean("L1", epoch),
                history.epoch_mean("adv_D", epoch),
                history.epoch_mean("adv_M", epoch),
            )
    except FloatingPointError as exc:
        raise RuntimeError(
            f"GAN training diverged (non-finite value) at epoch of iteration "
            f"{len(history.rows)}: {exc}"
        ) from exc

    if out_dir is not None:
        out_dir = Path(out_dir)
        ng.save_checkpoint(out_dir / "generator.dvgw", gen.state_dict("G."))
        ng.save_checkpoint(out_dir / "discriminator.dvgw", disc.state_dict("D."))
        ng.save_checkpoint(out_dir / "monitor.dvgw", mon.state_dict("M."))
        history.save_csv(out_dir / "loss_history.csv")
    return gen, disc, mon, history


def load_generator(path, base_width):
    """Restore a generator checkpoint, ready for eval-mode inference."""
    gen = GeneratorNet(base_width)
    gen.assign_parameter_names("G")
    gen.load_state_dict(ng.load_checkpoint(path), "G.")
    return gen.eval()


def synthesize_dense_set(gen, geis, pairs=None, alphas=None, batch_size=64):
    """Decode latent blends for every adjacent view pair and alpha.

    Returns (synthesized GEIs, skipped pair records). A pair is skipped with
    a warning when a sequence lacks one of its views; skips are recorded so
    the synthesis manifest can note them.
    """
    groups = group_by_sequence(geis)
    views = sorted({g.view_deg for g in geis})
    if pairs is None:
        pairs = list(zip(views, views[1:]))
    if alphas is None:
        spacing = int(round(views[1] - views[0]))
        alphas = [k / spacing for k in range(1, spacing)]
    for alpha in alphas:
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"synthesis alphas must lie strictly inside (0,1), got {alpha}")

    gen.eval()
    skipped = []
    jobs = []  # (key, p, q, alpha)
    for key in sorted(groups):
        cell = groups[key]
        for p, q in pairs:
            if p not in cell or q not in cell:
                skipped.append((key[0], key[1], p, q))
                log.warning("skipping pair (%g, %g) for %s/%s: view missing", p, q, *key)
                continue
            for alpha in alphas:
                jobs.append((key, p, q, alpha))

    out = []
    with ng.no_grad():
        encoded = {}
        for key, p, q, alpha in jobs:
            for v in (p, q):
                if (key, v) not in encoded:
                    encoded[(key, v)] = gen.encode_tensor(
                        ng.Tensor(groups[key][v].pixels[None, None].astype(gen.dtype))
                    ).data
        for start in range(0, len(jobs), batch_size):
            chunk = jobs[start : start + batch_size]
            blends = np.concatenate(
                [
                    alpha * encoded[(key, p)] + (1.0 - alpha) * encoded[(key, q)]
                    for key, p, q, alpha in chunk
                ]
            ).astype(gen.dtype)
            decoded = gen.decode_tensor(ng.Tensor(blends)).data
            for (key, p, q, alpha), img in zip(chunk, decoded):
                out.append(
                    GEI(
                        pixels=img[0].astype(np.float32),
                        subject_id=key[0],
                        sequence_id=key[1],
                        view_deg=round(alpha * p + (1.0 - alpha) * q, 4),
                        origin=ORIGIN_SYNTHESIZED,
                    ).validate()
                )
    return out, skipped
