"""Patrol-placement GAN and its label-conditioned variant.

Generator: 100-d latent -> 256 -> 512 -> 256 -> 2, batch norm + LeakyReLU
between dense blocks, tanh output. Discriminator: 2 -> 512 -> 256 -> 128
-> 1 with LeakyReLU and dropout 0.3, sigmoid output. Coordinates are
normalized affinely into [-1, 1]^2 from the run's bounding box, so every
generated point lands inside the box by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geodata import BoundingBox, LatLon
from .neuralnet import (Adam, BatchNorm, Dense, Dropout, LeakyReLU, Network,
                        Sigmoid, Tanh, bce_loss, load_checkpoint,
                        save_checkpoint)

LATENT_DIM = 100
GROUP_LABELS = ("Black", "White", "Neither")

# Fraction of generated mass a mode must attract before the run is flagged
# as collapsed onto the other mode.
MODE_COLLAPSE_MIN_SHARE = 0.05


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0


@dataclass
class LossHistory:
    g_loss: list[float] = field(default_factory=list)
    d_loss: list[float] = field(default_factory=list)
    mode_collapsed: bool = False

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,g_loss,d_loss\n")
            for i, (g, d) in enumerate(zip(self.g_loss, self.d_loss)):
                fh.write(f"{i},{g!r},{d!r}\n")


def normalize_coords(p: LatLon, bbox: BoundingBox) -> tuple[float, float]:
    u = 2.0 * (p.lat - bbox.lat_min) / (bbox.lat_max - bbox.lat_min) - 1.0
    v = 2.0 * (p.lon - bbox.lon_min) / (bbox.lon_max - bbox.lon_min) - 1.0
    return u, v


def denormalize_coords(u: float, v: float, bbox: BoundingBox) -> LatLon:
    lat = bbox.lat_min + (u + 1.0) / 2.0 * (bbox.lat_max - bbox.lat_min)
    lon = bbox.lon_min + (v + 1.0) / 2.0 * (bbox.lon_max - bbox.lon_min)
    return LatLon(lat, lon)


def _points_to_array(points, bbox: BoundingBox) -> np.ndarray:
    return np.array([normalize_coords(p, bbox) for p in points], dtype=float)


def _one_hot(labels: list[str]) -> np.ndarray:
    idx = {name: i for i, name in enumerate(GROUP_LABELS)}
    out = np.zeros((len(labels), len(GROUP_LABELS)))
    for row, lab in enumerate(labels):
        out[row, idx[lab]] = 1.0
    return out


class GanModel:
    def __init__(self, bbox: BoundingBox, conditional: bool = False,
                 seed: int = 0):
        self.bbox = bbox
        self.conditional = conditional
        self.label_count = len(GROUP_LABELS) if conditional else 0
        rng = np.random.default_rng(seed)
        g_in = LATENT_DIM + self.label_count
        d_in = 2 + self.label_count
        self.generator = Network([
            Dense(g_in, 256, rng), BatchNorm(256), LeakyReLU(0.2),
            Dense(256, 512, rng), BatchNorm(512), LeakyReLU(0.2),
            Dense(512, 256, rng), BatchNorm(256), LeakyReLU(0.2),
            Dense(256, 2, rng), Tanh(),
        ])
        self.discriminator = Network([
            Dense(d_in, 512, rng), LeakyReLU(0.2), Dropout(0.3),
            Dense(512, 256, rng), LeakyReLU(0.2), Dropout(0.3),
            Dense(256, 128, rng), LeakyReLU(0.2),
            Dense(128, 1, rng), Sigmoid(),
        ])
        self.seed = seed

    def generate_normalized(self, n: int, rng: np.random.Generator,
                            labels: list[str] | None = None) -> np.ndarray:
        """Inference-mode generator pass: running BN stats, no dropout."""
        z = rng.standard_normal((n, LATENT_DIM))
        if self.conditional:
            if labels is None or len(labels) != n:
                raise ValueError("conditional model needs one label per sample")
            z = np.hstack([z, _one_hot(labels)])
        return self.generator.forward(z, training=False)

    def save(self, path: str) -> None:
        save_checkpoint(path, {"generator": self.generator,
                               "discriminator": self.discriminator},
                        meta={"conditional": self.conditional,
                              "seed": self.seed,
                              "bbox": [self.bbox.lat_min, self.bbox.lat_max,
                                       self.bbox.lon_min, self.bbox.lon_max]})

    @classmethod
    def load(cls, path: str) -> "GanModel":
        doc = load_checkpoint(path)
        meta = doc["meta"]
        bbox = BoundingBox(*meta["bbox"])
        model = cls(bbox, conditional=bool(meta["conditional"]),
                    seed=int(meta["seed"]))
        model.generator.load_state(doc["networks"]["generator"])
        model.discriminator.load_state(doc["networks"]["discriminator"])
        return model


def _train_loop(model: GanModel, real: np.ndarray, labels: list[str] | None,
                cfg: TrainConfig) -> LossHistory:
    n = real.shape[0]
    if n == 0:
        raise ValueError("cannot train GAN on empty data")
    batch = cfg.batch_size
    if n < 2 * batch:
        batch = max(2, n // 2)

    rng = np.random.default_rng(cfg.seed)
    g_opt = Adam(model.generator.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    d_opt = Adam(model.discriminator.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    onehot = _one_hot(labels) if labels is not None else None
    # Training-by-sampling for the conditional variant: labels are drawn
    # uniformly over the present groups and real rows resampled within the
    # drawn label, so minority groups are not drowned out by class imbalance.
    if labels is not None:
        label_pools = [np.array([i for i, lab in enumerate(labels) if lab == g])
                       for g in GROUP_LABELS if g in set(labels)]
    history = LossHistory()

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        g_losses, d_losses = [], []
        # Last partial batch dropped: batch norm needs >= 2 rows.
        for start in range(0, n - batch + 1, batch):
            if onehot is not None:
                pools = [label_pools[k] for k in
                         rng.integers(0, len(label_pools), batch)]
                idx = np.array([pool[rng.integers(0, len(pool))]
                                for pool in pools])
            else:
                idx = order[start:start + batch]
            x_real = real[idx]
            cond = onehot[idx] if onehot is not None else None

            # Discriminator step: real batch (target 1) + generated (target 0).
            z = rng.standard_normal((batch, LATENT_DIM))
            g_in = np.hstack([z, cond]) if cond is not None else z
            fake = model.generator.forward(g_in, training=True)
            d_real_in = np.hstack([x_real, cond]) if cond is not None else x_real
            d_fake_in = np.hstack([fake, cond]) if cond is not None else fake

            p_real = model.discriminator.forward(d_real_in, training=True, rng=rng)
            loss_r, grad_r = bce_loss(p_real, np.ones_like(p_real))
            model.discriminator.backward(grad_r)
            grads_r = [g.copy() for g in model.discriminator.gradients()]

            p_fake = model.discriminator.forward(d_fake_in, training=True, rng=rng)
            loss_f, grad_f = bce_loss(p_fake, np.zeros_like(p_fake))
            model.discriminator.backward(grad_f)
            d_opt.step([gr + gf for gr, gf in
                        zip(grads_r, model.discriminator.gradients())])
            d_losses.append(loss_r + loss_f)

            # Generator step: non-saturating loss, maximize log D(G(z)).
            z = rng.standard_normal((batch, LATENT_DIM))
            g_in = np.hstack([z, cond]) if cond is not None else z
            fake = model.generator.forward(g_in, training=True)
            d_in = np.hstack([fake, cond]) if cond is not None else fake
            p = model.discriminator.forward(d_in, training=True, rng=rng)
            g_loss, grad_p = bce_loss(p, np.ones_like(p))
            grad_fake = model.discriminator.backward(grad_p)
            if cond is not None:
                grad_fake = grad_fake[:, :2]
            model.generator.backward(grad_fake)
            g_opt.step(model.generator.gradients())
            g_losses.append(g_loss)

        eg = float(np.mean(g_losses)) if g_losses else float("nan")
        ed = float(np.mean(d_losses)) if d_losses else float("nan")
        if g_losses and not (np.isfinite(eg) and np.isfinite(ed)):
            raise FloatingPointError(f"non-finite GAN loss at epoch {epoch}")
        history.g_loss.append(eg)
        history.d_loss.append(ed)

    history.mode_collapsed = _detect_mode_collapse(model, real, cfg.seed)
    return history


def _detect_mode_collapse(model: GanModel, real: np.ndarray, seed: int) -> bool:
    """Nearest-mode histogram check against a 2-means split of the data.

    Only meaningful when the data itself is bimodal; unimodal data never
    flags because both 'modes' sit close together.
    """
    if real.shape[0] < 4 or model.conditional:
        return False
    rng = np.random.default_rng(seed ^ 0x5EED)
    # Cheap 2-means on the real data.
    centers = real[rng.choice(real.shape[0], 2, replace=False)]
    for _ in range(20):
        d = np.linalg.norm(real[:, None, :] - centers[None, :, :], axis=2)
        assign = d.argmin(axis=1)
        for k in (0, 1):
            if np.any(assign == k):
                centers[k] = real[assign == k].mean(axis=0)
    if np.linalg.norm(centers[0] - centers[1]) < 0.2:
        return False  # effectively unimodal
    sample = model.generate_normalized(500, rng)
    d = np.linalg.norm(sample[:, None, :] - centers[None, :, :], axis=2)
    share = np.bincount(d.argmin(axis=1), minlength=2) / sample.shape[0]
    return bool(share.min() < MODE_COLLAPSE_MIN_SHARE)


def train_gan(points, cfg: TrainConfig, bbox: BoundingBox,
              ) -> tuple[GanModel, LossHistory]:
    """Train the unconditional patrol GAN on incident coordinates."""
    model = GanModel(bbox, conditional=False, seed=cfg.seed)
    data = _points_to_array(points, bbox)
    if cfg.epochs == 0:
        return model, LossHistory()
    history = _train_loop(model, data, None, cfg)
    return model, history


def train_conditional_gan(labeled_points: list[tuple[LatLon, str]],
                          cfg: TrainConfig, bbox: BoundingBox,
                          ) -> tuple[GanModel, LossHistory]:
    """Train the label-conditioned GAN used for debias rebalancing."""
    counts = {lab: 0 for lab in GROUP_LABELS}
    for _, lab in labeled_points:
        if lab not in counts:
            raise ValueError(f"unknown group label: {lab!r}")
        counts[lab] += 1
    missing = [lab for lab, c in counts.items() if c < 2]
    if missing:
        raise ValueError(f"need >= 2 examples per label, missing: {missing}")
    model = GanModel(bbox, conditional=True, seed=cfg.seed)
    data = _points_to_array([p for p, _ in labeled_points], bbox)
    labels = [lab for _, lab in labeled_points]
    if cfg.epochs == 0:
        return model, LossHistory()
    history = _train_loop(model, data, labels, cfg)
    return model, history


def sample_patrol(model: GanModel, n_officers: int,
                  rng: np.random.Generator) -> list[LatLon]:
    """Draw n patrol locations from the generator in inference mode."""
    if n_officers < 1:
        raise ValueError("n_officers must be >= 1")
    out = model.generate_normalized(n_officers, rng)
    return [denormalize_coords(u, v, model.bbox) for u, v in out]


def sample_conditional(model: GanModel, label: str, n: int,
                       rng: np.random.Generator) -> list[LatLon]:
    if not model.conditional:
        raise ValueError("model is not conditional")
    out = model.generate_normalized(n, rng, labels=[label] * n)
    return [denormalize_coords(u, v, model.bbox) for u, v in out]


def rebalance_training_set(real: list[tuple[LatLon, str]], model: GanModel,
                           rng: np.random.Generator,
                           replace_fraction: float = 0.30,
                           ) -> list[tuple[LatLon, str]]:
    """Replace a fraction of real records with group-balanced synthetic ones.

    Output size equals input size; floor(fraction * n) uniformly chosen real
    records are removed and replaced by synthetic records split as equally
    as possible (round-robin) across the three group labels.
    """
    if not model.conditional:
        raise ValueError("rebalancing requires a conditional model")
    if not 0.0 <= replace_fraction < 1.0:
        raise ValueError("replace_fraction must be in [0, 1)")
    n = len(real)
    n_synth = int(replace_fraction * n)
    if n_synth == 0:
        return list(real)
    keep_idx = rng.choice(n, size=n - n_synth, replace=False)
    kept = [real[i] for i in sorted(keep_idx)]
    synth: list[tuple[LatLon, str]] = []
    per_label = [n_synth // len(GROUP_LABELS)] * len(GROUP_LABELS)
    for i in range(n_synth % len(GROUP_LABELS)):
        per_label[i] += 1
    for label, count in zip(GROUP_LABELS, per_label):
        for p in sample_conditional(model, label, count, rng) if count else []:
            synth.append((p, label))
    return kept + synth
