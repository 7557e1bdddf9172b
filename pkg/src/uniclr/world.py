"""Deterministic synthetic multimodal world.

Each sample is a concept (class latent, a spatial bit, a hue class) rendered
two ways: an image (smooth latent-driven background plus a solid colored
patch) and a text feature vector (noisy latent, signed spatial bit, hue
one-hot). Augmentations can break the text semantics in measurable ways:

  flip       moves the patch off its described side (only when the spatial bit
             is set; with the bit clear the patch is horizontally centered and
             flip-invariant in meaning)
  grayscale  removes the color the text names
  hue shift  beyond half the hue-class spacing renames the color
  crop       that cuts the patch away removes the described object

The probe below labels a (pair, instruction) combination aligned/misaligned
from these rules, giving the ground truth that full-scale setups lack.

Every pair is regenerable bit-exactly from (seed, index) via an independent
counter-keyed generator.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .augment import IMAGE_DTYPE, AugmentationInstruction, hsv_to_rgb
from .errors import ConfigError, ContractError

MAGIC = b"SYNW"
FORMAT_VERSION = 1

# patch geometry in sixteenths of the frame; bit 0 is horizontally centered
_PATCH_ROWS = (5, 11)
_PATCH_COLS_CENTER = (5, 11)
_PATCH_COLS_RIGHT = (10, 16)
_PATCH_SAT = 0.85
_PATCH_VAL = 0.9
# a crop keeping less than this fraction of the patch counts as removing it
_CROP_KEEP_FRACTION = 0.25


@dataclass(frozen=True)
class WorldConfig:
    n_pairs: int = 2560
    n_classes: int = 8
    latent_dim: int = 8
    n_hues: int = 6
    noise: float = 0.1
    class_spread: float = 0.25  # within-class latent jitter scale
    resolution: tuple[int, int, int] = (3, 16, 16)
    eval_fraction: float = 0.2

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ConfigError("n_pairs must be at least 1")
        if self.n_classes < 2 or self.n_hues < 2 or self.latent_dim < 1:
            raise ConfigError("need at least 2 classes, 2 hues, and a 1-dim latent")
        if self.noise < 0 or self.class_spread < 0:
            raise ConfigError("noise and class_spread must be nonnegative")
        c, h, w = self.resolution
        if c != 3 or h < 8 or w < 8:
            raise ConfigError("resolution must be (3, H>=8, W>=8)")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ConfigError("eval_fraction must be in (0, 1)")

    @property
    def text_dim(self) -> int:
        return self.latent_dim + 1 + self.n_hues


@dataclass(frozen=True)
class Concept:
    latent: np.ndarray
    spatial_bit: int
    hue_class: int
    label: int


@dataclass(frozen=True)
class SyntheticPair:
    index: int
    concept: Concept
    image: np.ndarray  # (3, H, W) in [0, 1]
    text_features: np.ndarray


@lru_cache(maxsize=8)
def _background_basis(latent_dim: int, resolution: tuple[int, int, int]) -> np.ndarray:
    """Fixed projection from latent space to pixel patterns; pure in its args."""
    rng = np.random.default_rng(20240915)
    c, h, w = resolution
    return rng.normal(size=(latent_dim, c, h, w))


def _patch_bounds(spatial_bit: int, resolution) -> tuple[int, int, int, int]:
    _, h, w = resolution
    r0 = int(round(_PATCH_ROWS[0] * h / 16))
    r1 = int(round(_PATCH_ROWS[1] * h / 16))
    if spatial_bit:
        c0 = int(round(_PATCH_COLS_RIGHT[0] * w / 16))
        c1 = w
    else:
        c0 = int(round(_PATCH_COLS_CENTER[0] * w / 16))
        c1 = w - c0  # symmetric window, so flipping cannot move it
    return r0, r1, c0, c1


def patch_rect(spatial_bit: int, resolution) -> tuple[float, float, float, float]:
    """Patch bounding box (x0, y0, x1, y1) in normalized coordinates."""
    _, h, w = resolution
    r0, r1, c0, c1 = _patch_bounds(spatial_bit, resolution)
    return c0 / w, r0 / h, c1 / w, r1 / h


def hue_rgb(hue_class: int, n_hues: int) -> np.ndarray:
    return hsv_to_rgb(np.array([hue_class / n_hues, _PATCH_SAT, _PATCH_VAL]))


def _pair_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def make_pair(cfg: WorldConfig, seed: int, index: int, prototypes: np.ndarray) -> SyntheticPair:
    rng = _pair_rng(seed, index)
    label = int(rng.integers(cfg.n_classes))
    spatial_bit = int(rng.integers(2))
    hue_class = int(rng.integers(cfg.n_hues))
    latent = prototypes[label] + cfg.class_spread * rng.normal(size=cfg.latent_dim)
    concept = Concept(latent=latent, spatial_bit=spatial_bit, hue_class=hue_class, label=label)
    image = render_image(concept, cfg)
    text = np.concatenate(
        [
            latent + cfg.noise * rng.normal(size=cfg.latent_dim),
            [1.0 if spatial_bit else -1.0],
            np.eye(cfg.n_hues)[hue_class],
        ]
    )
    return SyntheticPair(index=index, concept=concept, image=image, text_features=text)


def render_image(concept: Concept, cfg: WorldConfig) -> np.ndarray:
    """Pure rendering: background from the latent, patch from bit and hue."""
    basis = _background_basis(cfg.latent_dim, tuple(cfg.resolution))
    bg = 0.45 + 0.18 * np.tanh(
        np.tensordot(concept.latent, basis, axes=1) / np.sqrt(cfg.latent_dim)
    )
    img = np.clip(bg, 0.0, 1.0)
    r0, r1, c0, c1 = _patch_bounds(concept.spatial_bit, cfg.resolution)
    img[:, r0:r1, c0:c1] = hue_rgb(concept.hue_class, cfg.n_hues)[:, None, None]
    return img.astype(IMAGE_DTYPE)


def class_prototypes(cfg: WorldConfig, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 2**31])
    return rng.normal(size=(cfg.n_classes, cfg.latent_dim))


@dataclass
class SyntheticDataset:
    config: WorldConfig
    seed: int
    train: list[SyntheticPair]
    eval: list[SyntheticPair]
    _stacks: dict = field(default_factory=dict, repr=False)

    def stacked(self, split: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(images, text_features, labels) arrays for a split, cached."""
        if split not in self._stacks:
            pairs = self.train if split == "train" else self.eval
            self._stacks[split] = (
                np.stack([p.image for p in pairs]),
                np.stack([p.text_features for p in pairs]),
                np.array([p.concept.label for p in pairs]),
            )
        return self._stacks[split]


def generate_dataset(cfg: WorldConfig, seed: int) -> SyntheticDataset:
    """Deterministic dataset: pair i depends only on (seed, i); fixed split."""
    protos = class_prototypes(cfg, seed)
    pairs = [make_pair(cfg, seed, i, protos) for i in range(cfg.n_pairs)]
    n_eval = max(1, int(round(cfg.n_pairs * cfg.eval_fraction)))
    if n_eval >= cfg.n_pairs:
        raise ConfigError("n_pairs too small for the eval split")
    return SyntheticDataset(config=cfg, seed=seed, train=pairs[:-n_eval], eval=pairs[-n_eval:])


# -----------------------------------------------------------------------------
# Misalignment probe
# -----------------------------------------------------------------------------


def misalignment_probe(pair: SyntheticPair, instr: AugmentationInstruction) -> str:
    """Label whether an instruction semantically breaks the pair's text.

    Returns "misaligned" iff the instruction flips a side-described patch,
    drops or renames its color, or crops it (almost) entirely away.
    """
    if instr.flipped and pair.concept.spatial_bit == 1:
        return "misaligned"
    if instr.grayscaled:
        return "misaligned"
    n_hues = pair.text_features.size - pair.concept.latent.size - 1
    if abs(instr.jitter[3]) > 1.0 / (2.0 * n_hues):
        return "misaligned"
    x0, y0, x1, y1 = patch_rect(pair.concept.spatial_bit, pair.image.shape)
    cx, cy, cw, ch = instr.crop
    inter_w = max(0.0, min(x1, cx + cw) - max(x0, cx))
    inter_h = max(0.0, min(y1, cy + ch) - max(y0, cy))
    kept = inter_w * inter_h / ((x1 - x0) * (y1 - y0))
    if kept < _CROP_KEEP_FRACTION:
        return "misaligned"
    return "aligned"


# -----------------------------------------------------------------------------
# Flat binary export
# -----------------------------------------------------------------------------


def write_dataset(dataset: SyntheticDataset, fh) -> None:
    """Serialize to the documented flat layout (see README): a fixed header,
    then per split float32 pixels, float32 text features, int32 attributes
    (label, spatial bit, hue class), all row-major little-endian."""
    cfg = dataset.config
    c, h, w = cfg.resolution
    fh.write(
        struct.pack(
            "<4sIIIIIII",
            MAGIC, FORMAT_VERSION, len(dataset.train), len(dataset.eval),
            c, h, w, cfg.text_dim,
        )
    )
    for split in ("train", "eval"):
        images, texts, labels = dataset.stacked(split)
        pairs = dataset.train if split == "train" else dataset.eval
        attrs = np.array(
            [[p.concept.label, p.concept.spatial_bit, p.concept.hue_class] for p in pairs],
            dtype="<i4",
        )
        fh.write(images.astype("<f4").tobytes())
        fh.write(texts.astype("<f4").tobytes())
        fh.write(attrs.tobytes())


def read_dataset_header(fh) -> dict:
    raw = fh.read(struct.calcsize("<4sIIIIIII"))
    magic, version, n_train, n_eval, c, h, w, text_dim = struct.unpack("<4sIIIIIII", raw)
    if magic != MAGIC:
        raise ContractError("not a synthetic-world dump")
    return {
        "version": version, "n_train": n_train, "n_eval": n_eval,
        "resolution": (c, h, w), "text_dim": text_dim,
    }
