"""The five networks mapping raw data into the unified embedding space.

  f_aug : 11-dim augmentation encoding -> augmentation embedding (3-layer MLP)
  f_img : flattened pixels -> image representation h (augmentation-agnostic)
  g_img : [h, augmentation embedding] -> unified embedding (residual blocks)
  f_txt : text features -> text representation
  g_txt : text representation -> unified embedding (single linear layer)

`aug_input` controls where the augmentation embedding enters the image path:
  "head"     the projection head sees it (default; encoder stays agnostic)
  "encoder"  it is appended to the encoder input instead (ablation variant)
  "none"     it is dropped entirely (agnostic head baseline)
The head always has an augmentation slot; when awareness is off that slot is
fed zeros, so disabling awareness is a pure input ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .numeric import Linear, Mlp, ResidualBlock
from .augment import ENCODING_DIM, IDENTITY, encode_instruction

AUG_INPUT_MODES = ("head", "encoder", "none")


@dataclass
class EncoderConfig:
    image_pixels: int
    text_dim: int
    repr_width: int = 64
    aug_width: int = 16
    embed_width: int = 32
    image_hidden: int = 96
    text_hidden: int = 48
    text_repr_width: int = 48
    aug_hidden: int = 32
    head_blocks: int = 3
    head_expansion: int = 4
    aug_input: str = "head"

    def __post_init__(self):
        widths = (
            self.image_pixels, self.text_dim, self.repr_width, self.aug_width,
            self.embed_width, self.image_hidden, self.text_hidden,
            self.text_repr_width, self.aug_hidden, self.head_expansion,
        )
        if any(w < 1 for w in widths):
            raise ContractError("all encoder widths must be at least 1")
        if self.head_blocks < 0:
            raise ContractError("head_blocks must be nonnegative")
        if self.aug_input not in AUG_INPUT_MODES:
            raise ContractError(f"aug_input must be one of {AUG_INPUT_MODES}")

    @property
    def head_in_width(self) -> int:
        return self.repr_width + self.aug_width


class ImageHead:
    """Residual blocks over [h, aug] followed by a linear map to embed width."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        w = cfg.head_in_width
        self.blocks = [
            ResidualBlock(f"g_img.block{i}", w, rng, expansion=cfg.head_expansion)
            for i in range(cfg.head_blocks)
        ]
        self.out = Linear("g_img.out", w, cfg.embed_width, rng)

    def forward(self, x: np.ndarray) -> np.ndarray:
        for blk in self.blocks:
            x = blk.forward(x)
        return self.out.forward(x)

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        d = self.out.backward(d_out)
        for blk in reversed(self.blocks):
            d = blk.backward(d)
        return d

    def params(self):
        out = {}
        for blk in self.blocks:
            out.update(blk.params())
        out.update(self.out.params())
        return out

    def grads(self):
        out = {}
        for blk in self.blocks:
            out.update(blk.grads())
        out.update(self.out.grads())
        return out

    def zero_grads(self):
        for blk in self.blocks:
            blk.zero_grads()
        self.out.zero_grads()


class Model:
    """Container wiring the five networks per the configured awareness mode."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.f_aug = Mlp(
            "f_aug", [ENCODING_DIM, cfg.aug_hidden, cfg.aug_hidden, cfg.aug_width], rng
        )
        img_in = cfg.image_pixels + (cfg.aug_width if cfg.aug_input == "encoder" else 0)
        self.f_img = Mlp("f_img", [img_in, cfg.image_hidden, cfg.repr_width], rng)
        self.g_img = ImageHead(cfg, rng)
        self.f_txt = Mlp("f_txt", [cfg.text_dim, cfg.text_hidden, cfg.text_repr_width], rng)
        self.g_txt = Linear("g_txt", cfg.text_repr_width, cfg.embed_width, rng)
        self._img_batch = 0

    # ------------------------------------------------------------------ forward

    def encode_augmentations(self, aug_vecs: np.ndarray) -> np.ndarray:
        if aug_vecs.ndim != 2 or aug_vecs.shape[1] != ENCODING_DIM:
            raise ShapeError(f"expected (B, {ENCODING_DIM}) encodings, got {aug_vecs.shape}")
        return self.f_aug.forward(aug_vecs)

    def image_repr(self, pixels: np.ndarray) -> np.ndarray:
        """Augmentation-agnostic representation h of flattened pixels.

        In the aware-encoder ablation the encoder demands an augmentation
        input, so this evaluation surface feeds it the identity instruction.
        """
        if self.cfg.aug_input == "encoder":
            ident = np.tile(encode_instruction(IDENTITY), (pixels.shape[0], 1))
            a = self.f_aug.forward(ident)
            return self.f_img.forward(np.concatenate([pixels, a], axis=1))
        return self.f_img.forward(pixels)

    def embed_images(self, pixels: np.ndarray, aug_vecs: np.ndarray) -> np.ndarray:
        """Unified image embeddings; caches everything needed for backward."""
        if pixels.ndim != 2 or pixels.shape[1] != self.cfg.image_pixels:
            raise ShapeError(f"expected (B, {self.cfg.image_pixels}) pixels, got {pixels.shape}")
        a = self.encode_augmentations(aug_vecs)
        if self.cfg.aug_input == "encoder":
            h = self.f_img.forward(np.concatenate([pixels, a], axis=1))
        else:
            h = self.f_img.forward(pixels)
        if self.cfg.aug_input == "head":
            head_in = np.concatenate([h, a], axis=1)
        else:
            head_in = np.concatenate([h, np.zeros((h.shape[0], self.cfg.aug_width))], axis=1)
        self._img_batch = pixels.shape[0]
        return self.g_img.forward(head_in)

    def embed_texts(self, feats: np.ndarray) -> np.ndarray:
        if feats.ndim != 2 or feats.shape[1] != self.cfg.text_dim:
            raise ShapeError(f"expected (B, {self.cfg.text_dim}) text features, got {feats.shape}")
        return self.g_txt.forward(self.f_txt.forward(feats))

    # ----------------------------------------------------------------- backward

    def backward_images(self, d_z: np.ndarray) -> None:
        cfg = self.cfg
        d_head_in = self.g_img.backward(d_z)
        d_h = d_head_in[:, : cfg.repr_width]
        d_a = (
            d_head_in[:, cfg.repr_width :]
            if cfg.aug_input == "head"
            else np.zeros((self._img_batch, cfg.aug_width))
        )
        d_enc_in = self.f_img.backward(d_h)
        if cfg.aug_input == "encoder":
            d_a = d_a + d_enc_in[:, cfg.image_pixels :]
        self.f_aug.backward(d_a)

    def backward_texts(self, d_z: np.ndarray) -> None:
        self.f_txt.backward(self.g_txt.backward(d_z))

    # --------------------------------------------------------------- parameters

    def parts(self):
        return (self.f_aug, self.f_img, self.g_img, self.f_txt, self.g_txt)

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for part in self.parts():
            out.update(part.params())
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for part in self.parts():
            out.update(part.grads())
        return out

    def zero_grads(self) -> None:
        for part in self.parts():
            part.zero_grads()
