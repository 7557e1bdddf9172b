"""Image augmentation instructions: sampling, encoding, and application.

An instruction records the parameters of one composite augmentation
(crop+resize, color jitter, gaussian blur, horizontal flip, grayscale) and
encodes to a fixed 11-dimensional vector:

    [x, y, w, h, d_bright, d_contrast, d_sat, d_hue, sigma, flip, gray]

Unapplied transforms take identity parameters (full-frame crop, zero jitter
offsets, sigma 0, flags 0), so the identity instruction encodes to
[0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0].

Images are float arrays of shape (3, H, W) with values in [0, 1]. Transforms
apply in the fixed order crop -> jitter -> blur -> flip -> gray; each stage
clamps back to [0, 1]. `apply_batch` is the single implementation;
`apply_augmentation` is its single-image view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError

ENCODING_DIM = 11

# images are float32 throughout; instruction encodings stay float64
IMAGE_DTYPE = np.float32

LUMA = np.array([0.299, 0.587, 0.114], dtype=IMAGE_DTYPE)

# blur kernel radius is ceil(3*sigma), capped so the kernel never exceeds 11 taps
_MAX_BLUR_RADIUS = 5


@dataclass(frozen=True)
class AugmentationInstruction:
    """Parameters of one sampled composite augmentation."""

    crop: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)  # x, y, w, h
    jitter: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)  # signed offsets
    blur_sigma: float = 0.0
    flipped: int = 0
    grayscaled: int = 0

    def __post_init__(self):
        x, y, w, h = self.crop
        tol = 1e-9
        if not (0.0 <= x and 0.0 <= y and w > 0.0 and h > 0.0):
            raise ContractError(f"invalid crop window {self.crop}")
        if x + w > 1.0 + tol or y + h > 1.0 + tol:
            raise ContractError(f"crop window {self.crop} exceeds the unit square")
        if self.blur_sigma < 0.0:
            raise ContractError("blur sigma must be nonnegative")
        if self.flipped not in (0, 1) or self.grayscaled not in (0, 1):
            raise ContractError("flip/gray flags must be 0 or 1")

    @property
    def is_identity(self) -> bool:
        return (
            self.crop == (0.0, 0.0, 1.0, 1.0)
            and self.jitter == (0.0, 0.0, 0.0, 0.0)
            and self.blur_sigma == 0.0
            and self.flipped == 0
            and self.grayscaled == 0
        )


IDENTITY = AugmentationInstruction()


def encode_instruction(instr: AugmentationInstruction) -> np.ndarray:
    """Fixed 11-dim encoding; total and injective on the recorded fields."""
    return np.array(
        [*instr.crop, *instr.jitter, instr.blur_sigma, instr.flipped, instr.grayscaled],
        dtype=float,
    )


def encode_batch(instrs) -> np.ndarray:
    return np.stack([encode_instruction(a) for a in instrs])


@dataclass(frozen=True)
class AugmentationPolicy:
    """Sampling distribution over instructions, Table-style weak/strong configs."""

    strength: str  # "weak" | "strong"
    crop_scale: tuple[float, float] = (0.5, 1.0)
    crop_ratio: tuple[float, float] = (0.75, 4.0 / 3.0)
    crop_prob: float = 1.0
    jitter_prob: float = 0.8
    jitter_magnitudes: tuple[float, float, float, float] = (0.4, 0.4, 0.4, 0.1)
    blur_prob: float = 0.5
    blur_sigma_range: tuple[float, float] = (0.1, 2.0)
    flip_prob: float = 0.0
    gray_prob: float = 0.0

    def __post_init__(self):
        for p in (self.crop_prob, self.jitter_prob, self.blur_prob, self.flip_prob, self.gray_prob):
            if not 0.0 <= p <= 1.0:
                raise ContractError(f"probability {p} outside [0, 1]")
        for lo, hi in (self.crop_scale, self.crop_ratio, self.blur_sigma_range):
            if not (0.0 < lo <= hi):
                raise ContractError(f"range ({lo}, {hi}) is empty or nonpositive")
        if self.crop_scale[1] > 1.0:
            raise ContractError("crop scale cannot exceed the full frame")
        if self.strength == "weak" and (self.flip_prob > 0 or self.gray_prob > 0):
            raise ContractError("weak policy must not flip or grayscale")
        if self.strength not in ("weak", "strong"):
            raise ContractError(f"unknown policy strength {self.strength!r}")


def weak_policy() -> AugmentationPolicy:
    return AugmentationPolicy(strength="weak", crop_scale=(0.5, 1.0))


def strong_policy() -> AugmentationPolicy:
    return AugmentationPolicy(
        strength="strong", crop_scale=(0.08, 1.0), flip_prob=0.5, gray_prob=0.2
    )


def _sample_crop(policy: AugmentationPolicy, rng: np.random.Generator):
    """Area-scale + aspect-ratio crop sampling with a square fallback."""
    scale = rng.uniform(*policy.crop_scale)
    log_lo, log_hi = math.log(policy.crop_ratio[0]), math.log(policy.crop_ratio[1])
    w = h = None
    for _ in range(10):
        aspect = math.exp(rng.uniform(log_lo, log_hi))
        cand_w = math.sqrt(scale * aspect)
        cand_h = math.sqrt(scale / aspect)
        if cand_w <= 1.0 and cand_h <= 1.0:
            w, h = cand_w, cand_h
            break
    if w is None:
        w = h = math.sqrt(scale)
    x = rng.uniform(0.0, 1.0 - w) if w < 1.0 else 0.0
    y = rng.uniform(0.0, 1.0 - h) if h < 1.0 else 0.0
    return x, y, w, h


def sample_instruction(
    policy: AugmentationPolicy, rng: np.random.Generator
) -> AugmentationInstruction:
    """Draw one instruction; unapplied transforms keep identity parameters.

    Consumes randomness in a fixed order (crop, jitter, blur, flip, gray) so a
    given generator state always yields the same instruction.
    """
    crop = (0.0, 0.0, 1.0, 1.0)
    if rng.random() < policy.crop_prob:
        crop = _sample_crop(policy, rng)
    jitter = (0.0, 0.0, 0.0, 0.0)
    if rng.random() < policy.jitter_prob:
        jitter = tuple(rng.uniform(-m, m) for m in policy.jitter_magnitudes)
    sigma = 0.0
    if rng.random() < policy.blur_prob:
        sigma = rng.uniform(*policy.blur_sigma_range)
    flipped = 1 if rng.random() < policy.flip_prob else 0
    grayscaled = 1 if rng.random() < policy.gray_prob else 0
    return AugmentationInstruction(
        crop=crop, jitter=jitter, blur_sigma=sigma, flipped=flipped, grayscaled=grayscaled
    )


# -----------------------------------------------------------------------------
# Application
# -----------------------------------------------------------------------------


def check_image(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"expected image of shape (3, H, W), got {img.shape}")


def _bilinear_crop_resize(imgs: np.ndarray, crops: np.ndarray) -> np.ndarray:
    """Crop each image to its normalized window and resample back to full size.

    imgs: (B, H, W, C). The full-frame window reproduces the input exactly
    (half-pixel-center sampling lands on integer coordinates).
    """
    b, hh, ww, _ = imgs.shape
    x, y, w, h = crops[:, 0], crops[:, 1], crops[:, 2], crops[:, 3]
    cols = np.arange(ww, dtype=imgs.dtype) + imgs.dtype.type(0.5)
    rows = np.arange(hh, dtype=imgs.dtype) + imgs.dtype.type(0.5)
    xs = (x[:, None] + w[:, None] * cols / ww) * ww - 0.5  # (B, W)
    ys = (y[:, None] + h[:, None] * rows / hh) * hh - 0.5  # (B, H)

    def split(coords, limit):
        base = np.floor(coords)
        frac = coords - base
        i0 = np.clip(base, 0, limit - 1).astype(np.int64)
        i1 = np.clip(base + 1, 0, limit - 1).astype(np.int64)
        return i0, i1, frac

    x0, x1, fx = split(xs, ww)
    y0, y1, fy = split(ys, hh)
    # flat gather: one index array per corner is much faster than 3-axis fancy
    # indexing at these sizes
    flat = imgs.reshape(b * hh * ww, -1)
    base = (np.arange(b) * hh)[:, None, None]
    row0 = (base + y0[:, :, None]) * ww
    row1 = (base + y1[:, :, None]) * ww
    v00 = flat[row0 + x0[:, None, :]]
    v01 = flat[row0 + x1[:, None, :]]
    v10 = flat[row1 + x0[:, None, :]]
    v11 = flat[row1 + x1[:, None, :]]
    fxb = fx[:, None, :, None]
    fyb = fy[:, :, None, None]
    top = v00 * (1.0 - fxb) + v01 * fxb
    bot = v10 * (1.0 - fxb) + v11 * fxb
    return top * (1.0 - fyb) + bot * fyb


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorized RGB->HSV on (..., 3) arrays with values in [0, 1]."""
    r, g, bl = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    spread = maxc - minc
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(maxc > 0, spread / maxc, 0.0)
        rc = np.where(spread > 0, (maxc - r) / spread, 0.0)
        gc = np.where(spread > 0, (maxc - g) / spread, 0.0)
        bc = np.where(spread > 0, (maxc - bl) / spread, 0.0)
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(spread > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Vectorized HSV->RGB inverse of rgb_to_hsv."""
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    choices_r = [v, q, p, p, t, v]
    choices_g = [t, v, v, q, p, p]
    choices_b = [p, p, t, v, v, q]
    r = np.select([i == k for k in range(6)], choices_r)
    g = np.select([i == k for k in range(6)], choices_g)
    bl = np.select([i == k for k in range(6)], choices_b)
    return np.stack([r, g, bl], axis=-1)


def _apply_jitter(imgs: np.ndarray, jitters: np.ndarray) -> np.ndarray:
    """Brightness, contrast, saturation, then hue, factors 1 + offset.

    Each stage touches only the rows with a nonzero offset, so identity
    offsets leave pixels bit-identical.
    """
    out = imgs
    sel = np.flatnonzero(jitters[:, 0] != 0.0)
    if sel.size:
        fb = (1.0 + jitters[sel, 0])[:, None, None, None]
        out[sel] = np.clip(out[sel] * fb, 0.0, 1.0)

    sel = np.flatnonzero(jitters[:, 1] != 0.0)
    if sel.size:
        fc = (1.0 + jitters[sel, 1])[:, None, None, None]
        block = out[sel]
        mean = (block @ LUMA).mean(axis=(1, 2))[:, None, None, None]
        out[sel] = np.clip((block - mean) * fc + mean, 0.0, 1.0)

    sel = np.flatnonzero(jitters[:, 2] != 0.0)
    if sel.size:
        fs = (1.0 + jitters[sel, 2])[:, None, None, None]
        block = out[sel]
        gray = (block @ LUMA)[..., None]
        out[sel] = np.clip((block - gray) * fs + gray, 0.0, 1.0)

    sel = np.flatnonzero(jitters[:, 3] != 0.0)
    if sel.size:
        hsv = rgb_to_hsv(out[sel])
        hsv[..., 0] = (hsv[..., 0] + jitters[sel, 3, None, None]) % 1.0
        out[sel] = np.clip(hsv_to_rgb(hsv), 0.0, 1.0)
    return out


def _gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    d = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (d / sigma) ** 2)
    return (k / k.sum()).astype(IMAGE_DTYPE)


def _apply_blur(imgs: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    """Separable gaussian blur with reflect padding, grouped by kernel radius."""
    out = imgs.copy()
    radii = np.minimum(np.ceil(3.0 * sigmas).astype(np.int64), _MAX_BLUR_RADIUS)
    radii[sigmas == 0.0] = 0
    for r in np.unique(radii):
        if r == 0:
            continue
        sel = np.flatnonzero(radii == r)
        kernels = np.stack([_gaussian_kernel(sigmas[j], r) for j in sel])
        block = out[sel]
        for axis in (2, 1):  # width then height
            pad = [(0, 0)] * 4
            pad[axis] = (r, r)
            padded = np.pad(block, pad, mode="reflect")
            windows = np.lib.stride_tricks.sliding_window_view(padded, 2 * r + 1, axis=axis)
            block = np.einsum("bhwck,bk->bhwc", windows, kernels)
        out[sel] = block
    return np.clip(out, 0.0, 1.0)


def apply_batch(imgs: np.ndarray, instrs) -> np.ndarray:
    """Apply one instruction per image; imgs is (B, 3, H, W) in [0, 1]."""
    if imgs.ndim != 4 or imgs.shape[1] != 3:
        raise ShapeError(f"expected (B, 3, H, W), got {imgs.shape}")
    if imgs.shape[0] != len(instrs):
        raise ShapeError("one instruction required per image")
    vecs = encode_batch(instrs)
    out = np.moveaxis(imgs, 1, -1)  # (B, H, W, C)
    if out.dtype != IMAGE_DTYPE:
        out = out.astype(IMAGE_DTYPE)

    out = np.ascontiguousarray(out)

    crops = vecs[:, 0:4]
    sel = np.flatnonzero(np.any(crops != [0.0, 0.0, 1.0, 1.0], axis=1))
    if sel.size:
        out[sel] = _bilinear_crop_resize(out[sel], crops[sel].astype(IMAGE_DTYPE))

    jitters = vecs[:, 4:8]
    if np.any(jitters != 0.0):
        out = _apply_jitter(out, jitters.astype(IMAGE_DTYPE))

    sigmas = vecs[:, 8]
    if np.any(sigmas > 0.0):
        out = _apply_blur(out, sigmas)

    flips = vecs[:, 9] == 1.0
    if flips.any():
        out[flips] = out[flips, :, ::-1, :]

    grays = vecs[:, 10] == 1.0
    if grays.any():
        luma = (out[grays] @ LUMA)[..., None]
        out[grays] = np.broadcast_to(luma, out[grays].shape)

    return np.clip(np.moveaxis(out, -1, 1), 0.0, 1.0)


def apply_augmentation(img: np.ndarray, instr: AugmentationInstruction) -> np.ndarray:
    """Single-image view of apply_batch."""
    check_image(img)
    return apply_batch(img[None], [instr])[0]
