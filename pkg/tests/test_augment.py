"""Tests for augmentation instructions: sampling, encoding, application."""

import numpy as np
import pytest

from uniclr.augment import (
    IDENTITY, AugmentationInstruction, AugmentationPolicy, apply_augmentation,
    apply_batch, encode_instruction, hsv_to_rgb, rgb_to_hsv, sample_instruction,
    strong_policy, weak_policy,
)
from uniclr.errors import ContractError, ShapeError


@pytest.fixture
def rng():
    return np.random.default_rng(5)


@pytest.fixture
def image(rng):
    return rng.random((3, 16, 16)).astype(np.float32)


def zero_prob_policy():
    return AugmentationPolicy(
        strength="weak", crop_prob=0.0, jitter_prob=0.0, blur_prob=0.0,
        flip_prob=0.0, gray_prob=0.0,
    )


class TestEncoding:
    def test_identity_vector(self):
        expected = [0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0]
        assert np.array_equal(encode_instruction(IDENTITY), expected)

    def test_center_crop_half_flipped(self):
        instr = AugmentationInstruction(crop=(0.25, 0.25, 0.5, 0.5), flipped=1)
        expected = [0.25, 0.25, 0.5, 0.5, 0, 0, 0, 0, 0, 1, 0]
        assert np.array_equal(encode_instruction(instr), expected)

    def test_grayscale_only(self):
        vec = encode_instruction(AugmentationInstruction(grayscaled=1))
        assert vec[10] == 1.0
        assert np.array_equal(vec[:10], [0, 0, 1, 1, 0, 0, 0, 0, 0, 0])

    def test_injective_on_fields(self, rng):
        seen = {}
        for _ in range(300):
            instr = sample_instruction(strong_policy(), rng)
            key = tuple(encode_instruction(instr))
            if key in seen:
                assert seen[key] == instr
            seen[key] = instr

    def test_total_on_valid_instructions(self, rng):
        for _ in range(200):
            vec = encode_instruction(sample_instruction(strong_policy(), rng))
            assert vec.shape == (11,) and np.all(np.isfinite(vec))


class TestSampling:
    def test_all_zero_probabilities_identity(self, rng):
        for _ in range(50):
            assert sample_instruction(zero_prob_policy(), rng) == IDENTITY

    def test_weak_never_flips_or_grays(self, rng):
        policy = weak_policy()
        for _ in range(2000):
            instr = sample_instruction(policy, rng)
            assert instr.flipped == 0 and instr.grayscaled == 0

    def test_strong_flip_frequency(self, rng):
        policy = strong_policy()
        flips = sum(sample_instruction(policy, rng).flipped for _ in range(10_000))
        assert abs(flips / 10_000 - 0.5) < 0.02

    def test_sampled_instructions_always_valid(self, rng):
        # construction re-checks the invariants, so surviving implies validity
        policy = strong_policy()
        for _ in range(100_000):
            instr = sample_instruction(policy, rng)
            x, y, w, h = instr.crop
        assert True

    def test_weak_policy_requires_no_flip(self):
        with pytest.raises(ContractError):
            AugmentationPolicy(strength="weak", flip_prob=0.5)

    def test_probability_bounds_checked(self):
        with pytest.raises(ContractError):
            AugmentationPolicy(strength="strong", blur_prob=1.5)


class TestApply:
    def test_identity_pixel_identical(self, image):
        assert np.array_equal(apply_augmentation(image, IDENTITY), image)

    def test_flip_is_involution(self, image):
        flip = AugmentationInstruction(flipped=1)
        once = apply_augmentation(image, flip)
        assert not np.array_equal(once, image)
        assert np.array_equal(apply_augmentation(once, flip), image)

    def test_grayscale_equal_channels(self, image):
        out = apply_augmentation(image, AugmentationInstruction(grayscaled=1))
        assert np.array_equal(out[0], out[1])
        assert np.array_equal(out[1], out[2])

    def test_range_and_finiteness(self, rng, image):
        for _ in range(50):
            instr = sample_instruction(strong_policy(), rng)
            out = apply_augmentation(image, instr)
            assert np.all(np.isfinite(out))
            assert out.min() >= 0.0 and out.max() <= 1.0
            assert out.shape == image.shape

    def test_batch_matches_single(self, rng):
        imgs = rng.random((32, 3, 16, 16)).astype(np.float32)
        instrs = [
            sample_instruction(strong_policy() if i % 2 else weak_policy(), rng)
            for i in range(32)
        ]
        batch = apply_batch(imgs, instrs)
        single = np.stack([apply_augmentation(imgs[i], instrs[i]) for i in range(32)])
        assert np.array_equal(batch, single)

    def test_batch_does_not_mutate_input(self, rng):
        imgs = rng.random((4, 3, 16, 16)).astype(np.float32)
        orig = imgs.copy()
        apply_batch(imgs, [sample_instruction(strong_policy(), rng) for _ in range(4)])
        assert np.array_equal(imgs, orig)

    def test_blur_preserves_constant_image(self):
        img = np.full((3, 16, 16), 0.625, dtype=np.float32)
        out = apply_augmentation(img, AugmentationInstruction(blur_sigma=1.5))
        assert np.allclose(out, 0.625, atol=1e-6)

    def test_blur_smooths(self, image):
        out = apply_augmentation(image, AugmentationInstruction(blur_sigma=2.0))
        assert out.std() < image.std()

    def test_crop_zooms_in(self, image):
        # cropping a quarter and resizing keeps values from that region only
        instr = AugmentationInstruction(crop=(0.0, 0.0, 0.5, 0.5))
        out = apply_augmentation(image, instr)
        assert out.shape == image.shape
        assert out.min() >= image[:, :9, :9].min() - 1e-6
        assert out.max() <= image[:, :9, :9].max() + 1e-6

    def test_shape_validation(self, rng):
        with pytest.raises(ShapeError):
            apply_augmentation(rng.random((1, 16, 16)), IDENTITY)
        with pytest.raises(ShapeError):
            apply_batch(rng.random((2, 3, 8, 8)), [IDENTITY])


class TestInstructionValidation:
    def test_crop_window_bounds(self):
        with pytest.raises(ContractError):
            AugmentationInstruction(crop=(0.6, 0.0, 0.5, 0.5))
        with pytest.raises(ContractError):
            AugmentationInstruction(crop=(0.0, 0.0, 0.0, 1.0))

    def test_negative_sigma(self):
        with pytest.raises(ContractError):
            AugmentationInstruction(blur_sigma=-1.0)

    def test_flag_domain(self):
        with pytest.raises(ContractError):
            AugmentationInstruction(flipped=2)


class TestColorConversion:
    def test_hsv_roundtrip(self, rng):
        rgb = rng.random((50, 3)).astype(np.float32)
        back = hsv_to_rgb(rgb_to_hsv(rgb))
        assert np.allclose(back, rgb, atol=1e-5)

    def test_known_colors(self):
        red = rgb_to_hsv(np.array([1.0, 0.0, 0.0]))
        assert np.allclose(red, [0.0, 1.0, 1.0])
        white = rgb_to_hsv(np.array([1.0, 1.0, 1.0]))
        assert white[1] == 0.0 and white[2] == 1.0
