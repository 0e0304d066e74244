import numpy as np
import numpy.testing as npt
import pytest
from PIL import Image

from glassdepth.data import (CameraIntrinsics, RgbdSample, SynthConfig, augment,
                             corrupt_depth, flip_sample, generate_scene,
                             load_dataset, load_sample, make_primitives,
                             render_depth, rotate90_sample, write_manifest,
                             write_sample)
from glassdepth.errors import ConfigError, ContractError, FormatError


def make_sample(h=16, w=20, seed=0, mask_all=False):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0.5, 3.0, (h, w)).astype(np.float32)
    mask = np.ones((h, w), np.uint8) if mask_all \
        else (rng.random((h, w)) < 0.4).astype(np.uint8)
    return RgbdSample(
        rgb=rng.integers(0, 256, (h, w, 3)).astype(np.uint8),
        raw_depth=gt.copy(),
        gt_depth=gt,
        mask=mask,
        intrinsics=CameraIntrinsics(50.0, 52.0, w / 2, h / 2),
    ).validate()


def quantize_mm(sample):
    """Snap depths to millimetres so disk round trips are exact."""
    q = lambda d: (np.round(d.astype(np.float64) * 1000) / 1000).astype(np.float32)
    sample.raw_depth = q(sample.raw_depth)
    sample.gt_depth = q(sample.gt_depth)
    return sample


class TestDiskIO:
    def test_depth_scale_definition(self, tmp_path):
        arr = np.zeros((4, 4), np.uint16)
        arr[1, 2] = 1500
        d = tmp_path / "s"
        d.mkdir()
        Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(d / "rgb.png")
        Image.fromarray(arr).save(d / "depth_raw.png")
        Image.fromarray(arr).save(d / "depth_gt.png")
        Image.fromarray(np.zeros((4, 4), np.uint8)).save(d / "mask.png")
        (d / "intrinsics.txt").write_text("10 10 2 2\n")
        s = load_sample(d)
        assert s.raw_depth[1, 2] == pytest.approx(1.5)
        assert s.raw_depth[0, 0] == 0.0

    def test_zero_raw_depth_means_all_missing(self, tmp_path):
        s = make_sample()
        s.raw_depth = np.zeros_like(s.raw_depth)
        write_sample(s, tmp_path / "s")
        back = load_sample(tmp_path / "s")
        assert (back.raw_depth == 0).all()

    def test_roundtrip_identity(self, tmp_path):
        for seed in range(3):
            s = quantize_mm(make_sample(seed=seed))
            write_sample(s, tmp_path / f"s{seed}")
            back = load_sample(tmp_path / f"s{seed}")
            npt.assert_array_equal(back.rgb, s.rgb)
            npt.assert_array_equal(back.raw_depth, s.raw_depth)
            npt.assert_array_equal(back.gt_depth, s.gt_depth)
            npt.assert_array_equal(back.mask, s.mask)
            assert back.intrinsics == s.intrinsics

    def test_extent_mismatch_rejected(self, tmp_path):
        s = make_sample()
        write_sample(s, tmp_path / "s")
        Image.fromarray(np.zeros((8, 8), np.uint16)).save(tmp_path / "s/depth_gt.png")
        with pytest.raises(FormatError):
            load_sample(tmp_path / "s")

    def test_missing_file_raises(self, tmp_path):
        s = make_sample()
        write_sample(s, tmp_path / "s")
        (tmp_path / "s/mask.png").unlink()
        with pytest.raises(FileNotFoundError):
            load_sample(tmp_path / "s")

    def test_bad_intrinsics_rejected(self, tmp_path):
        s = make_sample()
        write_sample(s, tmp_path / "s")
        (tmp_path / "s/intrinsics.txt").write_text("not numbers\n")
        with pytest.raises(FormatError):
            load_sample(tmp_path / "s")

    def test_manifest_dataset(self, tmp_path):
        for i in range(3):
            write_sample(quantize_mm(make_sample(seed=i)), tmp_path / f"sample_{i}")
        write_manifest(tmp_path, [f"sample_{i}" for i in range(3)])
        samples = load_dataset(tmp_path)
        assert len(samples) == 3


class TestGenerator:
    def test_same_seed_bitwise_identical(self):
        cfg = SynthConfig(seed=7)
        a = generate_scene(cfg)
        b = generate_scene(cfg)
        npt.assert_array_equal(a.rgb, b.rgb)
        npt.assert_array_equal(a.raw_depth, b.raw_depth)
        npt.assert_array_equal(a.gt_depth, b.gt_depth)
        npt.assert_array_equal(a.mask, b.mask)

    def test_different_seeds_differ(self):
        a = generate_scene(SynthConfig(seed=0))
        b = generate_scene(SynthConfig(seed=1))
        assert not np.array_equal(a.gt_depth, b.gt_depth)

    def test_empty_scene_is_background_plane(self):
        cfg = SynthConfig(min_objects=0, max_objects=0, noise_sigma=0.0, seed=3)
        s = generate_scene(cfg)
        assert s.mask.sum() == 0
        # the plane is affine in pixel coordinates
        h, w = s.gt_depth.shape
        v, u = np.mgrid[0:h, 0:w].astype(np.float64)
        a = np.stack([np.ones(h * w), u.ravel(), v.ravel()], axis=1)
        coef, *_ = np.linalg.lstsq(a, s.gt_depth.astype(np.float64).ravel(),
                                   rcond=None)
        fit = (a @ coef).reshape(h, w)
        assert np.abs(fit - s.gt_depth).max() < 1e-5
        npt.assert_array_equal(s.raw_depth, s.gt_depth)

    def test_generated_samples_satisfy_invariants(self):
        for seed in range(5):
            generate_scene(SynthConfig(seed=seed)).validate()

    def test_mask_nonempty_when_objects_exist(self):
        for seed in range(5):
            s = generate_scene(SynthConfig(min_objects=1, seed=seed))
            assert s.mask.sum() > 0

    def test_zbuffer_matches_bruteforce(self):
        cfg = SynthConfig(height=24, width=32, seed=11)
        rng = np.random.default_rng(cfg.seed)
        from glassdepth.data import _background_plane
        plane = _background_plane(cfg, rng)
        prims = make_primitives(cfg, rng, plane)
        gt, owner = render_depth(prims, plane)
        maps = [p.depth_map(24, 32) for p in prims]
        for y in range(24):
            for x in range(32):
                candidates = [plane[y, x]] + [m[y, x] for m in maps]
                best = min(candidates)
                assert gt[y, x] == pytest.approx(best, abs=1e-12)
                assert candidates[owner[y, x] + 1] == pytest.approx(best, abs=1e-12)


class TestCorruption:
    def test_all_missing_mode(self):
        cfg = SynthConfig(p_background=0.0, p_missing=1.0, p_noise=0.0,
                          noise_sigma=0.0)
        s = make_sample(mask_all=False, seed=5)
        out = corrupt_depth(s, cfg, np.random.default_rng(0))
        sel = s.mask.astype(bool)
        assert (out.raw_depth[sel] == 0).all()
        npt.assert_allclose(out.raw_depth[~sel], s.gt_depth[~sel], atol=1e-6)

    def test_empty_mask_no_noise_is_noop(self):
        cfg = SynthConfig(noise_sigma=0.0)
        s = make_sample(seed=6)
        s.mask = np.zeros_like(s.mask)
        out = corrupt_depth(s, cfg, np.random.default_rng(1))
        npt.assert_allclose(out.raw_depth, s.gt_depth, atol=1e-7)

    def test_gt_and_mask_untouched(self):
        cfg = SynthConfig()
        s = make_sample(seed=7)
        gt0, mask0 = s.gt_depth.copy(), s.mask.copy()
        out = corrupt_depth(s, cfg, np.random.default_rng(2))
        npt.assert_array_equal(out.gt_depth, gt0)
        npt.assert_array_equal(out.mask, mask0)

    def test_category_frequencies_within_binomial_bounds(self):
        h, w = 320, 380  # > 1e5 masked pixels
        n = h * w
        gt = np.full((h, w), 2.0, np.float32)
        sample = RgbdSample(
            rgb=np.zeros((h, w, 3), np.uint8), raw_depth=gt.copy(), gt_depth=gt,
            mask=np.ones((h, w), np.uint8),
            intrinsics=CameraIntrinsics(10, 10, w / 2, h / 2))
        cfg = SynthConfig(p_background=0.5, p_missing=0.3, p_noise=0.2,
                          noise_sigma=0.001)
        background = np.full((h, w), 1.0)
        out = corrupt_depth(sample, cfg, np.random.default_rng(3),
                            background=background)
        n_bg = int((out.raw_depth == 1.0).sum())
        n_miss = int((out.raw_depth == 0.0).sum())
        n_noise = n - n_bg - n_miss
        for count, p in ((n_bg, 0.5), (n_miss, 0.3), (n_noise, 0.2)):
            bound = 3 * np.sqrt(n * p * (1 - p))
            assert abs(count - n * p) <= bound, (count, n * p, bound)


class TestAugmentation:
    def test_flip_involution(self):
        s = make_sample(seed=8)
        for axis in (0, 1):
            twice = flip_sample(flip_sample(s, axis), axis)
            npt.assert_array_equal(twice.rgb, s.rgb)
            npt.assert_array_equal(twice.gt_depth, s.gt_depth)
            assert twice.intrinsics == s.intrinsics

    def test_four_quarter_turns_identity(self):
        s = make_sample(seed=9)
        out = rotate90_sample(s, 4)
        npt.assert_array_equal(out.rgb, s.rgb)
        npt.assert_array_equal(out.mask, s.mask)
        assert out.intrinsics == s.intrinsics

    def test_mask_count_invariant(self):
        s = make_sample(seed=10)
        rng = np.random.default_rng(4)
        for _ in range(10):
            out = augment(s, rng)
            assert out.mask.sum() == s.mask.sum()

    def test_planes_stay_aligned(self):
        s = make_sample(seed=11)
        # tag one pixel distinctively in every plane
        s.rgb[3, 5] = (7, 13, 211)
        s.gt_depth[3, 5] = 2.71828
        s.raw_depth[3, 5] = 2.71828
        s.mask[:] = 0
        s.mask[3, 5] = 1
        rng = np.random.default_rng(5)
        for _ in range(10):
            out = augment(s, rng)
            pos = np.argwhere(out.mask == 1)
            assert len(pos) == 1
            y, x = pos[0]
            npt.assert_array_equal(out.rgb[y, x], (7, 13, 211))
            assert out.gt_depth[y, x] == pytest.approx(2.71828)
            assert out.raw_depth[y, x] == pytest.approx(2.71828)

    def test_hflip_mirrors_principal_point(self):
        s = make_sample(seed=12)
        out = flip_sample(s, axis=1)
        assert out.intrinsics.cx == pytest.approx(s.width - 1 - s.intrinsics.cx)
        assert out.intrinsics.cy == s.intrinsics.cy

    def test_rot90_swaps_focals(self):
        s = make_sample(seed=13)
        out = rotate90_sample(s, 1)
        assert out.intrinsics.fx == s.intrinsics.fy
        assert out.intrinsics.fy == s.intrinsics.fx
        assert out.intrinsics.cx == s.intrinsics.cy
        assert out.intrinsics.cy == pytest.approx(s.width - 1 - s.intrinsics.cx)
        assert out.height == s.width and out.width == s.height


class TestValidation:
    def test_negative_raw_depth_rejected(self):
        s = make_sample(seed=14)
        s.raw_depth[0, 0] = -0.5
        with pytest.raises(ContractError):
            s.validate()

    def test_masked_zero_gt_rejected(self):
        s = make_sample(seed=15)
        s.mask[2, 2] = 1
        s.gt_depth[2, 2] = 0.0
        with pytest.raises(ContractError):
            s.validate()

    def test_bad_probabilities_rejected(self):
        with pytest.raises(ConfigError):
            SynthConfig(p_background=0.5, p_missing=0.5, p_noise=0.5)

    def test_digest_stable(self):
        a = make_sample(seed=16)
        b = make_sample(seed=16)
        assert a.digest() == b.digest()
        c = make_sample(seed=17)
        assert a.digest() != c.digest()
