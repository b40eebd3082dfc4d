import numpy as np
import pytest
import scipy.ndimage as ndi

from rawdiff import data
from rawdiff.condition import RawFrame


# --- forward model -----------------------------------------------------------

def test_quantize_round_half_even():
    # 0.5 codes round to the even neighbor under banker's rounding
    x = np.array([0.5 / 3.0, 2.5 / 3.0])
    q = data.quantize(x, 2)  # 4 levels, step 1/3
    np.testing.assert_allclose(q, [0.0 / 3.0, 2.0 / 3.0])


def test_mosaic_rggb_layout():
    rgb = np.zeros((3, 4, 4))
    rgb[0], rgb[1], rgb[2] = 0.1, 0.2, 0.3
    m = data.mosaic_rggb(rgb)
    assert m[0, 0] == 0.1 and m[0, 1] == 0.2 and m[1, 0] == 0.2 and m[1, 1] == 0.3


def test_demosaic_constant_fixed_point():
    raw = RawFrame(data=np.full((8, 8), 0.42))
    rgb = data.demosaic_bilinear(raw)
    np.testing.assert_allclose(rgb, 0.42, atol=1e-12)


def test_isp_gray_identity_with_unit_gains_gamma1():
    raw = RawFrame(data=np.full((8, 8), 0.3))
    out = data.f_isp(raw, wb_gains=(1, 1, 1), gamma=1.0)
    np.testing.assert_allclose(out, 0.3, atol=1e-12)


def test_isp_gamma_known_value():
    raw = RawFrame(data=np.full((8, 8), 0.25))
    out = data.f_isp(raw, gamma=2.2)
    # 0.25 ** (1/2.2) evaluated in high precision
    np.testing.assert_allclose(out, 0.53252054472, atol=1e-9)


def test_isp_wb_gain_linearity_below_clamp():
    raw = RawFrame(data=np.full((8, 8), 0.2))
    one = data.f_isp(raw, wb_gains=(1.0, 1.0, 1.0), gamma=1.0)
    two = data.f_isp(raw, wb_gains=(2.0, 1.0, 1.0), gamma=1.0)
    np.testing.assert_allclose(two[0], 2.0 * one[0], atol=1e-12)
    np.testing.assert_allclose(two[1:], one[1:], atol=1e-12)


def test_isp_rejects_bad_gains():
    raw = RawFrame(data=np.zeros((4, 4)))
    with pytest.raises(ValueError):
        data.f_isp(raw, wb_gains=(0.0, 1.0, 1.0))


def test_noise_variance_formula_monte_carlo():
    """Per-pixel noise variance follows lambda_p*s*g + (sigma_g*g)^2."""
    rng = np.random.default_rng(0)
    signal, sigma_g, lambda_p = 0.3, 0.01, 0.002
    for iso in (800, 12800):
        g = iso / 100.0
        std = data.sensor_noise_std(np.array(signal), iso, sigma_g, lambda_p)
        draws = signal + float(std) * rng.standard_normal(10000)
        expect = lambda_p * signal * g + (sigma_g * g) ** 2
        assert abs(draws.var() - expect) / expect < 0.10


def test_noise_iso_scaling_ratio():
    s = np.array(0.2)
    v_low = data.sensor_noise_std(s, 800) ** 2
    v_high = data.sensor_noise_std(s, 12800) ** 2
    g_l, g_h = 8.0, 128.0
    expect = (0.001 * 0.2 * g_h + (0.04 * g_h) ** 2) / (0.001 * 0.2 * g_l + (0.04 * g_l) ** 2)
    np.testing.assert_allclose(v_high / v_low, expect, rtol=1e-12)


def test_synth_scene_noise_free_matches_isp(tmp_path):
    rng = np.random.default_rng(1)
    clean = rng.random((3, 8, 8))
    rec = data.synth_scene(clean, [0.0], iso=800, zooms=[1], rng=rng,
                           scene_id="s0", out_dir=tmp_path, noise=False)
    raw = data.load_raw_plane(tmp_path / rec.low_light[0].raw_path, (8, 8))
    srgb = data.load_png(tmp_path / rec.low_light[0].srgb_path)
    expect = data.quantize(data.f_isp(RawFrame(data=raw)), 8)
    np.testing.assert_allclose(srgb, expect, atol=1e-12)


def test_synth_scene_ev_halves_intensity(tmp_path):
    rng = np.random.default_rng(2)
    clean = rng.random((1, 16, 16)) * 0.5 + 0.25
    rec = data.synth_scene(clean, [0.0, -1.0], iso=800, zooms=[1], rng=rng,
                           scene_id="s1", out_dir=tmp_path, noise=False)
    r0 = data.load_raw_plane(tmp_path / rec.low_light[0].raw_path, (16, 16))
    r1 = data.load_raw_plane(tmp_path / rec.low_light[1].raw_path, (16, 16))
    assert abs(r1.mean() - 0.5 * r0.mean()) < 1e-3  # quantization-limited


def test_synth_scene_rejects_invalid():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError):
        data.synth_scene(np.full((1, 4, 4), 1.5), [0.0], 800, [1], rng, "x", "/tmp")
    with pytest.raises(ValueError):
        data.synth_scene(np.full((1, 4, 4), 0.5), [+1.0], 800, [1], rng, "x", "/tmp")


def test_synth_scene_zoom_layout(tmp_path):
    rng = np.random.default_rng(4)
    clean = rng.random((1, 32, 32))
    rec = data.synth_scene(clean, [-2.0], iso=800, zooms=[1, 2, 4], rng=rng,
                           scene_id="s2", out_dir=tmp_path, noise=False)
    assert [g.zoom for g in rec.ground_truth] == [1, 2, 4]
    sizes = {g.zoom: data.load_png(tmp_path / g.srgb_path).shape[1:]
             for g in rec.ground_truth}
    assert sizes == {1: (8, 8), 2: (16, 16), 4: (32, 32)}
    assert rec.low_light[0].raw_shape == (8, 8)


def test_synth_reproducible_bitwise(tmp_path):
    clean = np.random.default_rng(5).random((1, 8, 8))
    rec_a = data.synth_scene(clean, [-2.0], 800, [1], data.scene_rng(9, "s"), "s",
                             tmp_path / "a")
    rec_b = data.synth_scene(clean, [-2.0], 800, [1], data.scene_rng(9, "s"), "s",
                             tmp_path / "b")
    a = (tmp_path / "a" / rec_a.low_light[0].raw_path).read_bytes()
    b = (tmp_path / "b" / rec_b.low_light[0].raw_path).read_bytes()
    assert a == b


def test_mosaic_demosaic_roundtrip_on_smooth_images():
    # constant and linear-ramp images are reproduced by bilinear interpolation
    for img in (np.full((3, 8, 8), 0.5),
                np.tile(np.linspace(0.1, 0.9, 8), (3, 8, 1))):
        rec = data.demosaic_bilinear(RawFrame(data=data.mosaic_rggb(img)))
        interior = (slice(None), slice(1, -1), slice(1, -1))
        np.testing.assert_allclose(rec[interior], img[interior], atol=1e-10)


# --- ground-truth construction -----------------------------------------------

def test_robust_mean_identical_stack():
    img = np.random.default_rng(6).random((1, 4, 4))
    out = data.robust_mean([img.copy() for _ in range(10)])
    np.testing.assert_allclose(out, img, atol=1e-12)


def test_robust_mean_rejects_outlier():
    stack = [np.full((2, 2), 0.5)] * 9 + [np.full((2, 2), 1.0)]
    np.testing.assert_allclose(data.robust_mean(stack), 0.5, atol=1e-12)


def test_robust_mean_outlier_oracle_by_hand():
    # trace the clipping: mean 0.55, std 0.15; |1.0-0.55| = 3 sigma > 2.5 sigma
    vals = np.array([0.5] * 9 + [1.0])
    assert abs(vals.mean() - 0.55) < 1e-12
    assert abs(vals.std() - 0.15) < 1e-12
    stack = [np.full((1, 1), v) for v in vals]
    assert data.robust_mean(stack, clip_sigma=2.5, iters=3)[0, 0] == 0.5


def test_robust_mean_permutation_invariant():
    rng = np.random.default_rng(7)
    stack = [rng.random((3, 3)) for _ in range(8)]
    a = data.robust_mean(stack)
    b = data.robust_mean(stack[::-1])
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_robust_mean_validation():
    with pytest.raises(ValueError):
        data.robust_mean([np.zeros((2, 2))])
    with pytest.raises(ValueError):
        data.robust_mean([np.zeros((2, 2)), np.zeros((3, 3))])


def test_intensity_align():
    rng = np.random.default_rng(8)
    j = rng.random((1, 8, 8))
    out = data.intensity_align(j, float(j.mean()), 0.7)
    assert abs(out.mean() - 0.7) < 1e-6
    c = np.full((1, 4, 4), 0.3)
    np.testing.assert_allclose(data.intensity_align(c, 0.3, 0.7), 0.7, atol=1e-12)
    np.testing.assert_array_equal(data.intensity_align(j, 0.5, 0.5), j)


def _texture(seed, size=160):
    rng = np.random.default_rng(seed)
    base = ndi.gaussian_filter(rng.random((size, size)), 2.0)
    return (base - base.min()) / (base.max() - base.min())


def test_spatial_align_identity():
    ref = _texture(0)[16:144, 16:144][None]
    res = data.spatial_align(ref.copy(), ref)
    assert res.ok
    assert np.hypot(*res.translation) < 0.1


def test_spatial_align_recovers_integer_shift():
    base = _texture(1)
    ref = base[16:144, 16:144][None]
    mov = base[16 - 5:144 - 5, 16 + 3:144 + 3][None]  # content shifted by (3, -5)
    res = data.spatial_align(mov, ref)
    assert res.ok
    assert abs(res.translation[0] - 3) < 0.5
    assert abs(res.translation[1] + 5) < 0.5


def test_spatial_align_recovers_scale():
    import cv2
    ref = _texture(2)[16:144, 16:144][None]
    grow = cv2.getRotationMatrix2D((64, 64), 0, 1.05)
    mov = cv2.warpAffine(ref[0], grow, (128, 128))[None]
    res = data.spatial_align(mov, ref)
    assert res.ok and res.method == "sift"
    # aligning back requires the inverse scale
    assert abs(res.scale * 1.05 - 1.0) < 0.01


def test_spatial_align_fallback_on_tiny_images():
    rng = np.random.default_rng(9)
    ref = rng.random((1, 16, 16))
    res = data.spatial_align(ref.copy(), ref)
    assert res.method == "phase_correlation"


def test_build_ground_truth_composition():
    rng = np.random.default_rng(10)
    truth = ndi.gaussian_filter(rng.random((1, 64, 64)), 1.5)
    stack = [truth + 0.01 * rng.standard_normal(truth.shape) for _ in range(8)]
    stack.append(np.ones_like(truth))  # one gross outlier frame
    out = data.build_ground_truth(stack, reference=truth, mu_target=float(truth.mean()))
    assert abs(out.mean() - truth.mean()) < 2e-3
    assert np.abs(out - truth)[:, 8:-8, 8:-8].mean() < 0.02


# --- analyses ----------------------------------------------------------------

def test_gradient_histogram_constant():
    h = data.gradient_histogram(np.full((1, 8, 8), 0.5), bins=11)
    assert h[5] == 1.0 and h.sum() == 1.0


def test_gradient_histogram_normalized():
    rng = np.random.default_rng(11)
    for _ in range(5):
        h = data.gradient_histogram(rng.random((1, 8, 8)), bins=32)
        assert abs(h.sum() - 1.0) < 1e-9


def test_gradient_histogram_noise_widens():
    rng = np.random.default_rng(12)
    wider = 0
    for _ in range(100):
        img = ndi.gaussian_filter(rng.random((16, 16)), 2.0)[None]
        noisy = img + 0.1 * rng.standard_normal(img.shape)
        centers = np.linspace(-1, 1, 65)[:-1] + 1 / 64

        def spread(im):
            h = data.gradient_histogram(im, 64)
            mu = (h * centers).sum()
            return np.sqrt((h * (centers - mu) ** 2).sum())

        wider += spread(noisy) > spread(img)
    assert wider == 100


def _tiny_manifest(tmp_path, noise=False, ev_levels=(-2.0, -6.0)):
    return data.build_dataset(tmp_path, n_scenes=4, size=16, channels=1,
                              ev_levels=list(ev_levels), iso=800, zooms=[1],
                              seed=3, noise=noise, test_fraction=0.25)


def test_degradation_report_monotone_in_ev(tmp_path):
    man = _tiny_manifest(tmp_path, noise=True)
    rows = data.degradation_report(man, tmp_path)
    assert [r["ev"] for r in rows] == [-2.0, -6.0]
    assert rows[0]["psnr"] >= rows[1]["psnr"]


def test_degradation_report_noise_free_near_lossless(tmp_path):
    # at EV 0 with no noise only the 14-bit/8-bit codecs separate the pair
    man = _tiny_manifest(tmp_path, noise=False, ev_levels=(0.0,))
    rows = data.degradation_report(man, tmp_path)
    assert rows[0]["psnr"] > 60.0
    assert rows[0]["ssim"] > 0.999


def test_stats_mu_sigma(tmp_path):
    man = _tiny_manifest(tmp_path, noise=False, ev_levels=(-2.0, -3.0))
    rows = data.stats_mu_sigma(man, tmp_path)
    assert len(rows) == 2
    # gamma compresses the 2x linear ratio to 2^(1/2.2)
    ratio = rows[1]["mu"] / rows[0]["mu"]
    np.testing.assert_allclose(ratio, 0.5 ** (1 / 2.2), rtol=0.02)


def test_manifest_roundtrip(tmp_path):
    man = _tiny_manifest(tmp_path)
    loaded = data.load_manifest(tmp_path / "manifest.json")
    assert len(loaded.records) == 4
    assert loaded.records[0].scene_id == man.records[0].scene_id
    assert loaded.records[-1].split == "test"
    assert loaded.records[0].low_light[0].raw_shape == (16, 16)


def test_manifest_unique_scene_ids():
    rec = data.SceneRecord(scene_id="a", low_light=[], ground_truth=[])
    with pytest.raises(ValueError):
        data.DatasetManifest(records=[rec, rec])


def test_raw_plane_roundtrip(tmp_path):
    rng = np.random.default_rng(13)
    plane = data.quantize(rng.random((6, 4)), 14)
    data.save_raw_plane(tmp_path / "p.raw", plane)
    back = data.load_raw_plane(tmp_path / "p.raw", (6, 4))
    np.testing.assert_allclose(back, plane, atol=1e-12)
