import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uwbhmm.localize import (LinkTrack, NoEstimateError, PixelGrid, PresenceImage, locate,
                             pixel_bin_map, posterior_increments, presence_image_hard,
                             presence_image_soft, sla_locate)
from uwbhmm.sim import SPEED_OF_LIGHT, delay_bin

RADIOS = ((0.2, 0.4), (4.8, 0.2), (4.7, 4.3), (0.3, 4.1))
PAIRS = [(RADIOS[i], RADIOS[j]) for i in range(4) for j in range(i + 1, 4)]
D = SPEED_OF_LIGHT * 1e-9


def grid():
    return PixelGrid.covering((0.0, 0.0, 5.0, 4.5))


def alpha_step(k, n=32, soft=0.0):
    a = np.zeros(n)
    a[k - 1:] = 1.0
    if soft and k > 1:
        a[k - 2] = soft
    return a


def tracks_for(point, n=32, perturb=None):
    out = []
    for m, (t, r) in enumerate(PAIRS):
        k = int(delay_bin(t, r, point, D))
        if perturb:
            k += perturb.get(m, 0)
        out.append(LinkTrack(t, r, alpha_step(k, n), k))
    return out


class TestPixelMap:
    def test_on_segment(self):
        k, out = pixel_bin_map((0, 0), (4, 0), np.array([[1.0, 0.0]]), 0.3, 10)
        assert k[0] == 1 and not out[0]

    def test_pythagorean(self):
        k, _ = pixel_bin_map((0, 0), (4, 0), np.array([[2.0, 1.5]]), 0.3, 10)
        assert k[0] == 4

    def test_out_of_window(self):
        k, out = pixel_bin_map((0, 0), (4, 0), np.array([[2.0, 50.0]]), 0.3, 10)
        assert k[0] == 10 and out[0]

    def test_grid_row_major(self):
        g = PixelGrid.covering((0, 0, 0.3, 0.2), 0.1)
        assert g.shape == (2, 3) and len(g) == 6
        np.testing.assert_allclose(g.centers[1], [0.15, 0.05])
        np.testing.assert_allclose(g.centers[3], [0.05, 0.15])


class TestSoftImage:
    def test_increments(self):
        np.testing.assert_allclose(posterior_increments([0.2, 0.1, 0.7, 1.0]), [0.2, 0.0, 0.6, 0.3])

    def _two_link_pixel(self, a1, a2, p):
        g = PixelGrid(np.array([2.0]), np.array([1.5]), 0.1)
        # both links map the pixel to bin 4 (d = 0.3 m)
        T = 0.3 / SPEED_OF_LIGHT
        l1 = LinkTrack((0, 0), (4, 0), np.array([0, 0, 0, a1, 1.0]), bin_width=T)
        l2 = LinkTrack((4, 0), (0, 0), np.array([0, 0, 0, a2, 1.0]), bin_width=T)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return presence_image_soft([l1, l2], g, p).values[0]

    def test_p_norm_values(self):
        assert self._two_link_pixel(0.5, 0.5, 1.0) == pytest.approx(1.0)
        # (0.5**0.2 + 0.5**0.2) ** 5, evaluated independently in log space
        ref = np.exp(5 * np.log(2 * np.exp(0.2 * np.log(0.5))))
        assert self._two_link_pixel(0.5, 0.5, 0.2) == pytest.approx(ref) == pytest.approx(16.0)

    @given(st.floats(0.01, 1.0), st.floats(0.05, 3.0))
    def test_single_term_identity(self, a, p):
        assert self._two_link_pixel(a, 0.0, p) == pytest.approx(a, rel=1e-9)

    def test_p_one_is_sum(self):
        rng = np.random.default_rng(0)
        links = [LinkTrack(t, r, np.sort(rng.uniform(0, 1, 32))) for t, r in PAIRS]
        img = presence_image_soft(links, grid(), 1.0)
        ref = np.zeros(len(grid()))
        for l in links:
            k, out = pixel_bin_map(l.tx, l.rx, grid().centers, D, 32)
            a = posterior_increments(l.alpha)[k - 1]
            a[out] = 0
            ref += a
        np.testing.assert_allclose(img.values, ref, rtol=1e-12)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        links = [LinkTrack(t, r, np.sort(rng.uniform(0, 1, 32))) for t, r in PAIRS]
        a = presence_image_soft(links, grid()).values
        b = presence_image_soft(links[::-1], grid()).values
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_flat_alpha_contributes_nothing(self):
        flat = LinkTrack(*PAIRS[0], np.zeros(32))
        others = tracks_for((2.5, 2.0))[1:]
        a = presence_image_soft(others, grid()).values
        b = presence_image_soft([flat] + others, grid()).values
        np.testing.assert_allclose(a, b)

    def test_out_of_window_zero(self):
        l = LinkTrack(*PAIRS[0], np.r_[np.zeros(3), np.ones(1)])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            img = presence_image_soft([l], grid())
        k, out = pixel_bin_map(l.tx, l.rx, grid().centers, D, 4)
        assert np.all(img.values[out] == 0) and np.any(img.values[~out] > 0)

    def test_mismatched_bin_width(self):
        a = LinkTrack(*PAIRS[0], np.ones(4), bin_width=1e-9)
        b = LinkTrack(*PAIRS[1], np.ones(4), bin_width=2e-9)
        with pytest.raises(ValueError):
            presence_image_soft([a, b, a], grid())

    def test_few_links_warn(self):
        with pytest.warns(UserWarning):
            presence_image_soft([LinkTrack(*PAIRS[0], np.ones(32))], grid())

    def test_count_nonzero(self):
        links = tracks_for((2.5, 2.0))
        img = presence_image_soft(links, grid(), count_nonzero=True)
        assert img.values.max() == 6

    def test_p_zero_rejected(self):
        with pytest.raises(ValueError):
            presence_image_soft(tracks_for((2.5, 2.0)), grid(), p=0.0)

    def test_monotone_evidence(self):
        base = tracks_for((2.5, 2.0))
        bumped = list(base)
        a = base[0].alpha.copy()
        k = base[0].k_star_hat
        a[k - 2] = 0.3  # raise the increment at bin k-1
        bumped[0] = LinkTrack(base[0].tx, base[0].rx, a, k)
        v0 = presence_image_soft(base, grid()).values
        v1 = presence_image_soft(bumped, grid()).values
        kmap, out = pixel_bin_map(base[0].tx, base[0].rx, grid().centers, D, 32)
        sel = (kmap == k - 1) & ~out
        assert np.all(v1[sel] > v0[sel])

    def test_values_bounded(self):
        links = tracks_for((1.7, 3.1))
        img = presence_image_soft(links, grid(), 1.0)
        assert img.values.min() >= 0 and img.values.max() <= 6 + 1e-12


class TestHardImage:
    def test_all_agree_max(self):
        pt = (2.55, 2.05)
        img = presence_image_hard(tracks_for(pt), grid(), 0.2, n_bins=32)
        assert img.values.max() == pytest.approx(6 ** 5)
        z = grid().centers[np.argmax(img.values)]
        for t, r in PAIRS:
            assert delay_bin(t, r, z, D) == delay_bin(t, r, pt, D)

    def test_no_detections(self):
        links = [LinkTrack(t, r, np.zeros(32), None) for t, r in PAIRS]
        img = presence_image_hard(links, grid(), n_bins=32)
        assert not img.values.any()
        with pytest.raises(NoEstimateError):
            locate(img)

    def test_single_link_annulus(self):
        t, r = PAIRS[0]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            img = presence_image_hard([LinkTrack(t, r, None, 5)], grid(), n_bins=32)
        k, _ = pixel_bin_map(t, r, grid().centers, D, 32)
        assert set(np.unique(img.values)) == {0.0, 1.0}
        np.testing.assert_array_equal(img.values > 0, k == 5)


class TestLocate:
    def test_single_pixel(self):
        g = grid()
        v = np.zeros(len(g))
        v[1234] = 1.0
        np.testing.assert_allclose(locate(PresenceImage(v, g, 0.2)), g.centers[1234])

    def test_tie_lowest_index(self):
        g = grid()
        v = np.zeros(len(g))
        v[[500, 1500]] = 1.0
        np.testing.assert_allclose(locate(PresenceImage(v, g, 0.2)), g.centers[500])

    def test_normalized(self):
        g = grid()
        v = np.zeros(len(g))
        v[3] = 4.0
        m = PresenceImage(v, g, 0.2).normalized()
        assert m.max() == 1.0 and m.shape == g.shape

    def test_reflective_border_keeps_corner_peak(self):
        g = grid()
        v = np.zeros(len(g))
        v[0] = 1.0
        np.testing.assert_allclose(locate(PresenceImage(v, g, 0.2)), g.centers[0])

    def test_noise_free_soft_within_two_pitches(self):
        for pt in [(1.02, 0.81), (2.82, 2.61), (3.72, 3.51), (1.92, 3.51)]:
            z = locate(presence_image_soft(tracks_for(pt), grid()))
            assert np.linalg.norm(z - pt) <= 0.2 + 1e-9


class TestSla:
    def test_noise_free_recovery(self):
        for pt in [(1.05, 0.85), (2.85, 2.65), (3.75, 1.75)]:
            ks = [int(delay_bin(t, r, pt, D)) for t, r in PAIRS]
            res = sla_locate(ks, PAIRS, D)
            assert res.converged
            assert np.linalg.norm(res.position - pt) <= D

    def test_exact_ranges_exact_solution(self):
        pt = np.array([2.2, 1.7])
        from uwbhmm.sim import excess_path
        ks = [excess_path(t, r, pt) / D for t, r in PAIRS]
        res = sla_locate(ks, PAIRS, D)
        np.testing.assert_allclose(res.position, pt, atol=1e-6)

    def test_symmetry_axis(self):
        radios = [((0.0, 0.0), (4.0, 0.0)), ((0.0, 4.0), (4.0, 4.0)),
                  ((0.0, 0.0), (0.0, 4.0)), ((4.0, 0.0), (4.0, 4.0))]
        res = sla_locate([5, 5, 5, 5], radios, D, start=(1.0, 1.5))
        assert res.position[0] == pytest.approx(2.0, abs=1e-6)
        assert res.position[1] == pytest.approx(2.0, abs=1e-6)

    def test_two_detections_error(self):
        with pytest.raises(ValueError):
            sla_locate([3, 4, None], PAIRS[:3], D)
