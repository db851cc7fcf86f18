import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesion3d.errors import ContractError, GridMismatchError, UndefinedMetricError
from lesion3d.metrics import (
    MetricsReport,
    SurfacePointSet,
    agreement_rate,
    directed_hd_percentile,
    dsc,
    hd95,
    nearest_rank_index,
    pixel_sens_spec,
    slice_sens_spec,
    surface_points,
)
from lesion3d.volume import CaseCounts, Mask

from oracles import directed_percentile_oracle, dsc_oracle, hd_oracle, pixel_counts_oracle, random_blob, surface_oracle


def _mask(shape, coords, spacing=(1, 1, 1)):
    d = np.zeros(shape, bool)
    for c in coords:
        d[c] = True
    return Mask(d, spacing)


class TestDsc:
    def test_identical(self):
        m = _mask((5, 5, 5), [(i, 0, 0) for i in range(5)] + [(i, 1, 0) for i in range(5)])
        assert m.count == 10
        assert dsc(m, m) == 1.0

    def test_disjoint(self):
        assert dsc(_mask((3, 3, 3), [(0, 0, 0)]), _mask((3, 3, 3), [(2, 2, 2)])) == 0.0

    def test_half(self):
        a = _mask((4, 4, 1), [(0, 0, 0), (1, 0, 0), (2, 0, 0), (3, 0, 0)])
        b = _mask((4, 4, 1), [(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0)])
        assert dsc(a, b) == 0.5

    def test_both_empty(self):
        e = Mask(np.zeros((2, 2, 2)))
        with pytest.raises(UndefinedMetricError):
            dsc(e, e)

    def test_one_empty(self):
        assert dsc(Mask(np.zeros((2, 2, 2))), _mask((2, 2, 2), [(0, 0, 0)])) == 0.0

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatchError):
            dsc(_mask((2, 2, 2), [(0, 0, 0)]), _mask((2, 2, 2), [(0, 0, 0)], spacing=(1, 1, 2)))

    def test_random_vs_oracle(self, rng):
        for _ in range(20):
            shape = tuple(rng.integers(3, 20, size=3))
            a, b = random_blob(rng, shape), random_blob(rng, shape)
            assert dsc(Mask(a), Mask(b)) == dsc_oracle(a, b)
            assert dsc(Mask(a), Mask(b)) == dsc(Mask(b), Mask(a))


class TestSurface:
    def test_single_voxel(self):
        m = _mask((4, 4, 4), [(1, 2, 3)], spacing=(0.5, 1.0, 3.6))
        pts = surface_points(m).points
        assert pts.shape == (1, 3)
        assert np.allclose(pts[0], (0.5, 2.0, 3 * 3.6))

    def test_cube(self):
        d = np.zeros((5, 5, 5), bool)
        d[1:4, 1:4, 1:4] = True
        pts = surface_points(Mask(d)).points
        assert len(pts) == 26
        assert not any(np.array_equal(p, (2, 2, 2)) for p in pts)

    def test_border_counts_as_background(self):
        pts = surface_points(Mask(np.ones((3, 3, 3)))).points
        assert len(pts) == 26

    def test_origin_applied(self):
        m = Mask(np.ones((1, 1, 1)), spacing=(2, 2, 2), origin=(10, -5, 1))
        assert np.array_equal(surface_points(m).points, [[10.0, -5.0, 1.0]])

    def test_empty(self):
        with pytest.raises(UndefinedMetricError):
            surface_points(Mask(np.zeros((2, 2, 2))))

    def test_random_vs_oracle(self, rng):
        for _ in range(20):
            shape = tuple(rng.integers(2, 24, size=3))
            a = random_blob(rng, shape)
            got = set(map(tuple, surface_points(Mask(a)).points.astype(int)))
            assert got == surface_oracle(a)


class TestHausdorff:
    def test_identical_sets(self, rng):
        pts = SurfacePointSet(rng.normal(size=(30, 3)))
        for pct in (1, 50, 95, 100):
            assert directed_hd_percentile(pts, pts, pct) == 0.0

    def test_345(self):
        a = SurfacePointSet(np.array([[0.0, 0.0, 0.0]]))
        b = SurfacePointSet(np.array([[3.0, 4.0, 0.0]]))
        assert directed_hd_percentile(a, b, 95) == 5.0

    def test_random_points_vs_all_pairs(self, rng):
        for _ in range(20):
            a, b = rng.normal(size=(50, 3)) * 10, rng.normal(size=(50, 3)) * 10
            for pct in (50, 95, 100):
                assert directed_hd_percentile(SurfacePointSet(a), SurfacePointSet(b), pct) == directed_percentile_oracle(a, b, pct)

    def test_nearest_rank(self):
        assert nearest_rank_index(95, 20) == 18  # 19th value
        assert nearest_rank_index(95, 1) == 0
        assert nearest_rank_index(100, 7) == 6
        assert nearest_rank_index(50, 4) == 1
        assert nearest_rank_index(95, 100) == 94

    def test_invalid_pct(self):
        p = SurfacePointSet(np.zeros((1, 3)))
        with pytest.raises(ContractError):
            directed_hd_percentile(p, p, 0)
        with pytest.raises(ContractError):
            directed_hd_percentile(p, p, 101)

    def test_empty_set(self):
        with pytest.raises(UndefinedMetricError):
            directed_hd_percentile(SurfacePointSet(np.zeros((0, 3))), SurfacePointSet(np.zeros((1, 3))))

    def test_identical_masks(self, rng):
        a = Mask(random_blob(rng, (10, 10, 6)))
        assert hd95(a, a) == 0.0
        assert hd95(a, a, symmetric=False) == 0.0

    def test_one_slice_apart(self):
        a = _mask((3, 3, 3), [(1, 1, 0)], spacing=(1, 1, 3.6))
        b = _mask((3, 3, 3), [(1, 1, 1)], spacing=(1, 1, 3.6))
        assert hd95(a, b) == pytest.approx(3.6, abs=1e-12)
        assert hd95(a, b, symmetric=False) == pytest.approx(3.6, abs=1e-12)

    def test_empty_mask(self):
        a = _mask((3, 3, 3), [(1, 1, 0)])
        with pytest.raises(UndefinedMetricError):
            hd95(a, Mask(np.zeros((3, 3, 3))))

    def test_directed_is_truth_to_pred(self):
        # truth is a lone voxel inside a large prediction: truth→pred is 0, pred→truth is not
        t = _mask((9, 9, 1), [(4, 4, 0)])
        p = Mask(np.ones((9, 9, 1)))
        assert hd95(t, p, symmetric=False) == 0.0
        assert hd95(p, t, symmetric=False) > 0.0
        assert hd95(t, p) == hd95(p, t) > 0.0

    def test_blobs_vs_oracle(self, rng):
        for _ in range(15):
            shape = tuple(rng.integers(4, 20, size=3))
            spacing = tuple(rng.uniform(0.3, 4.0, size=3))
            a, b = random_blob(rng, shape), random_blob(rng, shape)
            ma, mb = Mask(a, spacing), Mask(b, spacing)
            sym = hd95(ma, mb)
            fwd = hd95(ma, mb, symmetric=False)
            bwd = hd95(mb, ma, symmetric=False)
            assert abs(sym - hd_oracle(a, b, spacing)) <= 1e-9
            assert abs(fwd - hd_oracle(a, b, spacing, symmetric=False)) <= 1e-9
            assert sym >= fwd and sym >= bwd
            assert sym == hd95(mb, ma)


class TestSensSpec:
    def _truth(self, nz, present):
        d = np.zeros((4, 4, nz), bool)
        for z in present:
            d[1, 1, z] = True
        return Mask(d)

    def test_perfect_slices(self):
        truth = self._truth(20, range(4, 16))
        det = [4 <= z < 16 for z in range(20)]
        sens, spec, counts = slice_sens_spec(truth, det)
        assert (sens, spec) == (1.0, 1.0)
        assert counts == CaseCounts(12, 8, 12, 8)

    def test_one_miss_one_false(self):
        truth = self._truth(20, range(4, 16))
        det = [4 <= z < 16 for z in range(20)]
        det[10] = False
        det[0] = True
        sens, spec, _ = slice_sens_spec(truth, det)
        assert sens == 11 / 12 and spec == 7 / 8

    def test_empty_truth(self):
        sens, spec, counts = slice_sens_spec(self._truth(5, []), [False] * 5)
        assert sens is None and spec == 1.0
        assert counts.tp == 0

    def test_all_present_spec_absent(self):
        sens, spec, _ = slice_sens_spec(self._truth(3, range(3)), [True] * 3)
        assert sens == 1.0 and spec is None

    def test_wrong_length(self):
        with pytest.raises(ContractError):
            slice_sens_spec(self._truth(3, []), [True])

    def test_pixel_perfect(self, rng):
        prostate = np.zeros((10, 10, 4), bool)
        prostate[2:8, 2:8] = True
        truth = prostate & (rng.random(prostate.shape) < 0.3)
        pred = truth | ~prostate  # differences outside the prostate are ignored
        sens, spec, _ = pixel_sens_spec(Mask(truth), Mask(pred), Mask(prostate))
        assert (sens, spec) == (1.0, 1.0)

    def test_pixel_empty_pred(self):
        prostate = np.ones((4, 4, 2), bool)
        truth = np.zeros_like(prostate)
        truth[0, 0, 0] = True
        sens, spec, _ = pixel_sens_spec(Mask(truth), Mask(np.zeros_like(truth)), Mask(prostate))
        assert (sens, spec) == (0.0, 1.0)

    def test_pixel_no_truth(self):
        prostate = np.ones((2, 2, 2), bool)
        z = np.zeros_like(prostate)
        sens, spec, _ = pixel_sens_spec(Mask(z), Mask(z), Mask(prostate))
        assert sens is None and spec == 1.0

    def test_empty_prostate(self):
        z = Mask(np.zeros((2, 2, 2)))
        with pytest.raises(ContractError):
            pixel_sens_spec(z, z, z)

    def test_pixel_vs_oracle(self, rng):
        for _ in range(30):
            shape = tuple(rng.integers(2, 16, size=3))
            t, p, pr = (random_blob(rng, shape) for _ in range(3))
            _, _, c = pixel_sens_spec(Mask(t), Mask(p), Mask(pr))
            assert (c.dtp, c.dtn, c.tp, c.tn) == pixel_counts_oracle(t, p, pr)
            assert c.dtp + (c.tp - c.dtp) + c.dtn + (c.tn - c.dtn) == int(pr.sum())


class TestAgreement:
    def _box(self, shape, x0, x1, y0=0, y1=4):
        d = np.zeros(shape, bool)
        d[x0:x1, y0:y1, 0] = True
        return Mask(d)

    def test_two_of_three(self):
        shape = (40, 10, 1)
        gt = [self._box(shape, 0, 8), self._box(shape, 12, 20), self._box(shape, 30, 38)]
        pred = [self._box(shape, 1, 9), self._box(shape, 14, 22)]
        rate, pairs = agreement_rate(gt, pred)
        assert rate == 2 / 3
        assert sorted((g, p) for g, p, _ in pairs) == [(0, 0), (1, 1)]

    def test_identical(self):
        shape = (20, 5, 1)
        gt = [self._box(shape, 0, 5), self._box(shape, 10, 15)]
        assert agreement_rate(gt, gt)[0] == 1.0

    def test_threshold_is_strict(self):
        shape = (20, 1, 1)
        g = self._box(shape, 0, 10, 0, 1)
        p = self._box(shape, 9, 10, 0, 1)  # DSC = 2/11
        assert agreement_rate([g], [p])[0] == 0.0
        p2 = self._box(shape, 8, 10, 0, 1)  # DSC = 4/12 > 0.2
        assert agreement_rate([g], [p2])[0] == 1.0

    def test_flood_one_to_one(self):
        shape = (10, 10, 1)
        g = self._box(shape, 0, 6)
        preds = [g] * 10
        rate, pairs = agreement_rate([g], preds)
        assert rate == 1.0 and len(pairs) == 1

    def test_no_predictions(self):
        g = self._box((5, 5, 1), 0, 2)
        assert agreement_rate([g], [])[0] == 0.0

    def test_empty_gt(self):
        with pytest.raises(UndefinedMetricError):
            agreement_rate([], [])


class TestReport:
    def test_round_trip_and_rounding(self):
        r = MetricsReport(
            mode="lesion-pixel",
            dsc=0.123456789,
            counts=CaseCounts(1, 2, 3, 4),
            hd95_mm=6.1912345,
            hd95_symmetric=True,
            sensitivity=1 / 3,
            specificity=None,
            agreement=2 / 3,
        )
        d = r.to_dict()
        assert d["dsc"] == 0.123457
        assert d["specificity"] is None
        assert d["hd95_symmetric"] is True
        assert d["counts"] == {"dtp": 1, "dtn": 2, "tp": 3, "tn": 4}
        back = MetricsReport.from_dict(d)
        assert back.to_dict() == d


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 2.0, 3.6]))
def test_spacing_covariance_property(seed, c):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(3, 12, size=3))
    spacing = np.asarray(rng.uniform(0.5, 3.0, size=3))
    a, b = random_blob(rng, shape), random_blob(rng, shape)
    base = hd95(Mask(a, spacing), Mask(b, spacing))
    scaled = hd95(Mask(a, spacing * c), Mask(b, spacing * c))
    assert abs(scaled - c * base) <= 1e-9 * max(1.0, c * base)
    assert dsc(Mask(a, spacing), Mask(b, spacing)) == dsc(Mask(a, spacing * c), Mask(b, spacing * c))
