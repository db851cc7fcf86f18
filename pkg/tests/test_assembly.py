import numpy as np
import pytest

from lesion3d.assembly import (
    AssemblyConfig,
    DetectionPool,
    Lesion3D,
    assemble_from_detections,
    assemble_lesion,
    decisions_to_mask,
    dsc_nms_slice,
    estimate_mean_prostate_box,
    extract_top_lesions,
    find_correlated,
    group_by_slice,
    lesions_to_label_volume,
    mean_box_region,
    select_prostate_slices,
)
from lesion3d.errors import ContractError
from lesion3d.metrics import dsc
from lesion3d.phantom import generate_phantom, random_phantom_spec
from lesion3d.volume import Detection, Mask, Volume

from assembly_checks import check_instance, check_nms
from oracles import random_detection_instance

SHAPE = (40, 4)


def strip(z, x0, x1, score, shape=SHAPE, label="lesion"):
    """Detection covering columns x0..x1-1 of every row; DSC between strips is 1-D interval overlap."""
    m = np.zeros(shape, bool)
    m[x0:x1, :] = True
    return Detection(z, m, score, label)


def cols(z, xs, score, shape=SHAPE):
    m = np.zeros(shape, bool)
    m[list(xs), :] = True
    return Detection(z, m, score)


class TestNms:
    def test_identical_pair(self):
        out = dsc_nms_slice([strip(0, 0, 10, 0.6), strip(0, 0, 10, 0.9)])
        assert len(out) == 1
        assert out[0].score == 0.9
        assert np.array_equal(out[0].mask, strip(0, 0, 10, 0.9).mask)

    def test_disjoint_pair(self):
        a, b = strip(0, 0, 5, 0.6), strip(0, 10, 15, 0.9)
        out = dsc_nms_slice([a, b])
        assert out == [a, b]

    def test_threshold_is_strict(self):
        # DSC exactly 0.5 is not above the threshold
        a, b = strip(0, 0, 8, 0.6), strip(0, 4, 12, 0.9)
        assert len(dsc_nms_slice([a, b])) == 2

    def test_cascade(self):
        a = strip(0, 0, 10, 0.7)
        b = strip(0, 4, 14, 0.8)
        c = cols(0, list(range(0, 4)) + list(range(10, 14)), 0.75)
        # C overlaps neither A nor B enough on its own, but does overlap their union
        out = check_nms([a, b, c], AssemblyConfig())
        assert len(out) == 1
        assert out[0].score == 0.8
        assert out[0].bbox == (0, 0, 14, 4)

    def test_mixed_slices(self):
        with pytest.raises(ContractError):
            dsc_nms_slice([strip(0, 0, 4, 0.5), strip(1, 0, 4, 0.5)])

    def test_empty(self):
        assert dsc_nms_slice([]) == []

    def test_random_vs_oracle(self, rng):
        for _ in range(100):
            _, dets = random_detection_instance(rng, max_slices=1)
            if dets:
                check_nms(dets, AssemblyConfig())


class TestFindCorrelated:
    def test_selected(self):
        ref = strip(0, 0, 10, 0.9)
        c = strip(1, 4, 14, 0.9)  # DSC 2*6/20 = 0.6
        assert find_correlated(ref, [c]) is c

    def test_score_too_low(self):
        ref = strip(0, 0, 10, 0.9)
        c = strip(1, 0, 9, 0.6)  # DSC 18/19
        assert find_correlated(ref, [c]) is None

    def test_argmax_dsc(self):
        ref = strip(0, 0, 10, 0.9)
        c5 = strip(1, 5, 15, 0.95)  # DSC 0.5
        c8 = strip(1, 2, 12, 0.8)  # DSC 0.8
        assert find_correlated(ref, [c5, c8]) is c8

    def test_dsc_threshold_inclusive(self):
        a = np.zeros((200, 1), bool)
        a[:50] = True
        b = np.zeros((200, 1), bool)
        b[9:159] = True  # 150 px, 41 shared: DSC 82/200 = 0.41
        ref = Detection(0, a, 0.9)
        cand = Detection(1, b, 0.9)
        assert find_correlated(ref, [cand]) is cand
        b[9] = False
        b[159] = True  # 40 shared
        assert find_correlated(ref, [Detection(1, b, 0.9)]) is None

    def test_score_threshold_inclusive(self):
        ref = strip(0, 0, 10, 0.9)
        c = strip(1, 0, 10, 0.7)
        assert find_correlated(ref, [c]) is c

    def test_empty(self):
        assert find_correlated(strip(0, 0, 4, 0.9), []) is None

    def test_not_adjacent(self):
        with pytest.raises(ContractError):
            find_correlated(strip(0, 0, 4, 0.9), [strip(2, 0, 4, 0.9)])

    def test_best_overlap_gated_by_score(self):
        # the closest shape is weak, so the chain stops rather than jumping to a worse shape
        ref = strip(0, 0, 10, 0.9)
        weak = strip(1, 0, 10, 0.5)
        strong = strip(1, 3, 13, 0.95)  # DSC 0.7
        assert find_correlated(ref, [weak, strong]) is None


def _pool(dets):
    return DetectionPool.from_detections(dets)


class TestAssembleLesion:
    def test_three_slice(self):
        dets = [strip(z, 0, 10, s) for z, s in [(4, 0.8), (5, 0.95), (6, 0.85)]]
        pool = _pool(dets)
        seed = pool.slices[5][0]
        les = assemble_lesion(seed, pool)
        assert les.z_range == (4, 6)
        assert les.score == 0.95
        assert les.constituent_scores == (0.8, 0.95, 0.85)
        assert pool.remaining() == 0

    def test_isolated_seed(self):
        dets = [strip(5, 0, 10, 0.95), strip(6, 20, 30, 0.9)]
        pool = _pool(dets)
        les = assemble_lesion(pool.slices[5][0], pool)
        assert les.z_range == (5, 5)
        assert pool.remaining() == 1

    def test_seed_exempt_from_score_threshold(self):
        pool = _pool([strip(3, 0, 10, 0.3)])
        les = assemble_lesion(pool.slices[3][0], pool)
        assert les.n_slices == 1 and les.score == 0.3

    def test_seed_not_in_pool(self):
        with pytest.raises(ContractError):
            assemble_lesion(strip(0, 0, 4, 0.9), _pool([strip(0, 0, 4, 0.9)]))

    def test_consumed_seed(self):
        pool = _pool([strip(0, 0, 4, 0.9)])
        seed = pool.slices[0][0]
        assemble_lesion(seed, pool)
        with pytest.raises(ContractError):
            assemble_lesion(seed, pool)

    def test_reference_follows_chain(self):
        # a drifting lesion: each slice overlaps its neighbour well but not the seed
        dets = [strip(z, 3 * z, 3 * z + 10, 0.9 if z else 0.99) for z in range(5)]
        les = extract_top_lesions(_pool(dets))[0]
        assert les.z_range == (0, 4)

    def test_hand_traced_chain(self):
        # slice: 0     1     2     3     4     5     6
        # link:   ok    ok   0.40   seed  ok   0.69 score
        dets = [
            strip(0, 0, 10, 0.80),
            strip(1, 0, 10, 0.85),
            strip(2, 6, 16, 0.90),  # DSC with slice 3 = 2*4/20 = 0.40
            strip(3, 0, 10, 0.97),
            strip(4, 0, 10, 0.92),
            strip(5, 0, 10, 0.69),
            strip(6, 0, 10, 0.88),
        ]
        lesions = extract_top_lesions(_pool(dets))
        assert lesions[0].z_range == (3, 4)
        # remaining detections form further lesions by seed order
        ranges = [l.z_range for l in lesions]
        assert ranges == [(3, 4), (2, 2), (6, 6), (0, 1), (5, 5)]


class TestExtract:
    def test_single_stack(self):
        out = extract_top_lesions(_pool([strip(z, 0, 10, 0.9) for z in range(3)]))
        assert len(out) == 1 and out[0].rank == 1

    def test_two_stacks(self):
        dets = [strip(z, 0, 10, 0.95) for z in range(3)] + [strip(z, 20, 30, 0.85) for z in range(3)]
        a, b = extract_top_lesions(_pool(dets))
        assert (a.rank, a.score, b.rank, b.score) == (1, 0.95, 2, 0.85)
        assert a.to_dict()["slice_range"] == [0, 2]

    def test_empty(self):
        assert extract_top_lesions(DetectionPool({})) == []

    def test_seed_tie_breaks(self):
        dets = [strip(4, 0, 5, 0.9), strip(2, 10, 15, 0.9), strip(2, 20, 25, 0.9)]
        out = extract_top_lesions(_pool(dets))
        assert [l.z_range for l in out] == [(2, 2), (2, 2), (4, 4)]
        assert out[0].slices[2][10, 0] and out[1].slices[2][20, 0]

    def test_seven_stacks_top_five(self):
        spec = random_phantom_spec(3, 7)
        case = generate_phantom(spec)
        lesions = assemble_from_detections(case.detections)
        assert len(lesions) == 5
        peaks = sorted((l.peak_score for l in spec.lesions), reverse=True)[:5]
        assert [l.score for l in lesions] == pytest.approx(peaks)
        order = np.argsort([-l.peak_score for l in spec.lesions], kind="stable")
        for les, k in zip(lesions, order):
            assert dsc(les.to_mask(case.prostate), case.lesions[k]) >= 0.99

    def test_prostate_gate(self):
        prostate = np.zeros((40, 4, 3), bool)
        prostate[:20] = True
        dets = [strip(0, 0, 10, 0.9), strip(0, 25, 35, 0.95)]
        out = assemble_from_detections(dets, prostate=Mask(prostate))
        assert len(out) == 1 and out[0].score == 0.9

    def test_label_volume(self):
        dets = [strip(0, 0, 10, 0.95), strip(1, 20, 30, 0.85)]
        lesions = extract_top_lesions(_pool(dets))
        grid = Volume(np.zeros((40, 4, 2)))
        lab = lesions_to_label_volume(lesions, grid)
        assert set(np.unique(lab.data)) == {0.0, 1.0, 2.0}
        assert lab.data[0, 0, 0] == 1 and lab.data[25, 0, 1] == 2

    def test_random_invariants(self, rng):
        for _ in range(100):
            _, dets = random_detection_instance(rng)
            check_instance(dets)


class TestProstateSlices:
    def test_argmax(self):
        a, b = strip(0, 0, 5, 0.4, label="prostate"), strip(0, 10, 15, 0.8, label="prostate")
        dec = select_prostate_slices([[a, b], []])
        assert dec[0].present and dec[0].chosen is b
        assert not dec[1].present and dec[1].chosen is None

    def test_ties_take_first(self):
        a, b = strip(0, 0, 5, 0.8), strip(0, 10, 15, 0.8)
        assert select_prostate_slices([[a, b]])[0].chosen is a

    def test_twenty_slices_vs_scan(self, rng):
        per = []
        for z in range(20):
            per.append([strip(z, int(x), int(x) + 3, float(s)) for x, s in zip(rng.integers(0, 30, 3), rng.random(int(rng.integers(0, 4))))])
        dec = select_prostate_slices(per)
        for z, dets in enumerate(per):
            if not dets:
                assert not dec[z].present
            else:
                best = max(range(len(dets)), key=lambda i: (dets[i].score, -i))
                assert dec[z].chosen is dets[best]
        mask = decisions_to_mask(dec, Volume(np.zeros((40, 4, 20))))
        assert [bool(mask.data[:, :, z].any()) for z in range(20)] == [d.present for d in dec]

    def test_group_by_slice(self):
        out = group_by_slice([strip(1, 0, 4, 0.5, label="prostate"), strip(1, 0, 4, 0.5)], 3, label="prostate")
        assert [len(v) for v in out] == [0, 1, 0]
        with pytest.raises(ContractError):
            group_by_slice([strip(5, 0, 4, 0.5)], 3)


class TestMeanBox:
    def test_two_squares(self):
        d = np.zeros((300, 300, 2), bool)
        d[100:200, 100:200, 0] = True
        d[50:250, 50:250, 1] = True
        side, centre = estimate_mean_prostate_box([Mask(d)])
        assert side == 150 and centre == (150.0, 150.0)

    def test_rectangle(self):
        d = np.zeros((100, 100, 1), bool)
        d[10:50, 20:80, 0] = True
        side, _ = estimate_mean_prostate_box([Mask(d)])
        assert side == 60

    def test_random_vs_scan(self, rng):
        masks = [Mask(rng.random((12, 10, 4)) < 0.05) for _ in range(3)]
        sides, cx, cy = [], [], []
        for m in masks:
            for z in range(4):
                pts = np.argwhere(m.data[:, :, z])
                if len(pts):
                    w = pts[:, 0].max() - pts[:, 0].min() + 1
                    h = pts[:, 1].max() - pts[:, 1].min() + 1
                    sides.append(max(w, h))
                    cx.append((pts[:, 0].max() + pts[:, 0].min() + 1) / 2)
                    cy.append((pts[:, 1].max() + pts[:, 1].min() + 1) / 2)
        side, centre = estimate_mean_prostate_box(masks)
        assert side == pytest.approx(np.mean(sides))
        assert centre == pytest.approx((np.mean(cx), np.mean(cy)))

    def test_no_prostate(self):
        with pytest.raises(ContractError):
            estimate_mean_prostate_box([Mask(np.zeros((3, 3, 3)))])

    def test_region(self):
        r = mean_box_region(4, (5.0, 5.0), (10, 10))
        assert r.sum() == 16 and r[3:7, 3:7].all()


def test_config_validation():
    with pytest.raises(ContractError):
        AssemblyConfig(score_threshold=1.5)
    with pytest.raises(ContractError):
        AssemblyConfig.from_dict({"bogus": 1})
    assert AssemblyConfig.from_dict({"max_lesions": 3}).max_lesions == 3


def test_lesion_to_dict_uses_rle():
    les = Lesion3D({2: np.ones((2, 2), bool)}, 0.9, 1, (0.9,))
    d = les.to_dict()
    assert d["slices"]["2"] == {"width": 2, "height": 2, "runs": [0, 4]}
