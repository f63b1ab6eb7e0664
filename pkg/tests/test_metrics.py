import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agarcount.core import BBox, ColonyClass, Detection, Label, SampleAnnotation, iou
from agarcount.errors import EmptyInput, InvalidThreshold, LengthMismatch, MissingSample
from agarcount.metrics import (
    DEFAULT_IOU_THRESHOLDS,
    MatchOutcome,
    PRPoint,
    average_precision,
    cmae,
    count_report,
    map_report,
    mae,
    match_detections,
    match_outcome,
    per_class_mae,
    pr_curve,
    smape,
)
from agarcount.oracles import oracle_best_matching
from agarcount.synth import SynthConfig, generate

from conftest import det, lab

E, S, P, B, C = (ColonyClass.EColi, ColonyClass.SAureus, ColonyClass.PAeruginosa, ColonyClass.BSubtilis, ColonyClass.CAlbicans)


def curve(*pts):
    return [PRPoint(r, p, 1.0 - k / 100) for k, (r, p) in enumerate(pts)]


def shifted(box, frac):
    return BBox(box.x + frac * box.w, box.y, box.w, box.h)


def synth_gt_and_dets(n=50, seed=3, jitter=0.0):
    samples = generate(SynthConfig(seed=seed, n_samples=n, count_distribution="low", size_profile="small"))
    gt = {s.annotation.sample_id: list(s.annotation.labels) for s in samples}
    dets = {
        s.annotation.sample_id: [Detection(shifted(d.box, jitter), d.cls, d.score) for d in s.ideal_detections]
        for s in samples
    }
    return gt, dets


class TestMatching:
    def test_perfect(self):
        gt = [lab(i, 30 * i, 0, 20, 20) for i in range(4)]
        dets = [det(30 * i, 0, 20, 20, 0.5 + i / 10) for i in range(4)]
        assert match_outcome(gt, dets, 0.5) == MatchOutcome(tp=4, fp=0, fn=0)

    def test_wrong_class(self):
        assert match_outcome([lab(1, 0, 0, 10, 10, E)], [det(0, 0, 10, 10, cls=S)], 0.5) == MatchOutcome(0, 1, 1)

    def test_score_order_wins_over_iou(self):
        g = lab(1, 0, 0, 100, 100)
        hi_iou = det(0, 0, 100, 90, 0.8)
        lo_iou = det(0, 0, 100, 60, 0.9)
        assert iou(hi_iou.box, g.box) == pytest.approx(0.9) and iou(lo_iou.box, g.box) == pytest.approx(0.6)
        assert match_detections([g], [hi_iou, lo_iou], 0.5) == [(1, 0), (0, None)]
        assert oracle_best_matching([g], [hi_iou, lo_iou], 0.5) == 1

    def test_threshold_inclusive(self):
        g = lab(1, 0, 0, 100, 100)
        d = det(0, 0, 100, 50)
        assert match_outcome([g], [d], 0.5).tp == 1

    def test_best_iou_gt_taken(self):
        gts = [lab(1, 0, 0, 100, 100), lab(2, 10, 0, 100, 100)]
        assert match_detections(gts, [det(9, 0, 100, 100)], 0.5) == [(0, 1)]

    @pytest.mark.parametrize("t", [0.0, -0.1, 1.5])
    def test_invalid_threshold(self, t):
        with pytest.raises(InvalidThreshold):
            match_detections([], [det(0, 0, 1, 1)], t)

    def test_no_detections(self):
        assert match_outcome([lab(1, 0, 0, 5, 5)], [], 0.5) == MatchOutcome(0, 0, 1)

    def test_outcome_addition(self):
        assert MatchOutcome(1, 2, 3) + MatchOutcome(4, 5, 6) == MatchOutcome(5, 7, 9)

    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.3, 0.5, 0.75]))
    @settings(max_examples=80, deadline=None)
    def test_tallies_and_oracle_bound(self, seed, t):
        rng = np.random.default_rng(seed)
        gt = [lab(i, *rng.integers(0, 60, 2), *rng.integers(10, 40, 2), cls=[E, S][rng.integers(2)]) for i in range(rng.integers(0, 6))]
        dets = [det(*rng.integers(0, 60, 2), *rng.integers(10, 40, 2), float(rng.random()), [E, S][rng.integers(2)]) for _ in range(rng.integers(0, 6))]
        out = match_outcome(gt, dets, t)
        assert out.tp + out.fn == len(gt) and out.tp + out.fp == len(dets)
        assert 0 <= out.precision <= 1 and 0 <= out.recall <= 1
        # greedy can never beat the maximum assignment
        assert out.tp <= oracle_best_matching(gt, dets, t)

    def test_greedy_optimal_on_separated_fixtures(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = int(rng.integers(1, 7))
            gt = [lab(i, 100 * i, 0, 40, 40, [E, S][i % 2]) for i in range(n)]
            dets = []
            for g in gt:
                if rng.random() < 0.8:
                    dx = float(rng.uniform(-12, 12))
                    dets.append(Detection(BBox(g.box.x + dx, 0, 40, 40), g.cls, float(rng.random())))
            dets = dets[:6]
            assert match_outcome(gt, dets, 0.5).tp == oracle_best_matching(gt, dets, 0.5)


class TestPrCurve:
    def test_empty_detections(self):
        assert pr_curve([lab(1, 0, 0, 5, 5)], [], 0.5) == [PRPoint(0.0, 1.0, math.inf)]

    def test_perfect_reaches_one(self):
        gt = [lab(i, 30 * i, 0, 20, 20) for i in range(3)]
        pts = pr_curve(gt, [det(30 * i, 0, 20, 20, 0.9) for i in range(3)], 0.5)
        assert (pts[-1].recall, pts[-1].precision) == (1.0, 1.0)

    def test_tp_then_fp(self):
        pts = pr_curve([lab(1, 0, 0, 10, 10)], [det(0, 0, 10, 10, 0.9), det(50, 50, 10, 10, 0.8)], 0.5)
        assert [(p.recall, p.precision) for p in pts] == [(1.0, 1.0), (1.0, 0.5)]
        assert [p.score_cutoff for p in pts] == [0.9, 0.8]

    def test_tied_scores_share_a_point(self):
        pts = pr_curve([lab(1, 0, 0, 10, 10)], [det(0, 0, 10, 10, 0.7), det(50, 50, 10, 10, 0.7)], 0.5)
        assert [(p.recall, p.precision) for p in pts] == [(1.0, 0.5)]


class TestAveragePrecision:
    def test_constant_one(self):
        assert average_precision(curve((0, 1), (0.5, 1), (1, 1))) == 1.0

    def test_constant_zero(self):
        assert average_precision(curve((0, 0), (1, 0))) == 0.0

    def test_drop_at_full_recall(self):
        assert average_precision(curve((1, 1), (1, 0.5))) == 1.0

    def test_unreached_recall_earns_nothing(self):
        assert average_precision(curve((0.5, 1))) == pytest.approx(0.5 + 0.5 * 0.0)

    def test_empty_detector(self):
        assert average_precision([PRPoint(0.0, 1.0, math.inf)]) == 0.0

    def test_hand_trapezoid(self):
        # (0,1) -> (0.5,1) -> (0.5,0.5) -> (1,0.5) -> closes at (1,0)
        assert average_precision(curve((0.5, 1), (0.5, 0.5), (1, 0.5))) == pytest.approx(0.75)

    def test_empty_curve(self):
        with pytest.raises(EmptyInput):
            average_precision([])

    def test_coco101(self):
        assert average_precision(curve((1, 1)), "coco101") == pytest.approx(1.0)
        assert average_precision(curve((0.5, 1)), "coco101") == pytest.approx(51 / 101)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            average_precision(curve((1, 1)), "eleven")


class TestMapReport:
    def test_perfect(self):
        gt, dets = synth_gt_and_dets(10)
        rep = map_report(gt, dets)
        assert rep.mean == 1.0 and all(v == 1.0 for v in rep.per_iou.values())
        assert all(d["mean"] == 1.0 for d in rep.per_class.values())

    def test_empty(self):
        gt, _ = synth_gt_and_dets(10)
        rep = map_report(gt, {k: [] for k in gt})
        assert rep.mean == 0.0 and set(rep.per_iou) == set(DEFAULT_IOU_THRESHOLDS)

    def test_jitter_separates_thresholds(self):
        gt, dets = synth_gt_and_dets(10, jitter=0.1)
        rep = map_report(gt, dets)
        assert rep.per_iou[0.5] > rep.per_iou[0.95]

    def test_missing_sample(self):
        with pytest.raises(MissingSample):
            map_report({1: []}, {2: []})

    def test_classes_without_gt_skipped(self):
        rep = map_report({1: [lab(1, 0, 0, 10, 10, E)]}, {1: [det(0, 0, 10, 10, cls=E), det(0, 0, 10, 10, cls=S)]})
        assert list(rep.per_class) == [E]

    def test_pooled_across_samples(self):
        gt = {1: [lab(1, 0, 0, 10, 10)], 2: [lab(1, 0, 0, 10, 10)]}
        # the only false positive scores highest, so pooling gives (0, 0) -> (0.5, 0.5) -> (1, 2/3)
        dets = {1: [det(0, 0, 10, 10, 0.5), det(50, 50, 5, 5, 0.95)], 2: [det(0, 0, 10, 10, 0.4)]}
        rep = map_report(gt, dets, thresholds=[0.5])
        expected = np.trapezoid([0, 0, 0.5, 2 / 3, 0, 0], [0, 0, 0.5, 1, 1, 1])
        assert rep.per_iou[0.5] == pytest.approx(expected)

    def test_table_and_dict(self):
        gt, dets = synth_gt_and_dets(5)
        rep = map_report(gt, dets, thresholds=[0.5, 0.75])
        table = rep.to_table().splitlines()
        assert table[0].split()[0] == "IoU" and table[-1].split()[0] == "mAP"
        assert len(table) == 4
        assert rep.to_dict()["per_iou"] == {"0.50": 1.0, "0.75": 1.0}

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_ap_non_increasing_in_threshold(self, seed):
        rng = np.random.default_rng(seed)
        gt, dets = {}, {}
        for s in range(3):
            boxes = [BBox(float(60 * k), float(rng.integers(0, 40)), float(rng.integers(15, 40)), float(rng.integers(15, 40))) for k in range(int(rng.integers(1, 6)))]
            gt[s] = [Label(k, E, b) for k, b in enumerate(boxes)]
            dets[s] = [Detection(BBox(b.x + rng.normal(0, 3), b.y + rng.normal(0, 3), b.w, b.h), E, float(rng.random())) for b in boxes if rng.random() < 0.9]
        aps = list(map_report(gt, dets).per_iou.values())
        assert all(a >= b - 1e-12 for a, b in zip(aps, aps[1:]))


class TestCountingMetrics:
    def test_mae_values(self):
        assert mae([3, 4], [3, 4]) == 0
        assert mae([10, 20], [12, 17]) == pytest.approx(2.5, abs=1e-9)
        assert mae([0], [3]) == pytest.approx(3.0, abs=1e-9)

    def test_smape_values(self):
        assert smape([5, 6], [5, 6]) == 0
        assert smape([0], [0]) == 0
        assert smape([50], [40]) == pytest.approx(100 * 10 / 90, abs=1e-9)
        assert smape([0, 0], [0, 4]) == pytest.approx(50.0, abs=1e-9)

    def test_cmae_values(self):
        truth = {E: [1, 1], S: [0, 0], P: [2, 2], B: [0, 0], C: [5, 5]}
        pred = {E: [2, 1], S: [0, 0.4], P: [2, 2], B: [0.6, 0], C: [5, 5]}
        assert per_class_mae(truth, pred) == pytest.approx({E: 0.5, S: 0.2, P: 0.0, B: 0.3, C: 0.0})
        assert cmae(truth, pred) == pytest.approx(1.0, abs=1e-9)
        assert cmae(truth, truth) == 0

    def test_cmae_ignores_non_microbes(self):
        assert cmae({E: [1], ColonyClass.Defect: [4]}, {E: [1], ColonyClass.Defect: [0]}) == 0

    def test_misclassification(self):
        samples = [
            SampleAnnotation(1, "dark", (E,), 1, (lab(1, 0, 0, 10, 10, E),)),
            SampleAnnotation(2, "dark", (E,), 1, (lab(1, 0, 0, 10, 10, E),)),
        ]
        preds = {1: [det(0, 0, 10, 10, cls=S)], 2: [det(0, 0, 10, 10, cls=E)]}
        rep = count_report(samples, preds)
        assert rep.mae == 0
        assert rep.cmae == pytest.approx(2 / 2, abs=1e-9)

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            mae([1], [1, 2])
        with pytest.raises(EmptyInput):
            smape([], [])
        with pytest.raises(LengthMismatch):
            cmae({E: [1]}, {E: [1, 2]})
        with pytest.raises(ValueError):
            smape([-1], [1])

    @given(st.lists(st.tuples(st.integers(0, 400), st.integers(0, 400)), min_size=1, max_size=30), st.integers(0, 7))
    def test_properties(self, pairs, c):
        t, p = zip(*pairs)
        assert smape(t, p) == pytest.approx(smape(p, t))
        assert 0 <= smape(t, p) <= 100
        assert mae([c * x for x in t], [c * x for x in p]) == pytest.approx(c * mae(t, p))

    @given(st.lists(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50)), min_size=5, max_size=5), min_size=1, max_size=10))
    def test_cmae_bounds_total_error(self, rows):
        truth = {c: [r[k][0] for r in rows] for k, c in enumerate([E, S, P, B, C])}
        pred = {c: [r[k][1] for r in rows] for k, c in enumerate([E, S, P, B, C])}
        total_t = [sum(r[k][0] for k in range(5)) for r in rows]
        total_p = [sum(r[k][1] for k in range(5)) for r in rows]
        assert cmae(truth, pred) >= mae(total_t, total_p) - 1e-9


class TestCountReport:
    def test_uncountable_skipped_and_missing_predicted_empty(self):
        samples = [
            SampleAnnotation(1, "dark", (E,), 2, (lab(1, 0, 0, 5, 5, E), lab(2, 10, 0, 5, 5, E))),
            SampleAnnotation(2, "dark", (E,), -1, ()),
            SampleAnnotation(3, "dark", (), 0, ()),
        ]
        rep = count_report(samples, {1: [det(0, 0, 5, 5, cls=E)]})
        assert rep.n_samples == 2
        assert rep.mae == 0.5
        assert rep.smape == pytest.approx(100 * (1 / 3) / 2)
        assert rep.to_dict()["K"] == 5

    def test_all_uncountable(self):
        with pytest.raises(EmptyInput):
            count_report([SampleAnnotation(2, "dark", (E,), -1, ())], {})
