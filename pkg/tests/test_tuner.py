import json

import pytest

from agarcount.core import ColonyClass, SampleAnnotation
from agarcount.errors import EmptyDataset, InvalidThreshold, NoHighCountSamples
from agarcount.metrics import smape
from agarcount.postprocess import NmsConfig, NmsMethod, Priority
from agarcount.synth import bimodal_tuning_config, generate, tuning_dataset
from agarcount.tuner import (
    DualPolicy,
    GridResult,
    GridSpec,
    ThresholdConfig,
    ThresholdPair,
    apply_dual_policy,
    default_workers,
    evaluate_grid,
    evaluate_pair,
    evaluate_policy,
    fit_dual_policy,
    grid_search,
    select_pair,
)

from conftest import det, lab, spurious_fixture

HARD = NmsConfig(NmsMethod.Hard)
TENTHS = GridSpec(prob_values=[round(0.1 * k, 1) for k in range(1, 10)], nms_values=[0.3, 0.5, 0.7])


def crowded(n_strong, n_weak):
    raw = [det(30 * (i % 30), 30 * (i // 30), 20, 20, 0.9) for i in range(n_strong)]
    raw += [det(30 * (i % 30), 500 + 30 * (i // 30), 20, 20, 0.5) for i in range(n_weak)]
    return raw


class TestGridSpec:
    def test_defaults(self):
        g = GridSpec()
        assert g.prob_values[0] == 0.05 and g.prob_values[-1] == 0.95 and len(g.prob_values) == 19
        assert g.nms_values == (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
        assert len(g.pairs()) == 171

    def test_parse(self):
        g = GridSpec.parse("prob=0.1:0.3:0.1,nms=0.5;0.7", tiebreak_band=0.2)
        assert g.prob_values == (0.1, 0.2, 0.3) and g.nms_values == (0.5, 0.7) and g.tiebreak_band == 0.2

    @pytest.mark.parametrize("bad", ["prob=0.3;0.1", "foo=1", "prob=", "prob=0.5;1.5"])
    def test_parse_rejects(self, bad):
        with pytest.raises(InvalidThreshold):
            GridSpec.parse(bad)


class TestEvaluatePair:
    def test_perfect(self):
        rows = [(a, [det(lb.box.x, lb.box.y, lb.box.w, lb.box.h, 1.0) for lb in a.labels]) for a, _ in spurious_fixture()]
        assert evaluate_pair(ThresholdPair(0.0, 0.5), rows) == (0.0, 0.0)

    def test_spurious_removed(self):
        assert evaluate_pair(ThresholdPair(0.4, 0.5), spurious_fixture()) == (0.0, 0.0)

    def test_spurious_kept(self):
        rows = spurious_fixture()
        s, m = evaluate_pair(ThresholdPair(0.2, 0.5), rows)
        expected = smape([a.colonies_number for a, _ in rows], [a.colonies_number + 1 for a, _ in rows])
        assert s == pytest.approx(expected) and s > 0
        assert m == 1.0

    def test_uncountable_ignored(self):
        rows = spurious_fixture(2) + [(SampleAnnotation(99, "dark", (), -1, ()), [det(0, 0, 5, 5)])]
        assert evaluate_pair(ThresholdPair(0.4, 0.5), rows) == (0.0, 0.0)

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            evaluate_pair(ThresholdPair(0.4, 0.5), [])


class TestGridSearch:
    def test_single_point(self):
        g = GridSpec(prob_values=[0.7], nms_values=[0.2])
        assert grid_search(g, spurious_fixture()) == ThresholdPair(0.7, 0.2)

    def test_spurious_argmin_matches_enumeration(self):
        rows = spurious_fixture()
        results = evaluate_grid(TENTHS, rows)
        best = min(r.smape for r in results)
        oracle = min(
            (r for r in results if r.smape <= best + 0.1),
            key=lambda r: (r.mae, r.pair.prob_threshold, r.pair.nms_threshold),
        )
        chosen = grid_search(TENTHS, rows)
        assert chosen == oracle.pair == ThresholdPair(0.4, 0.3)
        assert all(evaluate_pair(chosen, rows)[0] <= r.smape + TENTHS.tiebreak_band for r in results)

    def test_band_prefers_lower_mae(self):
        results = [GridResult(ThresholdPair(0.3, 0.5), 5.00, 3.0), GridResult(ThresholdPair(0.5, 0.5), 5.05, 2.0)]
        assert select_pair(results, 0.1).pair == ThresholdPair(0.5, 0.5)

    def test_outside_band_ignored(self):
        results = [GridResult(ThresholdPair(0.3, 0.5), 5.00, 3.0), GridResult(ThresholdPair(0.5, 0.5), 5.20, 2.0)]
        assert select_pair(results, 0.1).pair == ThresholdPair(0.3, 0.5)

    def test_relative_band(self):
        results = [GridResult(ThresholdPair(0.3, 0.5), 50.0, 3.0), GridResult(ThresholdPair(0.5, 0.5), 50.04, 2.0)]
        assert select_pair(results, 0.1, relative=True).pair == ThresholdPair(0.5, 0.5)
        assert select_pair(results, 0.01, relative=True).pair == ThresholdPair(0.3, 0.5)

    def test_ties_go_low(self):
        results = [GridResult(ThresholdPair(p, n), 1.0, 1.0) for p in (0.6, 0.2) for n in (0.9, 0.4)]
        assert select_pair(list(reversed(results))).pair == ThresholdPair(0.2, 0.4)

    def test_deterministic_and_parallel(self):
        rows = spurious_fixture()
        a = grid_search(TENTHS, rows)
        assert grid_search(TENTHS, rows) == a
        assert grid_search(TENTHS, rows, workers=2) == a


class TestDualPolicy:
    policy = DualPolicy(ThresholdPair(0.8, 0.5), ThresholdPair(0.4, 0.5))

    def test_low_count_stays_general(self):
        assert len(apply_dual_policy(self.policy, crowded(10, 5), HARD)) == 10

    def test_switch(self):
        assert len(apply_dual_policy(self.policy, crowded(51, 21), HARD)) == 72

    def test_exactly_fifty_stays(self):
        assert len(apply_dual_policy(self.policy, crowded(50, 22), HARD)) == 50

    def test_auxiliary_final_even_if_small(self):
        pol = DualPolicy(ThresholdPair(0.4, 0.5), ThresholdPair(0.95, 0.5))
        assert len(apply_dual_policy(pol, crowded(40, 20), HARD)) == 0

    def test_negative_switch(self):
        with pytest.raises(InvalidThreshold):
            DualPolicy(ThresholdPair(0.1, 0.1), ThresholdPair(0.1, 0.1), -1)

    def test_no_high_count(self):
        with pytest.raises(NoHighCountSamples):
            fit_dual_policy(TENTHS, spurious_fixture())

    def test_only_high_count(self):
        rows = []
        for s in range(3):
            raw = crowded(60 + s, 5)
            labels = tuple(lab(i, d.box.x, d.box.y, 20, 20) for i, d in enumerate(raw[: 60 + s]))
            rows.append((SampleAnnotation(s, "dark", (ColonyClass.SAureus,), 60 + s, labels), raw))
        pol = fit_dual_policy(TENTHS, rows, base=HARD)
        assert pol.general == pol.auxiliary

    def test_bimodal(self):
        rows = tuning_dataset(generate(bimodal_tuning_config()))
        grid = GridSpec(prob_values=[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8], nms_values=[0.3, 0.5, 0.7])
        pol = fit_dual_policy(grid, rows, base=HARD)
        assert pol.general != pol.auxiliary
        assert pol.auxiliary.prob_threshold < pol.general.prob_threshold
        gen, aux, mixed = (evaluate_policy(pol, rows, m, HARD) for m in ("general", "auxiliary", "mixed"))
        assert mixed[0] <= gen[0] and mixed[1] <= gen[1]
        assert aux[0] >= mixed[0]

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            evaluate_policy(self.policy, spurious_fixture(), "both")


class TestThresholdConfig:
    def test_round_trip(self):
        cfg = ThresholdConfig(ThresholdPair(0.4, 0.3), NmsConfig(NmsMethod.SoftLinear, priority=Priority.Score, score_floor=0.01), ThresholdPair(0.2, 0.3), 40)
        assert ThresholdConfig.loads(cfg.dumps()) == ThresholdConfig(
            ThresholdPair(0.4, 0.3), NmsConfig(NmsMethod.SoftLinear, priority=Priority.Score, score_floor=0.01), ThresholdPair(0.2, 0.3), 40
        )
        assert cfg.policy == DualPolicy(ThresholdPair(0.4, 0.3), ThresholdPair(0.2, 0.3), 40)

    def test_minimal(self):
        cfg = ThresholdConfig.from_dict({"method": "hard", "prob_threshold": 0.5, "nms_threshold": 0.5})
        assert cfg.policy is None and cfg.nms.method == NmsMethod.Hard
        assert set(json.loads(cfg.dumps())) == {"method", "priority", "score_floor", "prob_threshold", "nms_threshold", "switch_count"}


def test_default_workers(monkeypatch):
    monkeypatch.setenv("PLATE_PIPELINE_THREADS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("PLATE_PIPELINE_THREADS", "many")
    assert default_workers() == 1
    monkeypatch.delenv("PLATE_PIPELINE_THREADS")
    assert default_workers() == 1
