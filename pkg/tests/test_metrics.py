import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajforge.dataset import WindowConfig
from trajforge.forecaster import ForecastOutput
from trajforge.metrics import (MetricsConfig, average_precision, assess_pseudo_quality, eval_batch, eval_sample,
                               eval_set, map_f)

from conftest import cv_traj, make_traj


def naive(modes, conf, gt, k=6, x=2.0):
    best_fde, best_k, best_ade = math.inf, -1, math.inf
    for m in range(k):
        errs = [math.hypot(modes[m, t, 0] - gt[t, 0], modes[m, t, 1] - gt[t, 1]) for t in range(len(gt))]
        best_ade = min(best_ade, sum(errs) / len(errs))
        if errs[-1] < best_fde:
            best_fde, best_k = errs[-1], m
    return best_ade, best_fde, best_fde + (1 - conf[best_k]) ** 2, best_fde > x


def out(modes, conf=None):
    modes = np.asarray(modes, float)
    conf = np.full(len(modes), 1 / len(modes)) if conf is None else np.asarray(conf, float)
    return ForecastOutput(modes, conf)


class TestEvalSample:
    def test_perfect(self):
        gt = np.cumsum(np.ones((60, 2)), axis=0)
        modes = np.zeros((6, 60, 2))
        modes[3] = gt
        conf = np.zeros(6)
        conf[3] = 1.0
        r = eval_sample(out(modes, conf), gt)
        assert (r.min_ade, r.min_fde, r.brier_fde, r.miss) == (0.0, 0.0, 0.0, False)

    def test_brier_example(self):
        gt = np.zeros((10, 2))
        modes = np.full((6, 10, 2), 100.0)
        modes[1, :, 0] = 5.0
        modes[1, :, 1] = 0.0
        conf = np.array([0.1, 0.5, 0.1, 0.1, 0.1, 0.1])
        r = eval_sample(out(modes, conf), gt)
        assert r.min_fde == 5.0 and r.brier_fde == 5.25 and r.miss

    def test_horizon_mismatch(self):
        with pytest.raises(ValueError):
            eval_sample(out(np.zeros((6, 10, 2))), np.zeros((12, 2)))

    def test_too_few_modes(self):
        with pytest.raises(ValueError):
            eval_sample(out(np.zeros((3, 10, 2))), np.zeros((10, 2)))

    def test_matches_naive(self, rng):
        for _ in range(300):
            modes = rng.normal(size=(6, 12, 2)) * 3
            conf = rng.dirichlet(np.ones(6))
            gt = rng.normal(size=(12, 2)) * 3
            r = eval_sample(out(modes, conf), gt)
            ade, fde, brier, miss = naive(modes, conf, gt)
            assert abs(r.min_ade - ade) <= 1e-12 and abs(r.min_fde - fde) <= 1e-12
            assert abs(r.brier_fde - brier) <= 1e-12 and r.miss == miss

    def test_tie_uses_lowest_index(self):
        gt = np.zeros((5, 2))
        modes = np.ones((6, 5, 2))
        conf = np.array([0.6, 0.2, 0.05, 0.05, 0.05, 0.05])
        r = eval_sample(out(modes, conf), gt)
        assert r.best_mode == 0 and r.brier_fde == pytest.approx(math.sqrt(2) + 0.16)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000))
    def test_brier_gap_in_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        r = eval_sample(out(rng.normal(size=(6, 8, 2)), rng.dirichlet(np.ones(6))), rng.normal(size=(8, 2)))
        assert 0.0 <= r.brier_fde - r.min_fde <= 1.0


class TestEvalSet:
    def fixed(self, fdes):
        outs, gts = [], []
        for f in fdes:
            m = np.zeros((6, 4, 2))
            m[:, -1, 0] = f
            outs.append(out(m))
            gts.append(np.zeros((4, 2)))
        return outs, gts

    def test_miss_rate(self):
        outs, gts = self.fixed([1.0, 2.5, 3.0])
        assert eval_set(outs, gts).miss_rate == pytest.approx(2 / 3)

    def test_single_sample(self, rng):
        o = out(rng.normal(size=(6, 5, 2)), rng.dirichlet(np.ones(6)))
        gt = rng.normal(size=(5, 2))
        rep, rec = eval_set([o], [gt]), eval_sample(o, gt)
        assert (rep.min_ade, rep.min_fde, rep.brier_fde, rep.miss_rate) == \
            (rec.min_ade, rec.min_fde, rec.brier_fde, float(rec.miss))

    def test_duplicate_invariant(self, rng):
        outs = [out(rng.normal(size=(6, 5, 2)), rng.dirichlet(np.ones(6))) for _ in range(7)]
        gts = [rng.normal(size=(5, 2)) for _ in range(7)]
        a, b = eval_set(outs, gts), eval_set(outs + outs, gts + gts)
        for k in ("min_ade", "min_fde", "brier_fde", "miss_rate"):
            assert getattr(a, k) == pytest.approx(getattr(b, k), rel=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            eval_set([], [])

    def test_miss_rate_monotone_in_threshold(self, rng):
        modes = rng.normal(size=(50, 6, 5, 2)) * 4
        conf = rng.dirichlet(np.ones(6), size=50)
        gt = rng.normal(size=(50, 5, 2))
        rates = [eval_set((modes, conf), gt, MetricsConfig(miss_threshold=x)).miss_rate for x in (0.5, 1, 2, 4, 8)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            MetricsConfig(k=0)
        with pytest.raises(ValueError):
            MetricsConfig(miss_threshold=0)


class TestQuality:
    def gt(self):
        return [cv_traj(120, v=(2.0, 0.5), start=(0, 0), track_id="a"),
                cv_traj(120, v=(-1.0, 1.0), start=(30, -10), track_id="b")]

    def shifted(self, trajs, dx):
        out = []
        for t in trajs:
            d = t.data.copy()
            d[:, 0] += dx
            out.append(make_traj(d[:, :2], t=t.t, yaw=d[:, 3], track_id="p" + t.track_id, provenance="pseudo:x"))
        return out

    def test_self_match(self):
        r = assess_pseudo_quality(self.gt(), self.gt())
        assert r.min_ade == 0.0 and r.min_fde == 0.0 and r.miss_rate == 0.0 and r.match_rate == 1.0

    def test_far_shift_no_match(self):
        r = assess_pseudo_quality(self.shifted(self.gt(), 3.0), self.gt())
        assert r.empty and r.match_rate == 0.0

    def test_half_meter_offset(self):
        r = assess_pseudo_quality(self.shifted(self.gt(), 0.5), self.gt(), WindowConfig(stride=1))
        assert r.min_ade == pytest.approx(0.5, abs=1e-9) and r.min_fde == pytest.approx(0.5, abs=1e-9)
        assert r.miss_rate == 0.0 and r.match_rate == 1.0

    def test_endpoint_cost(self):
        r = assess_pseudo_quality(self.shifted(self.gt(), 0.5), self.gt(), cfg=MetricsConfig(match_cost="endpoint_past"))
        assert r.match_rate == 1.0


class TestAp:
    def test_hand_example(self):
        assert average_precision(np.array([True, False, True]), 2) == pytest.approx(5 / 6, abs=1e-15)

    def test_no_predictions(self):
        assert average_precision(np.array([], bool), 3) == 0.0

    def test_needs_gt(self):
        with pytest.raises(ValueError):
            average_precision(np.array([True]), 0)


class TestMapF:
    def setup_gt(self, n=4):
        gts = []
        for i in range(n):
            fut = np.stack([np.linspace(1, 10, 6) + 10 * i, np.zeros(6)], axis=1)
            gts.append((np.array([10.0 * i, 0.0]), fut))
        return gts

    def perfect(self, gts, scores):
        return [(s, g[0], np.repeat(g[1][None], 6, axis=0)) for s, g in zip(scores, gts)]

    def test_perfect(self):
        gts = self.setup_gt()
        assert map_f(self.perfect(gts, [0.1, 0.9, 0.5, 0.3]), gts).map_f == 1.0

    def test_all_far(self):
        gts = self.setup_gt()
        preds = [(0.9, g[0] + 50, np.repeat(g[1][None], 6, 0)) for g in gts]
        rep = map_f(preds, gts)
        assert rep.map_f == 0.0 and rep.n_false_predictions == 4 and rep.n_missed_gt == 4

    def test_hand_example(self):
        gts = self.setup_gt(2)
        bad = np.repeat((gts[1][1] + 5)[None], 6, 0)
        preds = [(0.9, gts[0][0], np.repeat(gts[0][1][None], 6, 0)),
                 (0.8, gts[1][0] + 0.5, bad),
                 (0.7, gts[1][0], np.repeat(gts[1][1][None], 6, 0))]
        # the 0.8 prediction takes GT 1 with a bad forecast, so the 0.7 one is unmatched
        rep = map_f(preds, gts)
        assert rep.map_f == pytest.approx(0.5)
        preds[1] = (0.8, gts[1][0] + 50, bad)
        assert map_f(preds, gts).map_f == pytest.approx(5 / 6)

    def test_frames_do_not_cross(self):
        gts = [(g[0], g[1], "f1") for g in self.setup_gt(1)]
        preds = [(0.9, gts[0][0], np.repeat(gts[0][1][None], 6, 0), "f2")]
        assert map_f(preds, gts).map_f == 0.0
        preds = [(0.9, gts[0][0], np.repeat(gts[0][1][None], 6, 0), "f1")]
        assert map_f(preds, gts).map_f == 1.0

    def test_empty_gt(self):
        with pytest.raises(ValueError):
            map_f([], [])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_monotone_score_rescaling(self, seed):
        rng = np.random.default_rng(seed)
        gts = self.setup_gt(5)
        preds = []
        for g in gts:
            for _ in range(2):
                preds.append((float(rng.uniform(0.01, 1)), g[0] + rng.normal(size=2),
                              np.repeat((g[1] + rng.normal(size=(6, 2)) * 2)[None], 6, 0)))
        a = map_f(preds, gts).map_f
        b = map_f([(math.exp(3 * p[0]) + 2, p[1], p[2]) for p in preds], gts).map_f
        assert a == b
        assert 0.0 <= a <= 1.0
