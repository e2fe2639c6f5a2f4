import math

import numpy as np
import pytest

from jointrait.errors import ConfigurationError, DataError
from jointrait.evaluation import (
    EvalConfig,
    EvalRecord,
    brier,
    censoring_km_factory,
    censoring_weight,
    kernel_km,
    roc_auc,
)


def rec(i, risk, time, event):
    return EvalRecord(id=f"r{i}", risk=risk, time=time, event=event)


def brute_force_concordance(cases, controls):
    wins = 0.0
    for c in cases:
        for k in controls:
            if c > k:
                wins += 1.0
            elif c == k:
                wins += 0.5
    return wins / (len(cases) * len(controls))


class TestKernelKM:
    def test_all_inclusive_kernel_is_leave_one_out_km(self):
        records = [rec(1, 0.1, 2.0, 1), rec(2, 0.9, 4.0, 1), rec(3, 0.5, 5.0, 0), rec(4, 0.3, 6.0, 1)]
        target = records[2]
        # d >= 1: everyone in window; product-limit over events at 2 and 4
        # s=2: 1 death, 3 at risk; s=4: 1 death, 2 at risk
        assert kernel_km(records, target, 5.0, bandwidth=1.0) == pytest.approx((2 / 3) * (1 / 2))

    def test_no_events_before_time_is_one(self):
        records = [rec(1, 0.2, 9.0, 1), rec(2, 0.4, 8.0, 0), rec(3, 0.5, 7.0, 0)]
        assert kernel_km(records, records[1], 5.0, bandwidth=1.0) == 1.0

    def test_hand_computed_five_record_fixture(self):
        records = [
            rec(1, 0.50, 2.0, 1),
            rec(2, 0.55, 4.0, 1),
            rec(3, 0.58, 5.0, 0),
            rec(4, 0.90, 3.0, 1),
            rec(5, 0.52, 6.0, 1),
        ]
        # window of r3 at d=0.1 excludes r4; events at 2 (3 at risk) and 4 (2 at risk)
        got = kernel_km(records, records[2], 5.0, bandwidth=0.1)
        assert got == pytest.approx((2 / 3) * (1 / 2), abs=1e-15)

    def test_empty_neighborhood_falls_back_to_unweighted(self):
        records = [rec(1, 0.05, 2.0, 1), rec(2, 0.06, 4.0, 1), rec(3, 0.99, 5.0, 0)]
        narrow = kernel_km(records, records[2], 5.0, bandwidth=0.01)
        wide = kernel_km(records, records[2], 5.0, bandwidth=1.0)
        assert narrow == wide

    def test_nonincreasing_in_time(self):
        rng = np.random.default_rng(2)
        records = [rec(i, float(rng.uniform()), float(rng.uniform(1, 20)), int(rng.integers(0, 2))) for i in range(25)]
        target = records[0]
        values = [kernel_km(records, target, t, 0.2) for t in np.linspace(0.5, 25, 30)]
        assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))


class TestCensoringWeight:
    def test_event_in_window(self):
        assert censoring_weight(rec(1, 0.4, 5.0, 1), 3.0, 12.0, 0.9, 1.0) == 1.0

    def test_before_landmark_plays_no_role(self):
        assert censoring_weight(rec(1, 0.4, 2.0, 1), 3.0, 12.0, 0.9, 1.0) == 0.0

    def test_after_horizon_is_control(self):
        assert censoring_weight(rec(1, 0.4, 14.0, 0), 3.0, 12.0, 0.9, 1.0) == 0.0

    def test_censored_in_window_ratio(self):
        w = censoring_weight(rec(1, 0.4, 5.0, 0), 3.0, 12.0, 0.8, 1.0)
        assert w == pytest.approx(0.2, abs=1e-15)

    def test_zero_denominator_warns_and_zeroes(self):
        with pytest.warns(UserWarning):
            assert censoring_weight(rec(1, 0.4, 5.0, 0), 3.0, 12.0, 0.5, 0.0) == 0.0


class TestRocAuc:
    def config(self, **kw):
        defaults = dict(landmark=1.0, horizon=10.0)
        defaults.update(kw)
        return EvalConfig(**defaults)

    def test_perfect_separation(self):
        records = [
            rec(1, 0.9, 5.0, 1),
            rec(2, 0.7, 6.0, 1),
            rec(3, 0.4, 12.0, 1),
            rec(4, 0.2, 14.0, 1),
        ]
        assert roc_auc(records, self.config()).auc == pytest.approx(1.0, abs=1e-12)

    def test_hand_computed_three_quarters(self):
        records = [
            rec(1, 0.9, 5.0, 1),
            rec(2, 0.3, 6.0, 1),
            rec(3, 0.5, 12.0, 1),
            rec(4, 0.1, 14.0, 1),
        ]
        assert roc_auc(records, self.config()).auc == pytest.approx(0.75, abs=1e-12)

    def test_constant_predictions_give_half(self):
        records = [rec(1, 0.5, 5.0, 1), rec(2, 0.5, 6.0, 1), rec(3, 0.5, 12.0, 1), rec(4, 0.5, 14.0, 1)]
        assert roc_auc(records, self.config()).auc == pytest.approx(0.5, abs=1e-12)

    def test_uncensored_equals_brute_force_concordance(self):
        for seed in range(40):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(6, 31))
            records = []
            cases = []
            controls = []
            for i in range(n):
                risk = float(np.round(rng.uniform(), 3))
                if rng.uniform() < 0.5:
                    records.append(rec(i, risk, float(rng.uniform(1.5, 10.0)), 1))
                    cases.append(risk)
                else:
                    records.append(rec(i, risk, float(rng.uniform(10.5, 20.0)), 1))
                    controls.append(risk)
            if not cases or not controls:
                continue
            expected = brute_force_concordance(cases, controls)
            assert roc_auc(records, self.config()).auc == pytest.approx(expected, abs=1e-12)

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(7)
        records = [
            rec(i, float(rng.uniform()), float(rng.uniform(1.5, 20.0)), 1) for i in range(30)
        ]
        base = roc_auc(records, self.config()).auc
        transformed = [rec(r.id, r.risk**3, r.time, r.event) for r in records]
        assert roc_auc(transformed, self.config()).auc == pytest.approx(base, abs=1e-12)

    def test_sensitivity_specificity_monotone_in_cutpoint(self):
        rng = np.random.default_rng(13)
        records = [
            rec(i, float(rng.uniform()), float(rng.uniform(1.5, 20.0)), int(rng.integers(0, 2)))
            for i in range(40)
        ]
        result = roc_auc(records, self.config())
        assert np.all(np.diff(result.sensitivity) <= 1e-12)
        assert np.all(np.diff(result.specificity) >= -1e-12)

    def test_degenerate_flagged(self):
        records = [rec(1, 0.5, 12.0, 1), rec(2, 0.1, 14.0, 1)]  # no cases
        result = roc_auc(records, self.config())
        assert not result.defined
        assert math.isnan(result.auc)

    def test_censored_case_weights_engage(self):
        records = [
            rec(1, 0.8, 5.0, 1),
            rec(2, 0.75, 6.0, 0),  # censored in window: partial case
            rec(3, 0.3, 12.0, 0),
            rec(4, 0.2, 14.0, 1),
            rec(5, 0.7, 4.0, 1),
            rec(6, 0.72, 20.0, 0),
            rec(7, 0.78, 8.0, 1),
        ]
        result = roc_auc(records, self.config())
        assert 0.0 < result.auc <= 1.0
        # r2's neighborhood {r1, r5, r6, r7}: S(6) = (3/4)(2/3) = 1/2 and
        # S(10) = (3/4)(2/3)(1/2) = 1/4, so its case weight is 1 - 1/2 = 1/2
        assert result.n_cases == pytest.approx(3.5, abs=1e-12)


class TestBrier:
    def config(self, **kw):
        defaults = dict(landmark=1.0, horizon=10.0)
        defaults.update(kw)
        return EvalConfig(**defaults)

    def test_perfect_prediction_zero(self):
        records = [rec(1, 1.0, 5.0, 1), rec(2, 0.0, 12.0, 1), rec(3, 1.0, 7.0, 1), rec(4, 0.0, 15.0, 1)]
        assert brier(records, self.config()) == 0.0

    def test_uninformative_half_gives_quarter(self):
        records = [rec(i, 0.5, t, 1) for i, t in enumerate((5.0, 7.0, 12.0, 15.0))]
        assert brier(records, self.config()) == pytest.approx(0.25, abs=1e-15)

    def test_hand_computed_mixed_censoring_fixture(self):
        records = [
            rec(1, 0.8, 5.0, 1),
            rec(2, 0.3, 12.0, 1),
            rec(3, 0.5, 7.0, 0),
            rec(4, 0.6, 9.0, 1),
            rec(5, 0.2, 15.0, 0),
            rec(6, 0.4, 11.0, 0),
        ]
        # censoring KM steps: S0(7)=4/5, S0(11)=8/15, S0(15)=0
        # weights: A 1*(0.2)^2, B 1.25*(0.3)^2, C skipped, D 1.25*(0.4)^2,
        #          E 1.25*(0.2)^2, F 1.25*(0.4)^2; divide by N_t = 6
        expected = (0.04 + 1.25 * (0.09 + 0.16 + 0.04 + 0.16)) / 6
        assert brier(records, self.config()) == pytest.approx(expected, abs=1e-15)

    def test_order_invariant(self):
        rng = np.random.default_rng(3)
        records = [
            rec(i, float(rng.uniform()), float(rng.uniform(1.5, 20.0)), int(rng.integers(0, 2)))
            for i in range(25)
        ]
        base = brier(records, self.config())
        shuffled = list(records)
        rng.shuffle(shuffled)
        assert brier(shuffled, self.config()) == base

    def test_event_km_switch_changes_weights(self):
        records = [
            rec(1, 0.8, 5.0, 1), rec(2, 0.3, 12.0, 1), rec(3, 0.5, 7.0, 0),
            rec(4, 0.6, 9.0, 1), rec(5, 0.2, 15.0, 0),
        ]
        a = brier(records, self.config())
        b = brier(records, self.config(censoring_km="event"))
        assert a != b


class TestValidation:
    def test_record_invariants(self):
        with pytest.raises(DataError, match="risk"):
            EvalRecord("x", 1.2, 5.0, 1)
        with pytest.raises(DataError, match="time"):
            EvalRecord("x", 0.5, -1.0, 1)
        with pytest.raises(DataError, match="event"):
            EvalRecord("x", 0.5, 5.0, 2)

    def test_config_invariants(self):
        with pytest.raises(ConfigurationError):
            EvalConfig(landmark=5.0, horizon=5.0)
        with pytest.raises(ConfigurationError):
            EvalConfig(landmark=1.0, horizon=5.0, grid_size=200)
        with pytest.raises(ConfigurationError):
            EvalConfig(landmark=1.0, horizon=5.0, bandwidth=0.0)

    def test_no_at_risk_subjects(self):
        with pytest.raises(DataError, match="at risk"):
            roc_auc([rec(1, 0.5, 0.5, 1)], EvalConfig(landmark=1.0, horizon=10.0))
