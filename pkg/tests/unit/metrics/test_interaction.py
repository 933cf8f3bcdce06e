"""
Unit tests for the interaction metrics.
"""

import math

import numpy as np
import pytest

from reactive_avatar.core.config import MetricConfig, SamplerConfig
from reactive_avatar.core.schema import MetricReport
from reactive_avatar.metrics.interaction import (
    assignment_entropy,
    evaluate_parameters,
    frechet_distance,
    frechet_from_moments,
    jerk,
    mean_jerk,
    metric_echo,
    pcc,
    rpcc,
    sid,
    var_metric,
)


def test_pcc_matches_numpy():
    """Test per-channel correlation against numpy."""
    rng = np.random.default_rng(0)
    z = rng.standard_normal((50, 3))
    x = rng.standard_normal((50, 3))
    values = pcc(z, x)
    for c in range(3):
        assert values[c] == pytest.approx(np.corrcoef(z[:, c], x[:, c])[0, 1])


def test_pcc_extremes():
    """Test perfect correlation, anti-correlation and zero variance."""
    x = np.arange(10, dtype=float)[:, None]
    assert pcc(2 * x + 1, x)[0] == pytest.approx(1.0)
    assert pcc(-x, x)[0] == pytest.approx(-1.0)
    assert math.isnan(pcc(np.ones((10, 1)), x)[0])


def test_pcc_errors():
    """Test that mismatched shapes and single frames raise ValueError."""
    with pytest.raises(ValueError):
        pcc(np.zeros((4, 2)), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        pcc(np.zeros((1, 2)), np.zeros((1, 2)))


def test_rpcc_of_ground_truth_is_zero():
    """Test that the ground truth scores zero against itself."""
    rng = np.random.default_rng(1)
    y = rng.standard_normal((40, 6))
    x = rng.standard_normal((40, 6))
    result = rpcc(y, y, x)
    assert result.values == {"Exp": 0.0, "Pose": 0.0}
    assert result.undefined == 0


def test_rpcc_counts_undefined_channels():
    """Test that zero-variance channels are excluded and counted."""
    rng = np.random.default_rng(2)
    y = rng.standard_normal((40, 6))
    x = rng.standard_normal((40, 6))
    flat = y.copy()
    flat[:, 2] = 0.0
    result = rpcc(y, flat, x)
    assert result.undefined == 1
    assert result.values["Exp"] == pytest.approx(abs(pcc(y, x)[3] - pcc(flat, x)[3]))
    both = y.copy()
    both[:, 0] = 0.0
    both[:, 1] = 0.0
    assert math.isnan(rpcc(y, both, x).values["Pose"])
    with pytest.raises(ValueError):
        rpcc(y, y[:10], x)


def test_assignment_entropy():
    """Test the natural-log entropy of cluster occupancy."""
    assert assignment_entropy(np.zeros(10, dtype=int), 3) == 0.0
    assert assignment_entropy(np.array([0, 1, 0, 1]), 2) == pytest.approx(math.log(2))


def test_sid_of_a_seventy_thirty_split():
    """Test that two separated point masses in a 70/30 split give the matching entropy."""
    sequence = np.concatenate([np.zeros((70, 2)), np.full((30, 2), 10.0)])
    expected = -(0.7 * math.log(0.7) + 0.3 * math.log(0.3))
    assert expected == pytest.approx(0.6109, abs=1e-4)
    assert sid([sequence], k=2, restarts=3) == pytest.approx(expected)


def test_sid_edge_cases():
    """Test a constant pool and too few frames."""
    assert sid([np.ones((20, 2))], k=3) == 0.0
    with pytest.raises(ValueError):
        sid([np.zeros((2, 2))], k=5)


def test_var_metric():
    """Test the channel-averaged temporal variance."""
    a = np.array([[0.0, 0.0], [2.0, 4.0]])
    assert var_metric([a]) == pytest.approx((1.0 + 4.0) / 2)
    assert var_metric([a, np.zeros((3, 2))]) == pytest.approx(1.25)
    with pytest.raises(ValueError):
        var_metric([np.zeros((1, 2))])


def test_frechet_closed_forms():
    """Test the mean shift and the one-dimensional standard deviation gap."""
    cov = np.array([[2.0, 0.3], [0.3, 1.0]])
    delta = np.array([1.0, -2.0])
    assert frechet_from_moments(delta, cov, np.zeros(2), cov) == pytest.approx(5.0, abs=1e-9)
    assert frechet_from_moments(np.zeros(1), np.array([[4.0]]), np.zeros(1), np.array([[1.0]])) == pytest.approx(1.0)


def test_frechet_rejects_indefinite_covariance():
    """Test that a covariance with a negative eigenvalue raises ValueError."""
    bad = np.array([[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(ValueError):
        frechet_from_moments(np.zeros(2), np.eye(2), np.zeros(2), bad)


def test_frechet_distance_of_equal_sets():
    """Test that a set is at distance zero from itself and too few frames raise."""
    rng = np.random.default_rng(3)
    sequences = [rng.standard_normal((30, 2)) for _ in range(2)]
    assert frechet_distance(sequences, sequences) == pytest.approx(0.0, abs=1e-8)
    with pytest.raises(ValueError):
        frechet_distance([np.zeros((2, 2))], sequences)


def test_jerk():
    """Test that linear motion has no jerk and n^2 has constant second difference."""
    n = np.arange(10, dtype=float)[:, None]
    assert jerk(3 * n + 1) == pytest.approx(0.0)
    assert jerk(n ** 2) == pytest.approx(2.0)
    assert mean_jerk([3 * n, n ** 2]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        jerk(np.zeros((2, 3)))


def test_metric_echo():
    """Test that the echo carries the effective cluster counts and sampler settings."""
    echo = metric_echo(MetricConfig(paper_k=True), SamplerConfig(seed=4))
    assert echo["metrics.k_expression"] == "15"
    assert echo["metrics.k_pose"] == "9"
    assert echo["sampler.seed"] == "4"


class TestEvaluateParameters:
    """Tests for scoring generated parameter sets."""

    def setup_method(self):
        rng = np.random.default_rng(4)
        self.config = MetricConfig(k_expression=2, k_pose=2, restarts=1)
        self.gt = [rng.standard_normal((40, 6)) for _ in range(3)]
        self.user = [rng.standard_normal((40, 6)) for _ in range(3)]
        self.noisy = [g + 0.5 * rng.standard_normal(g.shape) for g in self.gt]

    def test_all_metrics_reported(self):
        """Test that every metric column is present and finite."""
        report = evaluate_parameters(self.gt, self.noisy, self.user, self.config)
        assert set(report.values) == set(MetricReport.COLUMNS)
        assert all(math.isfinite(v) for v in report.values.values())
        assert report.clips == 3
        assert report.failed_clips == 0

    def test_ground_truth_has_zero_rpcc(self):
        """Test that generating the ground truth scores zero rPCC."""
        report = evaluate_parameters(self.gt, self.gt, self.user, self.config)
        assert report.values["rPCC-Exp"] == 0.0
        assert report.values["rPCC-Pose"] == 0.0

    def test_failed_clip_is_counted(self):
        """Test that a None generation is counted and the rest still scored."""
        generated = [self.noisy[0], None, self.noisy[2]]
        report = evaluate_parameters(self.gt, generated, self.user, self.config)
        assert report.failed_clips == 1
        assert math.isfinite(report.values["SID-Exp"])

    def test_all_failed(self):
        """Test that a report is produced with NaN values when every clip failed."""
        report = evaluate_parameters(self.gt, [None, None, None], self.user, self.config)
        assert report.failed_clips == 3
        assert all(math.isnan(v) for v in report.values.values())
