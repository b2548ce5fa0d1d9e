import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advlab import intensity, nn, privacy
from advlab.data import LabeledSet, synth_blobs

mp.mp.dps = 50


def compose_oracle(eps_list, delta_prime, n):
    """Independent high-precision evaluation of the composition formula."""
    eps = [mp.mpf(float(e)) for e in eps_list]  # exact binary conversion
    first = mp.sqrt(2 * mp.log(mp.mpf(n) / mp.mpf(float(delta_prime)))
                    * mp.fsum(e ** 2 for e in eps))
    second = mp.fsum(e * (mp.e ** e - 1) / (mp.e ** e + 1) for e in eps)
    return first + second


# frozen via compose_oracle([0.1], 1, N) with N/delta' = 100: 50-digit value
COMPOSE_HAND = 0.30848126337324882


class TestCollectNoise:
    def linear_set(self):
        return LabeledSet(np.array([[1.0], [3.0]]), np.array([0, 0]), 1)

    def test_exhaustive_batch_degenerate(self):
        ds = synth_blobs(10, 2, 3, 1.0, seed=1)
        net = nn.DenseNet.random((3, 4, 2), "relu", seed=2)
        with pytest.raises(privacy.DegenerateNoiseError):
            privacy.collect_noise(net, ds, tau=len(ds), n_batches=4,
                                  components_per_batch=5, seed=3)

    def test_unit_standard_deviation(self):
        ds = synth_blobs(20, 3, 4, 1.0, seed=4)
        net = nn.DenseNet.random((4, 6, 3), "relu", seed=5)
        sample = privacy.collect_noise(net, ds, tau=8, n_batches=30,
                                       components_per_batch=12, seed=6)
        assert abs(float(np.std(sample.values)) - 1.0) <= 1e-12
        assert sample.divisor > 0

    def test_hand_trace_two_point_linear_model(self):
        # squared loss on h(x) = wx + b with w=1, b=0; points x=1 and x=3:
        # per-example grads (2,2) and (18,6) so the full mean is (10,4);
        # a tau=1 batch difference is therefore +-(8,2)
        ds = self.linear_set()
        net = nn.DenseNet((np.array([[1.0]]),), (np.array([0.0]),), "relu")
        spec = nn.LossSpec(kind="squared", clip_m=1e6)
        sample = privacy.collect_noise(net, ds, tau=1, n_batches=8,
                                       components_per_batch=2, seed=7, loss_spec=spec)
        raw = sample.values * sample.divisor
        allowed = {-8.0, -2.0, 2.0, 8.0}
        assert {round(v, 9) for v in raw} <= allowed
        assert abs(float(np.std(sample.values)) - 1.0) <= 1e-12

    def test_parameter_subset_bounds(self):
        ds = self.linear_set()
        net = nn.DenseNet((np.array([[1.0]]),), (np.array([0.0]),), "relu")
        with pytest.raises(ValueError, match="components_per_batch"):
            privacy.collect_noise(net, ds, tau=1, n_batches=2,
                                  components_per_batch=3, seed=0)


class TestFitLaplace:
    def test_closed_form_three_points(self):
        fit = privacy.fit_laplace(np.array([-1.0, 0.0, 1.0]))
        assert fit.location == 0.0
        assert fit.scale == pytest.approx(2.0 / 3.0, rel=1e-15)
        assert fit.count == 3

    def test_lower_median_for_even_counts(self):
        fit = privacy.fit_laplace(np.array([4.0, 1.0, 2.0, 3.0]))
        assert fit.location == 2.0  # lower of the two middle values

    def test_monte_carlo_recovers_scale(self):
        # matches the documented histogram scale Lap(0, 0.15)
        rng = np.random.default_rng(12345)
        draws = rng.laplace(loc=0.0, scale=0.15, size=1_000_000)
        fit = privacy.fit_laplace(draws)
        assert 0.1485 <= fit.scale <= 0.1515
        assert abs(fit.location) < 1e-3

    def test_mirrored_sample_centers_at_zero(self):
        v = np.array([-3.0, -1.0, -0.5, 0.0, 0.5, 1.0, 3.0])
        fit = privacy.fit_laplace(v)
        assert abs(fit.location) <= 1e-12

    def test_identical_values_degenerate(self):
        with pytest.raises(privacy.DegenerateNoiseError):
            privacy.fit_laplace(np.full(5, 0.3))

    def test_needs_two_values(self):
        with pytest.raises(ValueError):
            privacy.fit_laplace(np.array([1.0]))


class TestPerStepEpsilon:
    def test_zero_sensitivity(self):
        assert privacy.per_step_epsilon(0.0, 1.0, 100, 0.1) == 0.0

    def test_hand_arithmetic(self):
        assert privacy.per_step_epsilon(1.0, 1.0, 100, 0.1) == pytest.approx(0.2, rel=1e-15)

    def test_doubling_n_halves_exactly(self):
        a = privacy.per_step_epsilon(0.7, 1.3, 500, 0.05)
        b = privacy.per_step_epsilon(0.7, 1.3, 1000, 0.05)
        assert a == 2 * b

    def test_bad_scale_rejected(self):
        with pytest.raises(ValueError):
            privacy.per_step_epsilon(1.0, 1.0, 100, 0.0)


class TestCompose:
    def test_all_zero_steps(self):
        assert privacy.compose([0.0] * 10, 1.0, 100).epsilon == 0.0

    def test_empty_series_is_null_budget(self):
        b = privacy.compose([], 1.0, 100)
        assert b.epsilon == 0.0 and b.delta == 0.01

    def test_hand_example_frozen(self):
        # eps_1 = 0.1 with N / delta' = 100
        b = privacy.compose([0.1], 1.0, 100)
        assert b.epsilon == pytest.approx(COMPOSE_HAND, abs=1e-12)
        assert b.delta == pytest.approx(0.01, rel=1e-15)

    def test_matches_high_precision_oracle(self):
        rng = np.random.default_rng(99)
        for _ in range(60):
            t = int(rng.integers(1, 40))
            eps = rng.uniform(1e-6, 0.5, size=t)
            dp = float(rng.uniform(0.1, 5.0))
            n = int(rng.integers(10, 100000))
            got = privacy.compose(eps, dp, n).epsilon
            want = float(compose_oracle(eps, dp, n))
            assert got == pytest.approx(want, rel=1e-12)

    def test_strictly_increasing_in_each_step(self):
        eps = [0.05, 0.1, 0.2]
        base = privacy.compose(eps, 1.0, 1000).epsilon
        for i in range(3):
            bumped = list(eps)
            bumped[i] += 1e-6
            assert privacy.compose(bumped, 1.0, 1000).epsilon > base

    def test_delta_prime_domain(self):
        with pytest.raises(ValueError):
            privacy.compose([0.1], 100.0, 100)
        with pytest.raises(ValueError):
            privacy.compose([0.1], 0.0, 100)

    def test_negative_step_rejected(self):
        with pytest.raises(ValueError):
            privacy.compose([-0.1], 1.0, 100)

    def test_purity_bitwise(self):
        eps = np.linspace(0.001, 0.3, 50)
        a = privacy.compose(eps, 0.7, 4321).epsilon
        b = privacy.compose(eps, 0.7, 4321).epsilon
        assert a == b


# frozen: (2*1*2/(1000*0.1)) * sqrt(2*100*ln(1000)) at 50 digits
LEADING_HAND = 1.4867688755399353788
ERM_HAND = 0.74338443776996768939


class TestLeadingEpsilon:
    def test_zero_intensity(self):
        assert privacy.leading_epsilon(1.0, 0.0, 100, 1000, 0.1, 1.0).epsilon == 0.0

    def test_hand_example_frozen(self):
        b = privacy.leading_epsilon(1.0, 2.0, 100, 1000, 0.1, 1.0)
        assert b.epsilon == pytest.approx(LEADING_HAND, rel=1e-14)
        assert b.delta == pytest.approx(1e-3, rel=1e-15)
        assert b.provenance == "leading_thm5"

    def test_dominates_compose_sqrt_term_for_constant_series(self):
        # Cauchy-Schwarz collapses to equality on constant series, so the
        # leading term must be >= the sqrt part of the composed budget
        n, b, dp, t = 2000, 0.2, 1.0, 50
        l, i = 0.8, 1.7
        eps_t = privacy.per_step_epsilon(l, i, n, b)
        sqrt_term = math.sqrt(2 * math.log(n / dp) * t * eps_t ** 2)
        lead = privacy.leading_epsilon(l, i, t, n, b, dp).epsilon
        assert lead >= sqrt_term - 1e-12
        assert lead == pytest.approx(sqrt_term, rel=1e-12)

    def test_inputs_snapshot(self):
        b = privacy.leading_epsilon(1.0, 2.0, 100, 1000, 0.1, 1.0)
        assert b.inputs == {"l_erm_1t": 1.0, "i_1t": 2.0, "t": 100, "n": 1000,
                            "b": 0.1, "delta_prime": 1.0}


class TestErmEpsilon:
    def test_equals_leading_at_unit_intensity(self):
        a = privacy.erm_epsilon(0.9, 80, 5000, 0.15, 1.0)
        b = privacy.leading_epsilon(0.9, 1.0, 80, 5000, 0.15, 1.0)
        assert a.epsilon == b.epsilon
        assert a.provenance == "erm_corollary"

    def test_ratio_is_composite_intensity(self):
        lead = privacy.leading_epsilon(0.9, 1.8, 80, 5000, 0.15, 1.0).epsilon
        base = privacy.erm_epsilon(0.9, 80, 5000, 0.15, 1.0).epsilon
        assert lead / base == pytest.approx(1.8, rel=1e-14)

    def test_hand_example_frozen(self):
        b = privacy.erm_epsilon(1.0, 100, 1000, 0.1, 1.0)
        assert b.epsilon == pytest.approx(ERM_HAND, rel=1e-14)


class TestAccountantRelations:
    def test_composed_below_leading_plus_second_order(self):
        # the composed budget never exceeds the fourth-power-composite bound
        # rebuilt from the same series plus the second-order sum
        rng = np.random.default_rng(7)
        for _ in range(40):
            t = int(rng.integers(2, 60))
            l_series = rng.uniform(0.05, 2.0, size=t)
            i_series = rng.uniform(0.5, 3.0, size=t)
            n, b, dp = int(rng.integers(100, 100000)), float(rng.uniform(0.05, 1.0)), 1.0
            eps_series = [privacy.per_step_epsilon(l, i, n, b)
                          for l, i in zip(l_series, i_series)]
            composed = privacy.compose(eps_series, dp, n).epsilon
            lead = privacy.leading_epsilon(
                intensity.composite_intensity(l_series),
                intensity.composite_intensity(i_series), t, n, b, dp).epsilon
            second = float(np.sum([e * (math.exp(e) - 1) / (math.exp(e) + 1)
                                   for e in eps_series]))
            assert composed <= lead + second + 1e-12

    def test_rate_in_sample_size(self):
        # leading eps times N / sqrt(ln N) is constant when delta' = 1
        vals = []
        for n in (10 ** 3, 10 ** 4, 10 ** 5):
            eps = privacy.leading_epsilon(1.0, 2.0, 100, n, 0.1, 1.0).epsilon
            vals.append(eps * n / math.sqrt(math.log(n)))
        assert vals[0] == pytest.approx(vals[1], rel=1e-12)
        assert vals[1] == pytest.approx(vals[2], rel=1e-12)


class TestHistogram:
    def test_fixed_bin_layout(self):
        edges, counts = privacy.noise_histogram(np.array([0.0, 0.5, -9.99, 20.0]))
        assert len(edges) == 202 and len(counts) == 201
        assert edges[0] == -10.0 and edges[-1] == 10.0
        assert counts.sum() == 3  # the 20.0 falls outside the window

    def test_total_mass_for_in_window_data(self):
        rng = np.random.default_rng(3)
        v = rng.laplace(size=5000) / 3
        _, counts = privacy.noise_histogram(v)
        assert counts.sum() == 5000

