import numpy as np
import pytest

from scene_sim import (
    ChannelModel,
    PathlossModel,
    RandomSource,
    RoundConfig,
    calibrate_noise,
    map_energies,
    population_from_arrays,
    sample_pathloss,
    simulate_round,
    simulate_round_correlated,
    simulate_rounds,
    validate_soft_label,
)
from scene_sim.channel import BadCoefficient, BadRange, ShapeMismatch
from scene_sim.power import EnergyFrame

from conftest import make_uniform_population


def frame_from_energies(e, include_reference=False):
    e = np.atleast_2d(np.asarray(e, dtype=float))
    return EnergyFrame(e, e.sum(axis=1), include_reference)


class TestSamplePathloss:
    def test_paper_parameterization(self, rng):
        model = PathlossModel(3.5, (5.0, 50.0), 8.0, normalize_mean=True)
        beta = sample_pathloss(model, 100, rng)
        assert beta.shape == (100,)
        assert np.all(beta > 0)
        assert beta.mean() == pytest.approx(1.0, abs=1e-9)

    def test_degenerate_distance_all_equal(self, rng):
        model = PathlossModel(3.5, (7.0, 7.0), 0.0, normalize_mean=True)
        beta = sample_pathloss(model, 50, rng)
        assert np.allclose(beta, 1.0)

    def test_log_distance_formula(self, rng):
        # direct evaluation: d = 10 m, alpha = 3.5, no shadowing or rescaling
        model = PathlossModel(3.5, (10.0, 10.0), 0.0, normalize_mean=False)
        beta = sample_pathloss(model, 5, rng)
        assert np.allclose(beta, 10.0**-3.5)
        assert beta[0] == pytest.approx(3.1623e-4, rel=1e-4)

    def test_bad_range(self):
        with pytest.raises(BadRange):
            PathlossModel(3.5, (0.0, 10.0))
        with pytest.raises(BadRange):
            PathlossModel(3.5, (10.0, 5.0))


class TestSimulateRoundDeterministicHook:
    def test_single_device_exact(self, rng):
        pop = make_uniform_population(1)
        frame = frame_from_energies([[3.0, 1.0]])
        cfg = RoundConfig(num_classes=2, reps=1, antennas=1, noise_var=0.0)
        y = simulate_round(frame, pop, cfg, rng, frozen_fading=True)
        assert np.array_equal(y.y, [3.0, 1.0])

    def test_scales_with_sample_count_and_beta(self, rng):
        pop = population_from_arrays([1.0], [2.0])
        frame = frame_from_energies([[3.0, 1.0]])
        cfg = RoundConfig(num_classes=2, reps=4, antennas=2, noise_var=0.0)
        y = simulate_round(frame, pop, cfg, rng, frozen_fading=True)
        assert np.allclose(y.y, [8 * 2 * 3.0, 8 * 2 * 1.0])


class TestSimulateRoundMoments:
    @pytest.mark.parametrize("model", list(ChannelModel))
    def test_mean_matches_both_models(self, model):
        # N=1, beta=1, E_c=2, sigma^2=0.5, S=4, M=2 -> E[Y_c] = 8*(2+0.5) = 20
        pop = make_uniform_population(1)
        frame = frame_from_energies([[2.0, 2.0]])
        cfg = RoundConfig(
            num_classes=2, reps=4, antennas=2, noise_var=0.5, channel_model=model
        )
        y, _ = simulate_rounds(frame, pop, cfg, RandomSource(1), trials=100_000)
        se = y.std(axis=0, ddof=1) / np.sqrt(y.shape[0])
        assert np.all(np.abs(y.mean(axis=0) - 20.0) <= 3 * se)

    def test_noise_only_exponential_energy(self):
        # |CN(0,1)|^2 is unit exponential: mean 1, variance 1
        pop = make_uniform_population(1)
        frame = frame_from_energies([[0.0, 0.0]])
        cfg = RoundConfig(num_classes=2, reps=1, antennas=1, noise_var=1.0)
        y, _ = simulate_rounds(frame, pop, cfg, RandomSource(2), trials=100_000)
        t = y.shape[0]
        assert np.all(np.abs(y.mean(axis=0) - 1.0) <= 3 / np.sqrt(t))
        # SE of the variance of an exponential is about sqrt(8/T) * mean^2
        assert np.all(np.abs(y.var(axis=0, ddof=1) - 1.0) <= 3 * np.sqrt(8 / t))

    def test_superposition_per_sample_variance(self):
        # per-sample aggregate is CN(0, m_c): energy exponential with
        # mean m_c + sigma^2, variance (m_c + sigma^2)^2
        pop = population_from_arrays([0.5, 0.5], [1.0, 2.0])
        energies = np.array([[2.0, 0.5], [1.0, 1.5]])
        frame = frame_from_energies(energies)
        sigma2 = 0.3
        cfg = RoundConfig(num_classes=2, reps=1, antennas=1, noise_var=sigma2)
        y, _ = simulate_rounds(frame, pop, cfg, RandomSource(3), trials=200_000)
        m_c = pop.betas_true @ energies
        expected_var = (m_c + sigma2) ** 2
        rel = np.abs(y.var(axis=0, ddof=1) / expected_var - 1.0)
        assert np.all(rel < 0.05)

    def test_diagonal_per_sample_variance(self):
        # Rayleigh: Var(E_i |h_i|^2) = E_i^2 beta_i^2; noise energy adds sigma^4
        pop = population_from_arrays([0.5, 0.5], [1.0, 2.0])
        energies = np.array([[2.0, 0.5], [1.0, 1.5]])
        frame = frame_from_energies(energies)
        sigma2 = 0.3
        cfg = RoundConfig(
            num_classes=2, reps=1, antennas=1, noise_var=sigma2,
            channel_model=ChannelModel.DIAGONAL,
        )
        y, _ = simulate_rounds(frame, pop, cfg, RandomSource(4), trials=200_000)
        expected_var = ((energies * pop.betas_true[:, None]) ** 2).sum(axis=0) + sigma2**2
        rel = np.abs(y.var(axis=0, ddof=1) / expected_var - 1.0)
        assert np.all(rel < 0.05)

    def test_empirical_per_re_snr(self):
        # signal power / noise power per slot should equal rho*qbar_c/sigma^2
        pop = make_uniform_population(3)
        gen = np.random.default_rng(0)
        labels = [validate_soft_label(gen.dirichlet(np.full(4, 0.5))) for _ in range(3)]
        rho = 2.0
        frame = map_energies(labels, pop, rho)
        sigma2 = calibrate_noise(rho, 4, snr_db=10.0)
        cfg = RoundConfig(num_classes=4, reps=1, antennas=1, noise_var=0.0)
        y, _ = simulate_rounds(frame, pop, cfg, RandomSource(5), trials=200_000)
        qbar = np.mean([lab.probs for lab in labels], axis=0)
        snr_emp = y.mean(axis=0) / sigma2
        snr_true = rho * qbar / sigma2
        assert np.all(np.abs(snr_emp / snr_true - 1.0) < 0.05)
        # class-averaged empirical SNR matches the calibration target
        assert np.mean(snr_emp) / 10.0**1.0 == pytest.approx(1.0, abs=0.05)

    def test_reference_slot_mean(self):
        pop = population_from_arrays([0.6, 0.4], [1.5, 0.5])
        labels = [validate_soft_label((0.7, 0.3)), validate_soft_label((0.2, 0.8))]
        frame = map_energies(labels, pop, rho=1.0, include_reference=True)
        cfg = RoundConfig(num_classes=2, reps=2, antennas=1, noise_var=0.1,
                          use_reference_re=True)
        y, ref = simulate_rounds(frame, pop, cfg, RandomSource(6), trials=100_000)
        # E[R] = S*M*(sum_i beta_i eta_i + sigma^2); gamma = 1 here so
        # sum_i beta_i eta_i = rho
        expected = 2 * (1.0 + 0.1)
        assert ref.mean() == pytest.approx(expected, rel=0.02)


class TestSimulateRoundErrors:
    def test_shape_mismatch_devices(self, rng):
        pop = make_uniform_population(2)
        frame = frame_from_energies([[1.0, 1.0]])
        cfg = RoundConfig(num_classes=2)
        with pytest.raises(ShapeMismatch):
            simulate_round(frame, pop, cfg, rng)

    def test_shape_mismatch_classes(self, rng):
        pop = make_uniform_population(1)
        frame = frame_from_energies([[1.0, 1.0, 1.0]])
        cfg = RoundConfig(num_classes=2)
        with pytest.raises(ShapeMismatch):
            simulate_round(frame, pop, cfg, rng)

    def test_reference_requested_but_missing(self, rng):
        pop = make_uniform_population(1)
        frame = frame_from_energies([[1.0, 1.0]])
        cfg = RoundConfig(num_classes=2, use_reference_re=True)
        with pytest.raises(ShapeMismatch):
            simulate_round(frame, pop, cfg, rng)


class TestCorrelatedFading:
    def test_zero_coefficients_identical_draws(self):
        pop = make_uniform_population(2)
        frame = frame_from_energies([[1.0, 0.5], [0.7, 0.3]])
        cfg = RoundConfig(num_classes=2, reps=3, antennas=2, noise_var=0.2)
        a = simulate_round(frame, pop, cfg, RandomSource(11))
        b = simulate_round_correlated(frame, pop, cfg, RandomSource(11), 0.0, 0.0)
        assert np.array_equal(a.y, b.y)

    def test_bad_coefficient(self, rng):
        pop = make_uniform_population(1)
        frame = frame_from_energies([[1.0, 1.0]])
        cfg = RoundConfig(num_classes=2)
        with pytest.raises(BadCoefficient):
            simulate_round_correlated(frame, pop, cfg, rng, 1.0, 0.0)
        with pytest.raises(BadCoefficient):
            simulate_round_correlated(frame, pop, cfg, rng, 0.0, -0.1)

    def test_marginals_preserved(self):
        # correlated draws keep the same per-class mean energy
        pop = make_uniform_population(1)
        frame = frame_from_energies([[2.0, 1.0]])
        cfg = RoundConfig(num_classes=2, reps=8, antennas=1, noise_var=0.0)
        y, _ = simulate_rounds(
            frame, pop, cfg, RandomSource(12), trials=100_000, time_corr=0.6
        )
        se = y.std(axis=0, ddof=1) / np.sqrt(y.shape[0])
        assert np.all(np.abs(y.mean(axis=0) - 8 * np.array([2.0, 1.0])) <= 3 * se)

    def test_bartlett_variance_inflation(self):
        # energy-domain AR(1) with phi = 0.5 across S = 16 reps inflates the
        # variance of the per-class mean by about 1 + 2*sum(phi^tau) = 3
        pop = make_uniform_population(1)
        frame = frame_from_energies([[1.0, 1.0]])
        cfg = RoundConfig(
            num_classes=2, reps=16, antennas=1, noise_var=0.0,
            channel_model=ChannelModel.DIAGONAL,
        )
        y0, _ = simulate_rounds(frame, pop, cfg, RandomSource(13), trials=100_000)
        y1, _ = simulate_rounds(
            frame, pop, cfg, RandomSource(14), trials=100_000, time_corr=0.5
        )
        inflation = y1.var(axis=0, ddof=1) / y0.var(axis=0, ddof=1)
        # finite-S Bartlett factor is 2.75; the infinite-sum value is 3
        assert np.all(np.abs(inflation / 3.0 - 1.0) < 0.2)

    def test_space_correlation_symmetric(self):
        pop = make_uniform_population(1)
        frame = frame_from_energies([[1.0, 1.0]])
        cfg = RoundConfig(
            num_classes=2, reps=1, antennas=16, noise_var=0.0,
            channel_model=ChannelModel.DIAGONAL,
        )
        y0, _ = simulate_rounds(frame, pop, cfg, RandomSource(15), trials=100_000)
        y1, _ = simulate_rounds(
            frame, pop, cfg, RandomSource(16), trials=100_000, space_corr=0.5
        )
        inflation = y1.var(axis=0, ddof=1) / y0.var(axis=0, ddof=1)
        assert np.all(np.abs(inflation / 3.0 - 1.0) < 0.2)

    def test_strong_correlation_approaches_no_averaging(self):
        # phi -> 1: the S = 16 average degrades toward a single sample
        pop = make_uniform_population(1)
        frame = frame_from_energies([[1.0, 1.0]])
        cfg16 = RoundConfig(
            num_classes=2, reps=16, antennas=1, noise_var=0.0,
            channel_model=ChannelModel.DIAGONAL,
        )
        cfg1 = RoundConfig(
            num_classes=2, reps=1, antennas=1, noise_var=0.0,
            channel_model=ChannelModel.DIAGONAL,
        )
        y_corr, _ = simulate_rounds(
            frame, pop, cfg16, RandomSource(17), trials=50_000, time_corr=0.99
        )
        y_one, _ = simulate_rounds(frame, pop, cfg1, RandomSource(18), trials=50_000)
        # variance of the *mean* energy per slot
        var_corr = (y_corr / 16).var(axis=0, ddof=1)
        var_one = y_one.var(axis=0, ddof=1)
        assert np.all(var_corr > 0.55 * var_one)
        # and far above the independent-averaging level var_one / 16
        assert np.all(var_corr > 5 * var_one / 16)
