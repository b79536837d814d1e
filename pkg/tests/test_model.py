import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poolscreen.model import (
    BelowDetection,
    NoiseModel,
    PointLoad,
    QpcrParams,
    Signal,
    SignalDistribution,
    UniformLoad,
    apply_noise,
    apply_noise_vec,
    cycle_to_measurement,
    generate_signal,
    generate_signal_fixed_k,
    measurement_to_cycle,
    _irwin_hall_pdf,
)


# ---------------------------------------------------------------- signals


def test_generate_signal_p0_all_zero():
    dist = SignalDistribution(n=50, p=0.0)
    sig = generate_signal(dist, np.random.default_rng(0))
    assert sig.support == ()
    assert np.all(sig.values == 0.0)


def test_generate_signal_p1_point_mass():
    dist = SignalDistribution(n=40, p=1.0, law=PointLoad(7.0))
    sig = generate_signal(dist, np.random.default_rng(1))
    assert sig.support == tuple(range(40))
    assert np.all(sig.values == 7.0)


def test_generate_signal_mean_support_matches_binomial():
    # oracle: |support| ~ Binomial(961, 0.01), mean 9.61, sd 3.0845;
    # the sample mean over 10k draws sits within 3 sd / sqrt(10k) of 9.61
    n, p, draws = 961, 0.01, 10_000
    rng = np.random.default_rng(20260822)
    dist = SignalDistribution(n=n, p=p)
    sizes = [generate_signal(dist, rng).k for _ in range(draws)]
    sd = math.sqrt(n * p * (1 - p))
    assert abs(np.mean(sizes) - n * p) < 3 * sd / math.sqrt(draws)


def test_generate_signal_fixed_k_support_and_box():
    law = UniformLoad(1.0, 1000.0)
    sig = generate_signal_fixed_k(200, 17, law, np.random.default_rng(3))
    assert sig.k == 17
    vals = sig.values[list(sig.support)]
    assert np.all((vals >= 1.0) & (vals <= 1000.0))


def test_generate_signal_deterministic_under_seed():
    dist = SignalDistribution(n=100, p=0.05)
    a = generate_signal(dist, np.random.default_rng(42))
    b = generate_signal(dist, np.random.default_rng(42))
    assert a.support == b.support
    assert np.array_equal(a.values, b.values)


def test_signal_rejects_mismatched_support():
    with pytest.raises(ValueError):
        Signal(np.array([0.0, 2.0]), support=(0,))


def test_signal_distribution_validation():
    with pytest.raises(ValueError):
        SignalDistribution(n=0, p=0.5)
    with pytest.raises(ValueError):
        SignalDistribution(n=10, p=1.5)


# ---------------------------------------------------------------- noise


@given(
    y=st.one_of(st.just(0.0), st.floats(min_value=1e-6, max_value=1e6, allow_nan=False)),
    seed=st.integers(0, 2**32 - 1),
)
@settings(max_examples=200, deadline=None)
def test_apply_noise_preserves_zero_exactly(y, seed):
    z = apply_noise(y, NoiseModel(), np.random.default_rng(seed))
    assert (z == 0.0) == (y == 0.0)
    assert z >= 0.0


def test_apply_noise_noiseless_limit():
    z = apply_noise(5.0, NoiseModel(sigma_eps=1e-12), np.random.default_rng(7))
    assert abs(z - 5.0) < 1e-9


def test_apply_noise_scale_equivariance_same_seed():
    # identical noise draw, so readings scale exactly with the input
    noise = NoiseModel()
    z1 = apply_noise(1.0, noise, np.random.default_rng(11))
    z100 = apply_noise(100.0, noise, np.random.default_rng(11))
    assert z100 == pytest.approx(100.0 * z1, rel=1e-15)


def test_noise_log_moments():
    # ln z - ln y ~ N(mu_eps, sigma_eps^2); check both moments at 3 sigma
    noise = NoiseModel()  # sigma = 0.1 * ln 1.95
    rng = np.random.default_rng(5)
    draws = 100_000
    logs = np.log(apply_noise_vec(np.ones(draws), noise, rng))
    se_mean = noise.sigma_eps / math.sqrt(draws)
    se_sd = noise.sigma_eps / math.sqrt(2 * draws)
    assert abs(logs.mean() - noise.mu_eps) < 3 * se_mean
    assert abs(logs.std(ddof=1) - noise.sigma_eps) < 3 * se_sd


def test_apply_noise_vec_one_draw_per_entry():
    # each entry consumes one noise draw even when its quantity is zero,
    # so later entries see the same draws regardless of earlier zeros
    noise = NoiseModel()
    za = apply_noise_vec(np.array([0.0, 5.0, 2.0]), noise, np.random.default_rng(9))
    zb = apply_noise_vec(np.array([3.0, 5.0, 2.0]), noise, np.random.default_rng(9))
    assert za[0] == 0.0 and zb[0] > 0.0
    assert za[1] == zb[1] and za[2] == zb[2]


def test_apply_noise_rejects_negative():
    with pytest.raises(ValueError):
        apply_noise(-1.0, NoiseModel(), np.random.default_rng(0))


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(sigma_eps=0.0)


def test_noise_logpdf_matches_lognormal_formula():
    noise = NoiseModel(sigma_eps=0.3, mu_eps=0.1)
    e = 1.7
    expected = -math.log(e * 0.3 * math.sqrt(2 * math.pi)) - (math.log(e) - 0.1) ** 2 / (2 * 0.3**2)
    assert noise.logpdf(e) == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------- load laws


def test_uniform_load_sum_density_k1():
    law = UniformLoad(1.0, 1000.0)
    assert law.sum_density(1, 500.0) == pytest.approx(1.0 / 999.0, rel=1e-12)
    assert law.sum_density(1, 0.5) == 0.0
    assert law.sum_density(1, 1000.5) == 0.0


def test_uniform_load_sum_density_k2_triangle():
    # oracle: sum of two U[1,1000] has the triangle density peaking at 1001
    law = UniformLoad(1.0, 1000.0)
    w = 999.0
    assert law.sum_density(2, 1001.0) == pytest.approx(1.0 / w, rel=1e-10)
    for y in (500.0, 800.0, 1400.0, 1900.0):
        expected = (w - abs(y - 1001.0)) / w**2 if abs(y - 1001.0) < w else 0.0
        assert law.sum_density(2, y) == pytest.approx(expected, rel=1e-9, abs=1e-15)


def test_irwin_hall_integrates_to_one():
    for k in (3, 7, 12):
        x = np.linspace(0.0, k, 20_001)
        total = np.trapezoid(_irwin_hall_pdf(x, k), x)
        assert total == pytest.approx(1.0, abs=1e-6)


def test_sum_density_normal_regime_matches_moments():
    # beyond the exact regime the density is the matched normal
    law = UniformLoad(1.0, 1000.0)
    k = 20
    mean = k * 500.5
    var = k * 999.0**2 / 12.0
    got = law.sum_density(k, mean)
    assert got == pytest.approx(1.0 / math.sqrt(2 * math.pi * var), rel=1e-12)


def test_point_load_samples_constant():
    law = PointLoad(3.5)
    assert np.all(law.sample(np.random.default_rng(0), 5) == 3.5)
    assert law.is_atomic and law.lo == law.hi == 3.5


def test_load_law_validation():
    with pytest.raises(ValueError):
        UniformLoad(5.0, 2.0)
    with pytest.raises(ValueError):
        UniformLoad(0.0, 10.0)
    with pytest.raises(ValueError):
        PointLoad(0.0)


# ---------------------------------------------------------------- cycles


def test_cycle_to_measurement_exact_power():
    params = QpcrParams(b=2.0, d_min=1024.0, c_max=50)
    assert cycle_to_measurement(10.0, params) == pytest.approx(1.0, rel=1e-15)


def test_cycle_round_trip():
    params = QpcrParams()
    # only quantities below d_min have a positive cycle count
    for z in (1e-6, 0.37, 0.93):
        c = measurement_to_cycle(z, params)
        assert cycle_to_measurement(c, params) == pytest.approx(z, rel=1e-12)


def test_cycle_below_detection_and_validation():
    params = QpcrParams(c_max=40)
    with pytest.raises(BelowDetection):
        cycle_to_measurement(40.5, params)
    with pytest.raises(ValueError):
        cycle_to_measurement(0.0, params)
    with pytest.raises(ValueError):
        measurement_to_cycle(0.0, params)


def test_qpcr_induced_noise_scale():
    params = QpcrParams(b=1.95, sigma_delta=0.1)
    noise = params.noise_model()
    assert noise.sigma_eps == pytest.approx(0.1 * math.log(1.95), rel=1e-15)
    # the package default noise scale is exactly this reaction's
    assert NoiseModel().sigma_eps == pytest.approx(noise.sigma_eps, rel=1e-15)


def test_qpcr_params_validation():
    with pytest.raises(ValueError):
        QpcrParams(b=1.0)
    with pytest.raises(ValueError):
        QpcrParams(d_min=0.0)
    with pytest.raises(ValueError):
        QpcrParams(sigma_delta=-0.1)
