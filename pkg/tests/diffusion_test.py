import numpy as np
import pytest

from poseflux.src.models.errors import NumericalError
from poseflux.src.models.maps import TemperatureMap
from poseflux.src.models.pose import RgbImage
from poseflux.src.models.training import NoiseSchedule
from poseflux.src.services.diffusion import ancestral_sample, make_schedule, q_sample, sample, seeded_noise


def test_schedule_examples():
    assert np.array_equal(make_schedule(1, 0.5, 0.5).alpha_bars, [0.5])
    sched = make_schedule(2, 0.1, 0.2)
    np.testing.assert_allclose(sched.alpha_bars, [0.9, 0.72], atol=1e-15)
    assert sched.steps == 2 and sched.alpha_bar(2) == pytest.approx(0.72)


@pytest.mark.parametrize("steps, beta1, beta_t", [(0, 0.1, 0.2), (5, 0.0, 0.2), (5, 0.3, 0.2), (5, 0.1, 1.0)])
def test_schedule_rejects_bad_ranges(steps, beta1, beta_t):
    with pytest.raises(ValueError):
        make_schedule(steps, beta1, beta_t)


def test_alpha_bars_strictly_decrease():
    ab = make_schedule(100, 1e-4, 0.02).alpha_bars
    assert np.all(np.diff(ab) < 0)
    assert 0 < ab[-1] < ab[0] < 1


def _fixed_schedule(alpha_bar):
    ab = np.array([alpha_bar])
    return NoiseSchedule(1.0 - ab, ab, ab)


def test_q_sample_limits(rng):
    x0, eps = rng.normal(size=(1, 2, 1, 2, 2)), rng.normal(size=(1, 2, 1, 2, 2))
    assert np.array_equal(q_sample(x0, 1, eps, _fixed_schedule(1.0)), x0)
    assert np.array_equal(q_sample(x0, 1, eps, _fixed_schedule(0.0)), eps)


def test_q_sample_per_batch_timesteps(rng):
    sched = make_schedule(10, 0.1, 0.3)
    x0, eps = rng.normal(size=(2, 2, 1, 1, 1)), rng.normal(size=(2, 2, 1, 1, 1))
    batched = q_sample(x0, np.array([2, 9]), eps, sched)
    np.testing.assert_allclose(batched[1], q_sample(x0[1:], 9, eps[1:], sched)[0], atol=1e-15)


def test_q_sample_variance():
    rng = np.random.default_rng(5)
    eps = rng.standard_normal((100_000, 1, 1, 1, 1))
    x = q_sample(np.zeros_like(eps), 1, eps, _fixed_schedule(0.64))
    assert x.var() == pytest.approx(0.36, abs=0.01)


def test_q_sample_shape_mismatch():
    with pytest.raises(ValueError):
        q_sample(np.zeros((1, 2)), 1, np.zeros((2, 2)), _fixed_schedule(0.5))


def test_seeded_noise_is_reproducible():
    x_a, noise_a = seeded_noise(3, (1, 2, 3))
    x_b, noise_b = seeded_noise(3, (1, 2, 3))
    assert np.array_equal(x_a, x_b)
    assert np.array_equal(noise_a(5), noise_b(5))


def test_perfect_predictor_recovers_clean_latent(rng):
    """With the true noise and a one-step schedule the mean is exactly x0."""
    sched = make_schedule(1, 0.3, 0.3)
    x0, eps = rng.normal(size=(1, 2, 1, 2, 2)), rng.normal(size=(1, 2, 1, 2, 2))
    x_t = q_sample(x0, 1, eps, sched)
    out = ancestral_sample(lambda x, t: eps, sched, x_t, lambda t: np.zeros_like(x0))
    np.testing.assert_allclose(out, x0, atol=1e-12)


def test_non_finite_prediction_raises(rng):
    sched = make_schedule(3, 0.1, 0.2)
    x = rng.normal(size=(1, 1, 1, 1, 1))
    with pytest.raises(NumericalError, match="timestep 3"):
        ancestral_sample(lambda x, t: np.full_like(x, np.inf), sched, x, lambda t: np.zeros_like(x))


def _source():
    return RgbImage(np.full((64, 64, 3), 128, dtype=np.uint8))


def test_sample_is_deterministic(tiny_params, walking_sequence):
    sched = make_schedule(5, 0.01, 0.2)

    def run(seed):
        return sample(tiny_params, _source(), walking_sequence, sched, None, seed, 2, 2)

    first = run(11)
    assert first.shape == (1, 4, 4, 2, 2)
    assert np.array_equal(first, run(11))
    assert not np.array_equal(first, run(12))


def test_sample_stays_finite_across_seeds(tiny_params, walking_sequence):
    sched = make_schedule(5, 0.01, 0.2)
    tiny_params.stage = 2
    tmap = TemperatureMap(np.array([[1.0, 4.0], [2.0, 7.0]]), tau=3.0)
    for seed in range(100):
        out = sample(tiny_params, _source(), walking_sequence, sched, tmap, seed, 2, 2)
        assert np.all(np.isfinite(out))
