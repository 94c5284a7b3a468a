import numpy as np
import pytest

from poseflux.src.models.pose import RgbImage
from poseflux.src.models.windows import WindowPlan
from poseflux.src.services.denoiser import Denoiser, prepare_conditioning
from poseflux.src.services.diffusion import ancestral_sample, make_schedule, sample, seeded_noise
from poseflux.src.services.long_video import fused_eps, plan_windows, sample_long
from poseflux.src.services.temperature_map import window_temperature_map


def test_plan_examples():
    plan = plan_windows(8, 8, 4)
    assert plan.windows == ((0, 8),)

    plan = plan_windows(12, 8, 4)
    assert plan.starts() == [0, 4]
    assert plan.coverage.tolist() == [1, 1, 1, 1, 2, 2, 2, 2, 1, 1, 1, 1]

    # the last regular window stops short, so a clamped one is added
    assert plan_windows(10, 8, 4).starts() == [0, 2]
    assert plan_windows(16, 8, 4).starts() == [0, 4, 8]


@pytest.mark.parametrize("total, window, stride", [(8, 0, 1), (8, 9, 1), (8, 4, 0), (8, 4, 5)])
def test_plan_rejects_bad_sizes(total, window, stride):
    with pytest.raises(ValueError):
        plan_windows(total, window, stride)


def test_plan_rejects_gaps():
    with pytest.raises(ValueError, match="not covered"):
        WindowPlan(6, 2, 2, ((0, 2), (4, 6)))


def test_constant_predictor_is_preserved(rng):
    z = rng.normal(size=(1, 2, 12, 2, 2))
    out = fused_eps(z, plan_windows(12, 8, 4), lambda w, _: np.full(w.shape, 0.25), workers=1)
    assert np.array_equal(out, np.full(z.shape, 0.25))


def test_single_window_is_identity(rng):
    z = rng.normal(size=(1, 2, 5, 2, 2))
    out = fused_eps(z, plan_windows(5, 5, 2), lambda w, _: np.sin(w), workers=1)
    assert np.array_equal(out, np.sin(z))


def test_overlap_is_averaged():
    z = np.zeros((1, 1, 12, 1, 1))
    plan = plan_windows(12, 8, 4)

    def predictor(w, window):
        return np.full(w.shape, 1.0 if window[0] == 0 else 3.0)

    out = fused_eps(z, plan, predictor, workers=1)[0, 0, :, 0, 0]
    assert out.tolist() == [1.0] * 4 + [2.0] * 4 + [3.0] * 4


def test_thread_pool_matches_sequential(rng):
    z = rng.normal(size=(1, 2, 16, 2, 2))
    plan = plan_windows(16, 8, 4)

    def predictor(w, window):
        return np.tanh(w) * (window[0] + 1)

    assert np.array_equal(fused_eps(z, plan, predictor, workers=4), fused_eps(z, plan, predictor, workers=1))


def test_prediction_shape_is_checked(rng):
    z = rng.normal(size=(1, 2, 8, 2, 2))
    with pytest.raises(ValueError, match="prediction"):
        fused_eps(z, plan_windows(8, 4, 4), lambda w, _: w[:, :, :1], workers=1)
    with pytest.raises(ValueError):
        fused_eps(z, plan_windows(6, 4, 2), lambda w, _: w, workers=1)


def _source():
    return RgbImage(np.full((64, 64, 3), 200, dtype=np.uint8))


def test_one_window_matches_short_sampler(tiny_params, walking_sequence):
    tiny_params.stage = 2
    sched = make_schedule(4, 0.01, 0.2)
    tmap = window_temperature_map(walking_sequence, 3.0, 2, 2)
    short = sample(tiny_params, _source(), walking_sequence, sched, tmap, 9, 2, 2)
    long = sample_long(tiny_params, _source(), walking_sequence, sched, plan_windows(4, 4, 2), 3.0, 9, 2, 2)
    assert np.array_equal(short, long)


def test_long_sampling_is_deterministic(tiny_params, walking_sequence):
    tiny_params.stage = 2
    sched = make_schedule(3, 0.01, 0.2)
    plan = plan_windows(4, 2, 1)
    first = sample_long(tiny_params, _source(), walking_sequence, sched, plan, 3.0, 1, 2, 2, workers=2)
    again = sample_long(tiny_params, _source(), walking_sequence, sched, plan, 3.0, 1, 2, 2, workers=1)
    assert first.shape == (1, 4, 4, 2, 2)
    assert np.array_equal(first, again)
    assert np.all(np.isfinite(first))


def test_disjoint_windows_sample_independently(tiny_params, walking_sequence):
    tiny_params.stage = 2
    sched = make_schedule(4, 0.01, 0.2)
    plan = plan_windows(4, 2, 2)
    long = sample_long(tiny_params, _source(), walking_sequence, sched, plan, 3.0, 5, 2, 2, workers=1)

    shape = (1, 4, 4, 2, 2)
    x_t, step_noise = seeded_noise(5, shape)
    noises = {t: step_noise(t) for t in range(sched.steps, 1, -1)}
    pose_tokens, source_tokens = prepare_conditioning(walking_sequence, _source(), 2, 2)
    denoiser = Denoiser(tiny_params)
    for start, end in plan.windows:
        tmap = window_temperature_map(walking_sequence.window(start, 2), 3.0, 2, 2)

        def eps_fn(x, t):
            return denoiser.eps_predict(x, t, pose_tokens[:, start:end], source_tokens, tmap)

        piece = ancestral_sample(eps_fn, sched, x_t[:, :, start:end], lambda t: noises[t][:, :, start:end])
        assert np.array_equal(piece, long[:, :, start:end])


def test_temperature_can_be_switched_off(tiny_params, walking_sequence):
    tiny_params.stage = 2
    sched = make_schedule(2, 0.01, 0.2)
    plan = plan_windows(4, 4, 4)
    plain = sample(tiny_params, _source(), walking_sequence, sched, None, 3, 2, 2)
    assert np.array_equal(sample_long(tiny_params, _source(), walking_sequence, sched, plan, None, 3, 2, 2), plain)
