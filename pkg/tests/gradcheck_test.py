import numpy as np
import pytest
from conftest import randomize

from poseflux.src.models.errors import NumericalError
from poseflux.src.models.maps import TemperatureMap
from poseflux.src.models.params import DenoiserParams
from poseflux.src.services.denoiser import Denoiser
from poseflux.src.services.gradcheck import check_attention, grad_check


def test_linear_projection_is_exact(rng):
    x = rng.normal(size=(1, 4))
    probe = rng.normal(size=(1, 4))

    def loss(a):
        return float(((x @ a["w"]) * probe).sum())

    def grads(a):
        return {"w": x.T @ probe}

    assert grad_check(loss, grads, {"w": rng.normal(size=(4, 4))}, h=1e-4) <= 1e-9


def test_base_attention_gradients():
    assert check_attention("base", h=1e-5) <= 1e-4


def test_appa_attention_gradients():
    assert check_attention("appa", channels=4, rank=2, tokens=3, h=1e-5) <= 1e-4


def test_temporal_attention_gradients_with_temperature():
    tmap = TemperatureMap(np.array([[1.0, 2.5], [4.0, 7.0]]), tau=3.0)
    assert check_attention("temporal", channels=4, frames=3, grid=2, tmap=tmap, h=1e-5) <= 1e-4


def test_rejects_step_outside_range(rng):
    with pytest.raises(ValueError):
        grad_check(lambda a: 0.0, lambda a: a, {"w": np.zeros(2)}, h=1e-2)


def test_non_finite_gradient_raises():
    with pytest.raises(NumericalError):
        grad_check(lambda a: 0.0, lambda a: {"w": np.array([np.nan])}, {"w": np.zeros(1)})


def test_non_finite_central_difference_raises():
    with pytest.raises(NumericalError, match="central difference for w"):
        grad_check(lambda a: float("nan"), lambda a: {"w": np.zeros(2)}, {"w": np.zeros(2)})


def test_unknown_kernel():
    with pytest.raises(ValueError):
        check_attention("causal")


@pytest.mark.parametrize("temporal_on", [False, True])
def test_full_denoiser_loss_gradients(temporal_on):
    rng = np.random.default_rng(99)
    params = randomize(DenoiserParams.initial(rng, channels=4, rank=2, head_count=2), rng)
    b, c, f, h, w = 1, 4, 2, 2, 2
    z_t = rng.normal(size=(b, c, f, h, w))
    eps = rng.normal(size=z_t.shape)
    pose_tokens = rng.random((b, f, h * w, 3))
    source_tokens = rng.random((b, h * w, 3))
    t = np.array([17])
    tmap = TemperatureMap(np.array([[1.0, 3.0], [2.0, 5.5]]), tau=3.0) if temporal_on else None

    def denoiser(arrays):
        return Denoiser(DenoiserParams.from_flat(arrays, head_count=2), temporal_on=temporal_on)

    def loss(arrays):
        return denoiser(arrays).loss(z_t, t, eps, pose_tokens, source_tokens, tmap)

    def grads(arrays):
        return denoiser(arrays).loss_and_grads(z_t, t, eps, pose_tokens, source_tokens, tmap)[1]

    assert grad_check(loss, grads, params.flat(), h=1e-5) <= 1e-4
