import struct
from pathlib import Path

import numpy as np
import pytest

from poseflux.src.models.errors import CheckpointError, ConfigError
from poseflux.src.models.training import TrainConfig
from poseflux.src.services.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def test_round_trip_keeps_bytes_and_stage(tmp_path, tiny_params):
    tiny_params.stage = 1
    path = tmp_path / "model.ckpt"
    save_checkpoint(str(path), tiny_params)
    loaded = load_checkpoint(str(path))
    assert loaded.digests() == tiny_params.digests()
    assert loaded.stage == 1 and loaded.head_count == 2
    assert encode_checkpoint(loaded) == path.read_bytes()


def test_header_checks(tiny_params):
    data = encode_checkpoint(tiny_params)
    assert data.startswith(b"TCKPT")
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"XCKPT" + data[5:])
    with pytest.raises(CheckpointError, match="version"):
        decode_checkpoint(data[:5] + struct.pack("<I", 9) + data[9:])


def test_corrupted_payload_fails_digest(tiny_params):
    data = bytearray(encode_checkpoint(tiny_params))
    data[-12] ^= 0x01
    with pytest.raises(CheckpointError, match="digest"):
        decode_checkpoint(bytes(data))


def test_truncated_checkpoint(tiny_params):
    data = encode_checkpoint(tiny_params)
    with pytest.raises(CheckpointError, match="truncated"):
        decode_checkpoint(data[:-3])


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "absent.ckpt"))


def _write(tmp_path, text):
    path = tmp_path / "train.conf"
    path.write_text(text)
    return str(path)


def test_config_defaults_and_values(tmp_path):
    cfg = TrainConfig.from_file(_write(tmp_path, "stage = 2\nlr = 0.01\nT = 50\n"))
    assert cfg.stage == 2 and cfg.learning_rate == 0.01 and cfg.steps_t == 50
    assert cfg.frames == 8 and cfg.channels == 16 and cfg.tau == 3.0


def test_stage_one_forces_single_frames(tmp_path):
    assert TrainConfig.from_file(_write(tmp_path, "stage = 1\nf = 8\n")).frames == 1


@pytest.mark.parametrize(
    "text, message",
    [
        ("colour = red\n", "unknown key"),
        ("lr = fast\n", "expects a float"),
        ("stage = 3\n", "stage"),
        ("c =\n", "no value"),
    ],
)
def test_config_errors(tmp_path, text, message):
    with pytest.raises(ConfigError, match=message):
        TrainConfig.from_file(_write(tmp_path, text))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        TrainConfig.from_file(str(tmp_path / "absent.conf"))


def test_shipped_configs_parse():
    stage1 = TrainConfig.from_file(str(CONFIG_DIR / "stage1.conf"))
    stage2 = TrainConfig.from_file(str(CONFIG_DIR / "stage2.conf"))
    assert (stage1.stage, stage1.frames) == (1, 1)
    assert (stage2.stage, stage2.frames) == (2, 8)
    assert stage1.seed == stage2.seed == 7
    np.testing.assert_allclose([stage1.beta1, stage1.beta_t], [1e-4, 0.02])
