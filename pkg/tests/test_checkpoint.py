"""
Tests for binary checkpoint persistence.
"""

import struct
from dataclasses import replace

import numpy as np
import pytest

from src.core.errors import CheckpointFormatError, DimensionError
from src.models.schemas import Algorithm, AtppoHyper, EngagementConfig, EnvName, IntegratorConfig
from src.services.checkpoint import MAGIC, Checkpoint, check_env_dims, load_checkpoint, save_checkpoint
from src.services.policy import policy_init, value_init


def _checkpoint(trigger_head: bool = True, env: EnvName = EnvName.INTEGRATOR) -> Checkpoint:
    state_dim = 1 if env == EnvName.INTEGRATOR else 5
    hyper = AtppoHyper(hidden_sizes=(5, 3), force_trigger=not trigger_head, seed=4)
    env_config = IntegratorConfig() if env == EnvName.INTEGRATOR else EngagementConfig()
    return Checkpoint(
        env_name=env,
        algorithm=Algorithm.ATPPO if trigger_head else Algorithm.PPO,
        hyper=hyper,
        policy=policy_init(state_dim + 1, 1, (5, 3), seed=4, init_log_std=-0.7, trigger_head=trigger_head),
        value_net=value_init(state_dim + 1, (5, 3), seed=5),
        total_steps=12345,
        env_config=env_config.model_dump(),
    )


def _same_parameters(a: Checkpoint, b: Checkpoint) -> bool:
    pa = a.policy.net.parameters() + [a.policy.log_std] + a.value_net.parameters()
    pb = b.policy.net.parameters() + [b.policy.log_std] + b.value_net.parameters()
    return len(pa) == len(pb) and all(np.array_equal(x, y) for x, y in zip(pa, pb))


class TestSaveLoad:
    @pytest.mark.parametrize("trigger_head", [True, False])
    def test_restores_everything(self, tmp_path, trigger_head):
        ckpt = _checkpoint(trigger_head)
        path = save_checkpoint(ckpt, tmp_path / "c.etrl")
        loaded = load_checkpoint(path)
        assert _same_parameters(ckpt, loaded)
        assert loaded.policy.trigger_head == trigger_head
        assert loaded.algorithm == ckpt.algorithm
        assert loaded.env_name == EnvName.INTEGRATOR
        assert loaded.hyper == ckpt.hyper
        assert loaded.env_config == ckpt.env_config
        assert loaded.total_steps == 12345
        assert loaded.policy.net.layer_dims == ckpt.policy.net.layer_dims

    def test_save_is_byte_stable(self, tmp_path):
        ckpt = _checkpoint()
        a = save_checkpoint(ckpt, tmp_path / "a.etrl").read_bytes()
        b = save_checkpoint(load_checkpoint(tmp_path / "a.etrl"), tmp_path / "b.etrl").read_bytes()
        assert a == b
        assert a[:4] == MAGIC

    def test_creates_parent_directory(self, tmp_path):
        path = save_checkpoint(_checkpoint(), tmp_path / "nested" / "dir" / "c.etrl")
        assert path.exists()


class TestCorruptFiles:
    def _saved(self, tmp_path):
        return save_checkpoint(_checkpoint(), tmp_path / "c.etrl")

    def test_bad_magic(self, tmp_path):
        path = self._saved(tmp_path)
        path.write_bytes(b"NOPE" + path.read_bytes()[4:])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        path = self._saved(tmp_path)
        data = path.read_bytes()
        path.write_bytes(data[:4] + struct.pack("<B", 99) + data[5:])
        with pytest.raises(CheckpointFormatError, match="version"):
            load_checkpoint(path)

    @pytest.mark.parametrize("cut", [3, 10, 60, 1])
    def test_truncated(self, tmp_path, cut):
        path = self._saved(tmp_path)
        data = path.read_bytes()
        path.write_bytes(data[:cut] if cut < 5 else data[:-cut])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path):
        path = self._saved(tmp_path)
        path.write_bytes(path.read_bytes() + b"\x00" * 8)
        with pytest.raises(CheckpointFormatError, match="trailing"):
            load_checkpoint(path)

    def test_corrupt_header(self, tmp_path):
        path = self._saved(tmp_path)
        data = bytearray(path.read_bytes())
        # first string field is the env name, right after magic + version + u32 length
        data[9:9 + len(b"integrator")] = b"xntegrator"
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)


class TestEnvChecks:
    def test_requested_env_mismatch(self, tmp_path):
        path = save_checkpoint(_checkpoint(), tmp_path / "c.etrl")
        with pytest.raises(DimensionError):
            load_checkpoint(path, env=EnvName.PURSUIT)
        assert load_checkpoint(path, env=EnvName.INTEGRATOR).env_name == EnvName.INTEGRATOR

    def test_check_env_dims(self):
        check_env_dims(_checkpoint(), EnvName.INTEGRATOR, (1, 1))
        check_env_dims(_checkpoint(env=EnvName.PURSUIT), EnvName.PURSUIT, (5, 1))
        with pytest.raises(DimensionError):
            check_env_dims(_checkpoint(), EnvName.PURSUIT, (5, 1))
        with pytest.raises(DimensionError):
            check_env_dims(_checkpoint(), EnvName.INTEGRATOR, (2, 1))
        with pytest.raises(DimensionError):
            check_env_dims(_checkpoint(), EnvName.INTEGRATOR, (1, 2))

    def test_check_env_dims_with_held_control(self, tmp_path):
        hyper = AtppoHyper(hidden_sizes=(4,), observe_held_control=True)
        ckpt = Checkpoint(
            env_name=EnvName.PURSUIT,
            algorithm=Algorithm.ATPPO,
            hyper=hyper,
            policy=policy_init(7, 1, (4,), seed=0),
            value_net=value_init(7, (4,), seed=1),
            total_steps=1,
            env_config=EngagementConfig().model_dump(),
        )
        check_env_dims(ckpt, EnvName.PURSUIT, (5, 1))
        restored = load_checkpoint(save_checkpoint(ckpt, tmp_path / "held.etrl"))
        assert restored.hyper.observe_held_control
        check_env_dims(restored, EnvName.PURSUIT, (5, 1))
        plain = replace(ckpt, hyper=AtppoHyper(hidden_sizes=(4,)))
        with pytest.raises(DimensionError):
            check_env_dims(plain, EnvName.PURSUIT, (5, 1))
