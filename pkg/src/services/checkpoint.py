"""
etrl — Binary checkpoint persistence.

File layout (little-endian)
───────────────────────────
    b"ETRL"                     magic
    u8   version
    str  env name               (u32 length + utf-8, same for every str)
    str  algorithm
    str  hyperparameters        (AtppoHyper JSON)
    str  environment config     (JSON)
    u16  n, u32 × n             policy layer dims
    u16  n, u32 × n             value layer dims
    u8   trigger head flag
    u64  total env steps trained
    f64  × …                    policy params [W0, b0, …], log_std, value params

Loading checks the magic, version and exact payload length; nothing is
reinterpreted silently.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from src.core.errors import CheckpointFormatError, DimensionError
from src.models.schemas import Algorithm, AtppoHyper, EnvName
from src.services.nn_core import Network
from src.services.policy import PolicyModel, augmented_dim

logger = logging.getLogger(__name__)

MAGIC = b"ETRL"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    env_name: EnvName
    algorithm: Algorithm
    hyper: AtppoHyper
    policy: PolicyModel
    value_net: Network
    total_steps: int = 0
    env_config: Dict[str, Any] = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @property
    def obs_dim(self) -> int:
        return self.policy.obs_dim

    @property
    def control_dim(self) -> int:
        return self.policy.control_dim


# ═══════════════════════════════════════════════════════════════════════════
# Save
# ═══════════════════════════════════════════════════════════════════════════

def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_dims(dims: Tuple[int, ...]) -> bytes:
    return struct.pack("<H", len(dims)) + struct.pack(f"<{len(dims)}I", *dims)


def _flat(arrays: List[np.ndarray]) -> bytes:
    if not arrays:
        return b""
    return np.concatenate([np.ravel(a) for a in arrays]).astype("<f8").tobytes()


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    parts = [
        MAGIC,
        struct.pack("<B", ckpt.version),
        _pack_str(EnvName(ckpt.env_name).value),
        _pack_str(Algorithm(ckpt.algorithm).value),
        _pack_str(ckpt.hyper.model_dump_json()),
        _pack_str(json.dumps(ckpt.env_config, sort_keys=True)),
        _pack_dims(ckpt.policy.net.layer_dims),
        _pack_dims(ckpt.value_net.layer_dims),
        struct.pack("<B", 1 if ckpt.policy.trigger_head else 0),
        struct.pack("<Q", ckpt.total_steps),
        _flat(ckpt.policy.net.parameters() + [ckpt.policy.log_std] + ckpt.value_net.parameters()),
    ]
    path.write_bytes(b"".join(parts))
    logger.info("Checkpoint written: %s (%d env steps)", path, ckpt.total_steps)
    return path


# ═══════════════════════════════════════════════════════════════════════════
# Load
# ═══════════════════════════════════════════════════════════════════════════

class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"{self.source}: truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError(f"{self.source}: corrupt string field") from exc

    def dims(self) -> Tuple[int, ...]:
        (n,) = self.unpack("<H")
        return tuple(self.unpack(f"<{n}I"))


def _network(dims: Tuple[int, ...], flat: np.ndarray, offset: int) -> Tuple[Network, int]:
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        n_w = fan_in * fan_out
        weights.append(flat[offset:offset + n_w].reshape(fan_out, fan_in).copy())
        offset += n_w
        biases.append(flat[offset:offset + fan_out].copy())
        offset += fan_out
    return Network(tuple(dims), weights, biases), offset


def _n_params(dims: Tuple[int, ...]) -> int:
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


def load_checkpoint(path: Union[str, Path], env: Optional[EnvName] = None) -> Checkpoint:
    """Read a checkpoint; when ``env`` is given the stored env name must match."""
    path = Path(path)
    rd = _Reader(path.read_bytes(), str(path))
    if rd.take(4) != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not an etrl checkpoint")
    (version,) = rd.unpack("<B")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: format version {version}, expected {FORMAT_VERSION}")

    try:
        env_name = EnvName(rd.string())
        algorithm = Algorithm(rd.string())
        hyper = AtppoHyper.model_validate_json(rd.string())
        env_config = json.loads(rd.string())
    except ValueError as exc:
        raise CheckpointFormatError(f"{path}: corrupt header: {exc}") from exc

    policy_dims = rd.dims()
    value_dims = rd.dims()
    if len(policy_dims) < 2 or len(value_dims) < 2 or value_dims[-1] != 1:
        raise CheckpointFormatError(f"{path}: invalid layer dims {policy_dims} / {value_dims}")
    (trigger_head,) = rd.unpack("<B")
    (total_steps,) = rd.unpack("<Q")

    control_dim = policy_dims[-1] - (1 if trigger_head else 0)
    count = _n_params(policy_dims) + control_dim + _n_params(value_dims)
    payload = rd.take(8 * count)
    if rd.pos != len(rd.data):
        raise CheckpointFormatError(f"{path}: {len(rd.data) - rd.pos} trailing bytes")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)

    policy_net, offset = _network(policy_dims, flat, 0)
    log_std = flat[offset:offset + control_dim].copy()
    value_net, _ = _network(value_dims, flat, offset + control_dim)

    if env is not None and EnvName(env) != env_name:
        raise DimensionError(f"{path}: checkpoint trained on '{env_name.value}', requested '{EnvName(env).value}'")

    return Checkpoint(
        env_name=env_name,
        algorithm=algorithm,
        hyper=hyper,
        policy=PolicyModel(policy_net, log_std, control_dim, bool(trigger_head)),
        value_net=value_net,
        total_steps=total_steps,
        env_config=env_config,
        version=version,
    )


def check_env_dims(ckpt: Checkpoint, env_name: EnvName, dims: Tuple[int, int]) -> None:
    """Raise DimensionError unless the checkpoint fits ``(state_dim, control_dim)`` of the env."""
    state_dim, control_dim = dims
    if EnvName(env_name) != ckpt.env_name:
        raise DimensionError(f"checkpoint trained on '{ckpt.env_name.value}', env is '{EnvName(env_name).value}'")
    obs_dim = augmented_dim(state_dim, control_dim, ckpt.hyper.observe_held_control)
    if ckpt.obs_dim != obs_dim or ckpt.control_dim != control_dim:
        raise DimensionError(
            f"checkpoint dims (obs={ckpt.obs_dim}, control={ckpt.control_dim}) do not match "
            f"env (obs={obs_dim}, control={control_dim})"
        )
