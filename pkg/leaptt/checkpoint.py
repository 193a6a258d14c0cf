# leaptt/checkpoint.py

"""
GMCK checkpoint files.

Layout (little-endian)::

    b"GMCK" | u32 version | u32 header length | JSON header | payload

The JSON header (sorted keys) holds the model config, the section names and
shapes in layout order, the dtype, seed, step count and provenance. The
payload is the flat parameter vector.
"""

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from leaptt.errors import CheckpointError, ProvenanceError
from leaptt.params import ParamVector
from leaptt.types import ModelConfig
from leaptt.utils import sha256_hex

MAGIC = b"GMCK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sII")
_DTYPES = {"float64": "<f8", "float32": "<f4"}


@dataclass
class Checkpoint:
    """
    Parameters plus the metadata needed to resume or audit a run.

    Attributes:
        params: Parameter vector
        config: Model configuration the sections were laid out for
        seed: Global seed of the producing run
        step: Updates applied by the producing stage
        stage: Stage that wrote the checkpoint ("init", "ssl", "leap", "finetune")
        parent_hash: sha256 of the parent checkpoint file, None for the root
        parent: File name of the parent checkpoint, relative to this one
        config_hash: Hash of the resolved run config
        extra: Free-form JSON metadata (e.g. best validation loss)
    """

    params: ParamVector
    config: ModelConfig
    seed: int = 0
    step: int = 0
    stage: str = "init"
    parent_hash: Optional[str] = None
    parent: Optional[str] = None
    config_hash: Optional[str] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def header(self) -> Dict[str, Any]:
        dtype = np.dtype(self.params.dtype).name
        if dtype not in _DTYPES:
            raise CheckpointError(f"Unsupported parameter dtype: {dtype}")
        return {
            "config": self.config.to_dict(),
            "sections": [[name, list(shape)] for name, shape in self.params.layout],
            "dtype": dtype,
            "seed": self.seed,
            "step": self.step,
            "provenance": {
                "stage": self.stage,
                "parent_hash": self.parent_hash,
                "parent": self.parent,
                "config_hash": self.config_hash,
            },
            "extra": self.extra,
        }


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    header = checkpoint.header()
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = checkpoint.params.flatten().astype(_DTYPES[header["dtype"]]).tobytes()
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes + payload


def decode_checkpoint(data: bytes) -> Checkpoint:
    """
    Parses checkpoint bytes.

    Raises:
        CheckpointError: On bad magic, unknown version, or a truncated payload
    """
    if len(data) < _PREFIX.size:
        raise CheckpointError("Checkpoint is truncated")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"Not a checkpoint (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}")

    start = _PREFIX.size
    try:
        header = json.loads(data[start : start + header_len].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        layout = [(name, tuple(shape)) for name, shape in header["sections"]]
        dtype = _DTYPES[header["dtype"]]
        provenance = header["provenance"]
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"Corrupt checkpoint header: {e}") from e

    payload = data[start + header_len :]
    vector = np.frombuffer(payload, dtype=dtype)
    expected = int(sum(int(np.prod(shape)) for _, shape in layout))
    if vector.size != expected or len(payload) != expected * np.dtype(dtype).itemsize:
        raise CheckpointError(
            f"Checkpoint payload holds {len(payload)} bytes, expected {expected} values"
        )

    params = ParamVector.from_flat(layout, vector.astype(np.dtype(dtype).newbyteorder("=")))
    params.check_layout(config)
    return Checkpoint(
        params=params,
        config=config,
        seed=int(header.get("seed", 0)),
        step=int(header.get("step", 0)),
        stage=provenance.get("stage", "init"),
        parent_hash=provenance.get("parent_hash"),
        parent=provenance.get("parent"),
        config_hash=provenance.get("config_hash"),
        extra=header.get("extra", {}),
    )


def checkpoint_hash(path: str) -> str:
    """sha256 of a checkpoint file's bytes."""
    with open(path, "rb") as f:
        return sha256_hex(f.read())


def save_checkpoint(checkpoint: Checkpoint, path: str) -> str:
    """
    Writes a checkpoint atomically.

    Returns:
        The sha256 of the written file
    """
    data = encode_checkpoint(checkpoint)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as f:
        f.write(data)
    os.replace(tmp_path, path)
    return sha256_hex(data)


def load_checkpoint(
    path: str,
    expected_config: Optional[ModelConfig] = None,
    verify_parent: bool = False,
) -> Checkpoint:
    """
    Reads a checkpoint file.

    Args:
        path: Checkpoint file
        expected_config: If given, the stored model config must equal it
        verify_parent: Re-hash the parent file and compare with the recorded hash

    Raises:
        CheckpointError: If the file is missing, corrupt or has another config
        ProvenanceError: If the parent is missing or was modified
    """
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e

    checkpoint = decode_checkpoint(data)
    if expected_config is not None and checkpoint.config != expected_config:
        raise CheckpointError(
            f"Checkpoint {path} was written for a different model configuration"
        )

    if verify_parent and checkpoint.parent_hash is not None:
        parent_path = parent_path_of(path, checkpoint)
        if parent_path is None or not os.path.exists(parent_path):
            raise ProvenanceError(f"Parent of {path} not found: {checkpoint.parent}")
        actual = checkpoint_hash(parent_path)
        if actual != checkpoint.parent_hash:
            raise ProvenanceError(
                f"Parent {parent_path} was modified: recorded {checkpoint.parent_hash[:12]}, "
                f"found {actual[:12]}"
            )
    return checkpoint


def parent_path_of(path: str, checkpoint: Checkpoint) -> Optional[str]:
    if checkpoint.parent is None:
        return None
    return os.path.join(os.path.dirname(os.path.abspath(path)), checkpoint.parent)
