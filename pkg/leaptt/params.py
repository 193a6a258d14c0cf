"""
Flat, named parameter vectors.

The section order and shapes are a pure function of ``ModelConfig``; LEAP
trajectories and optimizers work on the flattened vector, the model reads the
named sections.
"""

from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Tuple

import numpy as np

from leaptt.errors import CheckpointError, ShapeError
from leaptt.types import ModelConfig

# how a section is initialized
UNIFORM = "uniform"
ONES = "ones"
ZEROS = "zeros"


@dataclass(frozen=True)
class SectionSpec:
    """Name, shape and initialization scheme of one parameter section."""

    name: str
    shape: Tuple[int, ...]
    init: str = UNIFORM
    fan_in: int = 1

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


def param_layout(config: ModelConfig) -> List[SectionSpec]:
    """
    Ordered parameter sections for a model configuration.

    Examples:
        >>> layout = param_layout(ModelConfig(num_blocks=0))
        >>> layout[0].name
        'subsample.conv1.weight'
    """
    d_in = config.input_dim
    ch = config.conv_channels
    dim = config.model_dim
    pred = config.predictor_dim
    joint = config.joint_dim
    out = config.vocab_size + 1

    specs = [
        SectionSpec("subsample.conv1.weight", (3 * d_in, ch), fan_in=3 * d_in),
        SectionSpec("subsample.conv1.bias", (ch,), fan_in=3 * d_in),
        SectionSpec("subsample.conv2.weight", (3 * ch, ch), fan_in=3 * ch),
        SectionSpec("subsample.conv2.bias", (ch,), fan_in=3 * ch),
        SectionSpec("subsample.proj.weight", (ch, dim), fan_in=ch),
        SectionSpec("subsample.proj.bias", (dim,), fan_in=ch),
        SectionSpec("encoder.mask_embedding", (dim,), fan_in=dim),
    ]

    for b in range(config.num_blocks):
        prefix = f"encoder.blocks.{b}"
        specs += [
            SectionSpec(f"{prefix}.attn.query", (dim, dim), fan_in=dim),
            SectionSpec(f"{prefix}.attn.key", (dim, dim), fan_in=dim),
            SectionSpec(f"{prefix}.attn.value", (dim, dim), fan_in=dim),
            SectionSpec(f"{prefix}.attn.out", (dim, dim), fan_in=dim),
            SectionSpec(f"{prefix}.attn.out_bias", (dim,), fan_in=dim),
            SectionSpec(
                f"{prefix}.attn.rel_bias",
                (config.num_heads, 2 * config.rel_clip + 1),
                fan_in=dim,
            ),
            SectionSpec(f"{prefix}.norm1.gain", (dim,), init=ONES),
            SectionSpec(f"{prefix}.norm1.bias", (dim,), init=ZEROS),
            SectionSpec(f"{prefix}.ff.in_weight", (dim, config.ff_dim), fan_in=dim),
            SectionSpec(f"{prefix}.ff.in_bias", (config.ff_dim,), fan_in=dim),
            SectionSpec(f"{prefix}.ff.out_weight", (config.ff_dim, dim), fan_in=config.ff_dim),
            SectionSpec(f"{prefix}.ff.out_bias", (dim,), fan_in=config.ff_dim),
            SectionSpec(f"{prefix}.norm2.gain", (dim,), init=ONES),
            SectionSpec(f"{prefix}.norm2.bias", (dim,), init=ZEROS),
        ]

    specs += [
        SectionSpec("ssl.target.weight", (dim, dim), fan_in=dim),
        SectionSpec("ssl.target.bias", (dim,), fan_in=dim),
        SectionSpec("predictor.embedding", (out, pred), fan_in=pred),
    ]
    for gate in ("update", "reset", "candidate"):
        specs += [
            SectionSpec(f"predictor.gru.{gate}.input", (pred, pred), fan_in=pred),
            SectionSpec(f"predictor.gru.{gate}.hidden", (pred, pred), fan_in=pred),
            SectionSpec(f"predictor.gru.{gate}.bias", (pred,), fan_in=pred),
        ]
    specs += [
        SectionSpec("joint.encoder_weight", (dim, joint), fan_in=dim),
        SectionSpec("joint.predictor_weight", (pred, joint), fan_in=pred),
        SectionSpec("joint.bias", (joint,), fan_in=joint),
        SectionSpec("joint.out_weight", (joint, out), fan_in=joint),
        SectionSpec("joint.out_bias", (out,), fan_in=joint),
    ]
    return specs


# sections touched by each training stage
ENCODER_PREFIXES = ("subsample.", "encoder.")
SSL_PREFIXES = ENCODER_PREFIXES + ("ssl.",)


class ParamVector:
    """
    Ordered named parameter sections with a flat view.

    Args:
        sections: Mapping from section name to array, in layout order
    """

    def __init__(self, sections: Mapping[str, np.ndarray]):
        self._sections: "OrderedDict[str, np.ndarray]" = OrderedDict(
            (name, np.asarray(value)) for name, value in sections.items()
        )

    def __getitem__(self, name: str) -> np.ndarray:
        return self._sections[name]

    def __contains__(self, name: str) -> bool:
        return name in self._sections

    def __iter__(self) -> Iterator[str]:
        return iter(self._sections)

    def __len__(self) -> int:
        return len(self._sections)

    def items(self):
        return self._sections.items()

    def as_dict(self) -> Dict[str, np.ndarray]:
        return dict(self._sections)

    @property
    def names(self) -> List[str]:
        return list(self._sections)

    @property
    def layout(self) -> List[Tuple[str, Tuple[int, ...]]]:
        return [(name, tuple(value.shape)) for name, value in self._sections.items()]

    @property
    def size(self) -> int:
        return int(sum(value.size for value in self._sections.values()))

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self._sections.values())).dtype

    def flatten(self) -> np.ndarray:
        """Concatenates all sections in order into one vector P."""
        if not self._sections:
            return np.zeros(0)
        return np.concatenate([value.reshape(-1) for value in self._sections.values()])

    @classmethod
    def from_flat(
        cls, layout: List[Tuple[str, Tuple[int, ...]]], vector: np.ndarray
    ) -> "ParamVector":
        """Inverse of ``flatten`` for a given layout."""
        total = int(sum(int(np.prod(shape)) for _, shape in layout))
        if vector.ndim != 1 or vector.size != total:
            raise ShapeError("ParamVector.from_flat", [vector.shape, (total,)])

        sections = OrderedDict()
        offset = 0
        for name, shape in layout:
            size = int(np.prod(shape))
            sections[name] = vector[offset : offset + size].reshape(shape).copy()
            offset += size
        return cls(sections)

    def with_flat(self, vector: np.ndarray) -> "ParamVector":
        return ParamVector.from_flat(self.layout, vector)

    def copy(self) -> "ParamVector":
        return ParamVector(OrderedDict((k, v.copy()) for k, v in self._sections.items()))

    def astype(self, dtype) -> "ParamVector":
        return ParamVector(OrderedDict((k, v.astype(dtype)) for k, v in self._sections.items()))

    def zeros_like(self) -> "ParamVector":
        return ParamVector(OrderedDict((k, np.zeros_like(v)) for k, v in self._sections.items()))

    def section_mask(self, prefixes: Tuple[str, ...]) -> np.ndarray:
        """Flat 0/1 mask selecting the sections whose names start with any prefix."""
        parts = [
            np.full(value.size, 1.0 if name.startswith(prefixes) else 0.0)
            for name, value in self._sections.items()
        ]
        return np.concatenate(parts) if parts else np.zeros(0)

    def check_layout(self, config: ModelConfig) -> None:
        """Raises CheckpointError unless the sections match the config's layout."""
        expected = [(spec.name, spec.shape) for spec in param_layout(config)]
        if self.layout != expected:
            raise CheckpointError("Parameter sections do not match the model configuration")


def init_params(config: ModelConfig, seed: int, dtype=np.float64) -> ParamVector:
    """
    Seeded initialization: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per section;
    layer-norm gains start at one and layer-norm biases at zero.
    """
    rng = np.random.default_rng(seed)
    sections = OrderedDict()
    for spec in param_layout(config):
        if spec.init == ONES:
            value = np.ones(spec.shape)
        elif spec.init == ZEROS:
            value = np.zeros(spec.shape)
        else:
            bound = 1.0 / np.sqrt(spec.fan_in)
            value = rng.uniform(-bound, bound, size=spec.shape)
        sections[spec.name] = value.astype(dtype)
    return ParamVector(sections)
