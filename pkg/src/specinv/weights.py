"""Network weight container and the SIW1 binary weights format.

Tensor order and names are fixed (see ``tensor_spec``). The two output
heads emit one channel each in full mode and two in strided mode; in
strided mode channel 0 belongs to the skipped (older) frame and channel 1
to the current frame.

SIW1 layout, little-endian throughout: magic ``SIW1``, u32 version (1),
u8 mode (0 = full, 1 = strided), u32 tensor count, then per tensor:
u16 name length, UTF-8 name, u8 rank, rank x u32 dims, and the values as
row-major IEEE-754 float32.
"""

from __future__ import annotations

import struct

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

_MAGIC = b"SIW1"
_VERSION = 1
_MODES = ("full", "strided")

# Frozen learnable-parameter counts (asserted at construction; the paper-level
# 5% bands around 8.46k/8.57k are checked in tests).
FULL_PARAM_COUNT = 8544
STRIDED_PARAM_COUNT = 8646

STEM_CHANNELS = 50
TRUNK_CHANNELS = 10
HEAD_CHANNELS = 50
BODY_BLOCKS = 5


class WeightsFormatError(ValueError):
    """Malformed or mismatched SIW1 weights file."""


def _bn_tensors(prefix: str, channels: int) -> list[tuple[str, tuple[int, ...]]]:
    return [
        (f"{prefix}.gamma", (channels,)),
        (f"{prefix}.beta", (channels,)),
        (f"{prefix}.running_mean", (channels,)),
        (f"{prefix}.running_var", (channels,)),
    ]


def _conv_tensors(prefix: str, out_ch: int, in_ch: int, kf: int, kt: int):
    return [
        (f"{prefix}.kernel", (out_ch, in_ch, kf, kt)),
        (f"{prefix}.bias", (out_ch,)),
    ]


def tensor_spec(mode: str) -> list[tuple[str, tuple[int, ...]]]:
    """Fixed (name, shape) list for one mode, in serialization order."""
    if mode not in _MODES:
        raise ValueError(f"unknown mode {mode!r}")
    out_ch = 2 if mode == "strided" else 1
    spec: list[tuple[str, tuple[int, ...]]] = []
    spec += _bn_tensors("stem.bn", 1)
    spec += _conv_tensors("stem.conv", STEM_CHANNELS, 1, 3, 4)
    spec += _conv_tensors("stem.gate.value", TRUNK_CHANNELS, STEM_CHANNELS, 1, 1)
    spec += _conv_tensors("stem.gate.gate", TRUNK_CHANNELS, STEM_CHANNELS, 1, 1)
    for i in range(BODY_BLOCKS):
        spec += _conv_tensors(f"body.{i}.conv", TRUNK_CHANNELS, TRUNK_CHANNELS, 1, 1)
        spec += _bn_tensors(f"body.{i}.bn", TRUNK_CHANNELS)
    spec += _bn_tensors("direct.bn", TRUNK_CHANNELS)
    spec += _conv_tensors("head.gate.value", HEAD_CHANNELS, 2 * TRUNK_CHANNELS, 3, 1)
    spec += _conv_tensors("head.gate.gate", HEAD_CHANNELS, 2 * TRUNK_CHANNELS, 3, 1)
    spec += _conv_tensors("head.out_bpd", out_ch, HEAD_CHANNELS, 1, 1)
    spec += _conv_tensors("head.out_fpd", out_ch, HEAD_CHANNELS, 1, 1)
    return spec


def _is_learnable(name: str) -> bool:
    return not name.endswith((".running_mean", ".running_var"))


class CnnWeights:
    """Ordered named tensors for one network mode, float64 in memory."""

    def __init__(self, mode: str, tensors: dict[str, np.ndarray]):
        spec = tensor_spec(mode)
        expected = [name for name, _ in spec]
        if list(tensors) != expected:
            unknown = sorted(set(tensors) - set(expected))
            missing = sorted(set(expected) - set(tensors))
            raise WeightsFormatError(
                f"tensor names do not match the {mode} spec "
                f"(unknown={unknown}, missing={missing})"
            )
        self.mode = mode
        self.tensors: dict[str, np.ndarray] = {}
        for name, shape in spec:
            arr = np.asarray(tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise WeightsFormatError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise WeightsFormatError(f"{name}: non-finite values")
            if name.endswith(".running_var") and arr.min() <= 0:
                raise WeightsFormatError(f"{name}: running variance must be positive")
            self.tensors[name] = arr
        frozen = FULL_PARAM_COUNT if mode == "full" else STRIDED_PARAM_COUNT
        if self.param_count() != frozen:
            raise WeightsFormatError(
                f"parameter count {self.param_count()} != frozen {frozen} for {mode}"
            )

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self.tensors:
            raise KeyError(name)
        if value.shape != self.tensors[name].shape:
            raise ValueError(f"{name}: shape {value.shape} != {self.tensors[name].shape}")
        self.tensors[name] = np.asarray(value, dtype=np.float64)

    def learnable_names(self) -> list[str]:
        return [name for name in self.tensors if _is_learnable(name)]

    def param_count(self) -> int:
        return sum(self.tensors[name].size for name in self.learnable_names())

    def conv_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return [
            (name, arr.shape)
            for name, arr in self.tensors.items()
            if name.endswith(".kernel")
        ]

    def copy(self) -> "CnnWeights":
        return CnnWeights(self.mode, {k: v.copy() for k, v in self.tensors.items()})

    @classmethod
    def initialize(cls, mode: str = "full", seed: int = 0) -> "CnnWeights":
        """He-uniform kernels, zero biases, identity batch norms."""
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
        tensors: dict[str, np.ndarray] = {}
        for name, shape in tensor_spec(mode):
            if name.endswith(".kernel"):
                fan_in = int(np.prod(shape[1:]))
                bound = np.sqrt(6.0 / fan_in)
                tensors[name] = rng.uniform(-bound, bound, size=shape)
            elif name.endswith((".gamma", ".running_var")):
                tensors[name] = np.ones(shape)
            else:
                tensors[name] = np.zeros(shape)
        return cls(mode, tensors)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", _VERSION))
            fh.write(struct.pack("<B", _MODES.index(self.mode)))
            fh.write(struct.pack("<I", len(self.tensors)))
            for name, arr in self.tensors.items():
                encoded = name.encode("utf-8")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<B", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "CnnWeights":
        with open(path, "rb") as fh:
            data = fh.read()
        view = memoryview(data)
        if bytes(view[:4]) != _MAGIC:
            raise WeightsFormatError(f"{path}: bad magic, not a SIW1 file")
        (version,) = struct.unpack_from("<I", view, 4)
        if version != _VERSION:
            raise WeightsFormatError(f"{path}: unsupported version {version}")
        (mode_byte,) = struct.unpack_from("<B", view, 8)
        if mode_byte >= len(_MODES):
            raise WeightsFormatError(f"{path}: unknown mode byte {mode_byte}")
        mode = _MODES[mode_byte]
        (count,) = struct.unpack_from("<I", view, 9)
        spec = tensor_spec(mode)
        if count != len(spec):
            raise WeightsFormatError(
                f"{path}: tensor count {count} != expected {len(spec)}"
            )
        offset = 13
        tensors: dict[str, np.ndarray] = {}
        for expected_name, expected_shape in spec:
            (name_len,) = struct.unpack_from("<H", view, offset)
            offset += 2
            name = bytes(view[offset : offset + name_len]).decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", view, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", view, offset)
            offset += 4 * rank
            if name != expected_name or dims != expected_shape:
                raise WeightsFormatError(
                    f"{path}: got tensor {name}{list(dims)}, expected "
                    f"{expected_name}{list(expected_shape)}"
                )
            n_values = int(np.prod(dims)) if dims else 1
            arr = np.frombuffer(view, dtype="<f4", count=n_values, offset=offset)
            offset += 4 * n_values
            tensors[name] = arr.astype(np.float64).reshape(dims)
        if offset != len(data):
            raise WeightsFormatError(f"{path}: {len(data) - offset} trailing bytes")
        return cls(mode, tensors)
