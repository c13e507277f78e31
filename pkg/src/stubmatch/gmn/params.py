"""Weight set of the matching network, plus its versioned binary blob form.

Blob layout (little endian)::

    magic b"SMW1"
    u32 header length
    header JSON: {"format_version": 1, "config": {...},
                  "arrays": [{"name": ..., "shape": [...]}, ...]}
    float64 array payload, arrays concatenated in header order
    sha256 digest of everything above (32 raw bytes)

The digest makes truncation and bit rot detectable on load.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..callgraph import N_FEATURES
from ..errors import RegistryCorruptionError, RegistryError
from .config import GmnConfig

_MAGIC = b"SMW1"
_FORMAT_VERSION = 1


def _layer_shapes(cfg: GmnConfig) -> list[tuple[str, tuple[int, ...]]]:
    h, m, e = cfg.node_hidden_dim, cfg.message_dim, cfg.embedding_dim
    return [
        ("enc_w1", (N_FEATURES, h)),
        ("enc_b1", (h,)),
        ("enc_w2", (h, h)),
        ("enc_b2", (h,)),
        ("msg_w1", (2 * h, m)),
        ("msg_b1", (m,)),
        ("msg_w2", (m, m)),
        ("msg_b2", (m,)),
        ("upd_w1", (2 * h + m, h)),
        ("upd_b1", (h,)),
        ("upd_w2", (h, h)),
        ("upd_b2", (h,)),
        ("gate_w", (h, e)),
        ("gate_b", (e,)),
        ("trans_w", (h, e)),
        ("trans_b", (e,)),
        ("out_w", (e, e)),
        ("out_b", (e,)),
    ]


class GmnParams:
    """Named float64 arrays in a fixed order, tied to the config that
    defines their shapes."""

    __slots__ = ("config", "arrays")

    def __init__(self, config: GmnConfig, arrays: dict[str, np.ndarray]) -> None:
        expected = _layer_shapes(config)
        if [(k, a.shape) for k, a in arrays.items()] != expected:
            raise RegistryError("parameter arrays do not match the config's shapes")
        for name, arr in arrays.items():
            if not np.all(np.isfinite(arr)):
                raise RegistryError(f"non-finite values in parameter array {name}")
        self.config = config
        self.arrays = arrays

    @classmethod
    def initialize(cls, config: GmnConfig, seed: int | None = None) -> "GmnParams":
        """Seeded uniform init in [-r, r] with r = sqrt(6 / (fan_in + fan_out)).

        Biases share their weight matrix's bound; nonzero biases keep
        degenerate inputs (all-zero normalized features) from collapsing to
        a zero embedding.
        """
        rng = np.random.default_rng(config.seed if seed is None else seed)
        shapes = _layer_shapes(config)
        arrays: dict[str, np.ndarray] = {}
        for (w_name, w_shape), (b_name, b_shape) in zip(shapes[0::2], shapes[1::2]):
            r = np.sqrt(6.0 / (w_shape[0] + w_shape[1]))
            arrays[w_name] = rng.uniform(-r, r, size=w_shape)
            arrays[b_name] = rng.uniform(-r, r, size=b_shape)
        return cls(config, arrays)

    def copy(self) -> "GmnParams":
        return GmnParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    # -- flat-vector view (optimizer and gradient checks) -----------------

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays.values()])

    def with_flat(self, flat: np.ndarray) -> "GmnParams":
        arrays: dict[str, np.ndarray] = {}
        offset = 0
        for name, arr in self.arrays.items():
            size = arr.size
            arrays[name] = flat[offset : offset + size].reshape(arr.shape).copy()
            offset += size
        if offset != flat.size:
            raise RegistryError("flat vector size mismatch")
        return GmnParams(self.config, arrays)

    @property
    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays.values())

    # -- blob form ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        header = {
            "format_version": _FORMAT_VERSION,
            "config": self.config.to_dict(),
            "arrays": [{"name": k, "shape": list(v.shape)} for k, v in self.arrays.items()],
        }
        header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
        payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in self.arrays.values())
        body = _MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + payload
        return body + hashlib.sha256(body).digest()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "GmnParams":
        if len(blob) < 40 or blob[:4] != _MAGIC:
            raise RegistryError("not a model blob (bad magic)")
        body, digest = blob[:-32], blob[-32:]
        if hashlib.sha256(body).digest() != digest:
            raise RegistryCorruptionError("model blob content hash mismatch")
        (header_len,) = struct.unpack("<I", body[4:8])
        header = json.loads(body[8 : 8 + header_len].decode("utf-8"))
        if header["format_version"] != _FORMAT_VERSION:
            raise RegistryError(
                f"model format version {header['format_version']} needs migration"
            )
        config = GmnConfig.from_dict(header["config"])
        arrays: dict[str, np.ndarray] = {}
        offset = 8 + header_len
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            size = int(np.prod(shape)) * 8
            raw = body[offset : offset + size]
            if len(raw) != size:
                raise RegistryCorruptionError("model blob truncated")
            arrays[spec["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            offset += size
        return cls(config, arrays)

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def zero_like(params: GmnParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.arrays.items()}
