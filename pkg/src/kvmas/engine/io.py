"""Binary weights persistence.

Layout (little-endian):
  magic "LMW1"
  header: num_layers, model_dim, num_heads, head_dim, vocab_size,
          max_seq_len as int64; rope_base as float64; seed as int64
  tensors: float32 arrays, contiguous, in canonical order
           (embedding; per layer: ln1_g, ln1_b, wq, wk, wv, wo, ln2_g,
           ln2_b, w1, b1, w2, b2; ln_f_g, ln_f_b, unembed)
"""

from __future__ import annotations

import hashlib
import io
import struct

import numpy as np

from ..errors import WeightsFormatError
from .config import ModelConfig
from .model import LayerWeights, ModelWeights

MAGIC = b"LMW1"
_HEADER = struct.Struct("<6qdq")


def _tensor_shapes(cfg: ModelConfig) -> list[tuple[int, ...]]:
    d, v, hidden = cfg.model_dim, cfg.vocab_size, 4 * cfg.model_dim
    per_layer = [
        (d,), (d,), (d, d), (d, d), (d, d), (d, d),
        (d,), (d,), (d, hidden), (hidden,), (hidden, d), (d,),
    ]
    return [(v, d)] + per_layer * cfg.num_layers + [(d,), (d,), (d, v)]


def weights_to_bytes(weights: ModelWeights) -> bytes:
    cfg = weights.config
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(
        _HEADER.pack(
            cfg.num_layers, cfg.model_dim, cfg.num_heads, cfg.head_dim,
            cfg.vocab_size, cfg.max_seq_len, cfg.rope_base, cfg.seed,
        )
    )
    for arr in weights.param_arrays():
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def weights_from_bytes(data: bytes) -> ModelWeights:
    if data[:4] != MAGIC:
        raise WeightsFormatError(f"bad magic {data[:4]!r}; expected {MAGIC!r}")
    try:
        nl, d, nh, hd, v, msl, base, seed = _HEADER.unpack_from(data, 4)
    except struct.error as exc:
        raise WeightsFormatError(f"truncated header: {exc}") from exc
    cfg = ModelConfig(
        num_layers=nl, model_dim=d, num_heads=nh, head_dim=hd,
        vocab_size=v, max_seq_len=msl, rope_base=base, seed=seed,
    )
    shapes = _tensor_shapes(cfg)
    expected = 4 + _HEADER.size + sum(int(np.prod(s)) * 4 for s in shapes)
    if len(data) != expected:
        raise WeightsFormatError(
            f"payload size mismatch: file has {len(data)} bytes, config implies {expected}"
        )

    offset = 4 + _HEADER.size
    arrays = []
    for shape in shapes:
        n = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(shape).copy()
        arrays.append(arr)
        offset += n * 4

    embedding = arrays[0]
    per = 12
    layers = []
    for i in range(cfg.num_layers):
        chunk = arrays[1 + i * per : 1 + (i + 1) * per]
        layers.append(LayerWeights(*chunk))
    ln_f_g, ln_f_b, unembed = arrays[-3:]
    weights = ModelWeights(
        config=cfg, embedding=embedding, layers=layers,
        ln_f_g=ln_f_g, ln_f_b=ln_f_b, unembed=unembed,
    )
    weights.check_finite()
    return weights


def save_weights(weights: ModelWeights, path) -> None:
    with open(path, "wb") as fh:
        fh.write(weights_to_bytes(weights))


def load_weights(path) -> ModelWeights:
    with open(path, "rb") as fh:
        return weights_from_bytes(fh.read())


def weights_fingerprint(weights: ModelWeights) -> str:
    return hashlib.sha256(weights_to_bytes(weights)).hexdigest()
