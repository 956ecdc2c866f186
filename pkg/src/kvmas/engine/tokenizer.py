"""Byte-level tokenizer: ids 0-255 are raw bytes, plus reserved control ids.

Round-trip identity holds for every byte string: detokenize(tokenize(s)) == s.
"""

from __future__ import annotations

BOS = 256
EOS = 257
MARKER = 258
PAD = 259  # training-batch filler only; never generated or graded

NUM_RESERVED = 3
MIN_VOCAB = 256 + NUM_RESERVED

_SPECIAL_BYTES = {BOS: b"<bos>", EOS: b"<eos>", MARKER: b"<mark>", PAD: b"<pad>"}


def tokenize(data) -> list[int]:
    """Map a str (utf-8) or bytes to byte-value token ids."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    return list(data)


def detokenize(tokens, vocab_size: int = MIN_VOCAB) -> bytes:
    """Map token ids back to bytes; reserved ids render as readable escapes."""
    out = bytearray()
    for t in tokens:
        t = int(t)
        if t < 0 or t >= vocab_size:
            raise ValueError(f"token id {t} outside vocabulary of size {vocab_size}")
        if t < 256:
            out.append(t)
        else:
            out.extend(_SPECIAL_BYTES.get(t, b"<tok%d>" % t))
    return bytes(out)


def decode_text(tokens, vocab_size: int = MIN_VOCAB) -> str:
    """Lossy convenience decoding for display."""
    return detokenize(tokens, vocab_size).decode("utf-8", errors="replace")
