"""Deterministic synthetic tasks with programmatic exact-match grading.

Two kinds:
  copy         echo a brace-delimited payload that may be surrounded by
               distractor bytes: [BOS] junk '{' payload '}' junk [MARKER]
               -> payload [EOS]
  keyed_lookup given key:value pairs and a query key, emit the value:
               [BOS] k1:v1;k2:v2;... [MARKER] kq: -> vq [EOS]

Payload bytes come from lowercase letters and digits; distractor bytes from
a disjoint alphabet (uppercase plus light punctuation), so a trained model
has an unambiguous copying signal and inserted noise that shares the
payload alphabet produces genuine interference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine.tokenizer import BOS, EOS, MARKER, PAD

PAYLOAD_ALPHABET = [ord(c) for c in "abcdefghijklmnopqrstuvwxyz0123456789"]
JUNK_ALPHABET = [ord(c) for c in "ABCDEFGHIJKLMNOPQRSTUVWXYZ .,-!?"]
OPEN, CLOSE = ord("{"), ord("}")
COLON, SEMI = ord(":"), ord(";")


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Declarative spec for a task family; all sampling is seeded."""

    kind: str = "copy"
    min_payload: int = 1
    max_payload: int = 32
    min_context: int = 0
    max_context: int = 12
    min_pairs: int = 3
    max_pairs: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("copy", "keyed_lookup"):
            raise ValueError(f"unknown task kind: {self.kind!r}")
        if not (1 <= self.min_payload <= self.max_payload):
            raise ValueError("payload length bounds must satisfy 1 <= min <= max")
        if self.max_payload > len(PAYLOAD_ALPHABET):
            raise ValueError(f"payload length bounds exceed alphabet size {len(PAYLOAD_ALPHABET)}")
        if not (0 <= self.min_context <= self.max_context):
            raise ValueError("context length bounds must satisfy 0 <= min <= max")

    def sample_batch(self, rng, batch_size: int):
        """Training batch: (tokens (B, T) int64, target_mask (B, T) float32).

        Rows sample their lengths independently and are right-padded to the
        batch maximum; pads sit after EOS, are never supervised, and (being
        last under causal masking) never influence supervised positions.
        Every real position is supervised: the unpredictable context regions
        contribute a constant entropy floor, while training on them is what
        builds the token-matching circuits the echo depends on.
        """
        if self.kind == "copy":
            rows = [_copy_row(self, rng) for _ in range(batch_size)]
        else:
            rows = [_lookup_row(self, rng) for _ in range(batch_size)]
        return _pad_rows(rows)

    def sample_instance(self, rng) -> "TaskInstance":
        if self.kind == "copy":
            return _copy_instance(self, rng)
        return _lookup_instance(self, rng)


@dataclass
class TaskInstance:
    """One graded problem: prompt tokens (BOS..MARKER inclusive), the exact
    expected answer tokens, and a short text form for retrieval queries."""

    prompt: list[int]
    answer: list[int]
    query_text: str
    payload_span: tuple[int, int] = (0, 0)  # prompt indices holding the payload

    def grade(self, output_tokens) -> bool:
        """Exact match of the answer, reading output up to the first EOS."""
        return trim_at_eos(output_tokens) == self.answer


def trim_at_eos(tokens) -> list[int]:
    out = []
    for t in tokens:
        if int(t) == EOS:
            break
        out.append(int(t))
    return out


def _payload(rng, n):
    """Payload symbols are sampled without replacement: each token appears
    once, so the copy mechanism is learnable from single-token matches
    (payload length is capped by the alphabet size)."""
    if n > len(PAYLOAD_ALPHABET):
        raise ValueError(f"payload length {n} exceeds alphabet size {len(PAYLOAD_ALPHABET)}")
    idx = rng.permutation(len(PAYLOAD_ALPHABET))[:n]
    return [PAYLOAD_ALPHABET[i] for i in idx]


def _junk(rng, n):
    return [JUNK_ALPHABET[i] for i in rng.integers(0, len(JUNK_ALPHABET), n)]


def _copy_prompt(pre, payload, post):
    return [BOS] + pre + [OPEN] + payload + [CLOSE] + post + [MARKER]


def _copy_instance(spec, rng) -> TaskInstance:
    pre = _junk(rng, int(rng.integers(spec.min_context, spec.max_context + 1)))
    post = _junk(rng, int(rng.integers(spec.min_context, spec.max_context + 1)))
    payload = _payload(rng, int(rng.integers(spec.min_payload, spec.max_payload + 1)))
    prompt = _copy_prompt(pre, payload, post)
    start = 1 + len(pre) + 1
    # the echo repeats the delimiters: the opening brace gives decoding a
    # constant first step and anchors token-match copying for the rest
    return TaskInstance(
        prompt=prompt,
        answer=[OPEN] + list(payload) + [CLOSE],
        query_text="echo the marked payload exactly as it appears",
        payload_span=(start, start + len(payload)),
    )


def _copy_row(spec, rng):
    n_pre = int(rng.integers(spec.min_context, spec.max_context + 1))
    n_post = int(rng.integers(spec.min_context, spec.max_context + 1))
    n_pay = int(rng.integers(spec.min_payload, spec.max_payload + 1))
    payload = _payload(rng, n_pay)
    prompt = _copy_prompt(_junk(rng, n_pre), payload, _junk(rng, n_post))
    answer = [OPEN] + payload + [CLOSE]
    row = prompt + answer + [EOS]
    mask = [1] * len(row)
    return row, mask


def _pad_rows(rows):
    width = max(len(r) for r, _ in rows)
    tokens = np.full((len(rows), width), PAD, dtype=np.int64)
    masks = np.zeros((len(rows), width), dtype=np.float32)
    for i, (row, mask) in enumerate(rows):
        tokens[i, : len(row)] = row
        masks[i, : len(mask)] = mask
    return tokens, masks


def _lookup_pairs(spec, rng, n_pairs):
    keys = []
    while len(keys) < n_pairs:  # distinct keys
        k = tuple(_payload(rng, 2))
        if k not in keys:
            keys.append(k)
    values = [_payload(rng, 2) for _ in range(n_pairs)]
    return keys, values


def _lookup_prompt(keys, values, query_idx):
    body = []
    for k, v in zip(keys, values):
        body.extend(list(k) + [COLON] + v + [SEMI])
    return [BOS] + body + [MARKER] + list(keys[query_idx]) + [COLON]


def _lookup_instance(spec, rng) -> TaskInstance:
    n_pairs = int(rng.integers(spec.min_pairs, spec.max_pairs + 1))
    keys, values = _lookup_pairs(spec, rng, n_pairs)
    qi = int(rng.integers(0, n_pairs))
    return TaskInstance(
        prompt=_lookup_prompt(keys, values, qi),
        answer=list(values[qi]),
        query_text="look up the value stored under the queried key",
    )


def _lookup_row(spec, rng):
    n_pairs = int(rng.integers(spec.min_pairs, spec.max_pairs + 1))
    keys, values = _lookup_pairs(spec, rng, n_pairs)
    qi = int(rng.integers(0, n_pairs))
    prompt = _lookup_prompt(keys, values, qi)
    row = prompt + values[qi] + [EOS]
    mask = [1] * len(row)
    return row, mask


def noise_sentence(spec: SyntheticTaskSpec, rng) -> list[int]:
    """A short fragment of unrelated task content, used as channel noise."""
    if spec.kind == "keyed_lookup":
        k = _payload(rng, 2)
        v = _payload(rng, 2)
        return k + [COLON] + v + [SEMI]
    payload = _payload(rng, int(rng.integers(3, 9)))
    return [OPEN] + payload + [CLOSE]


DEFAULT_COPY_TASK = SyntheticTaskSpec(kind="copy", seed=1234)
DEFAULT_LOOKUP_TASK = SyntheticTaskSpec(kind="keyed_lookup", seed=1234)
