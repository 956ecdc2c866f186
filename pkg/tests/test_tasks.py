import numpy as np
import pytest

from kvmas.engine.tokenizer import BOS, EOS, MARKER
from kvmas.tasks import (
    JUNK_ALPHABET,
    PAYLOAD_ALPHABET,
    SyntheticTaskSpec,
    noise_sentence,
    trim_at_eos,
)


def test_alphabets_disjoint():
    assert not set(PAYLOAD_ALPHABET) & set(JUNK_ALPHABET)


def test_copy_instance_structure(rng):
    spec = SyntheticTaskSpec(kind="copy", min_payload=4, max_payload=8,
                             min_context=2, max_context=5)
    inst = spec.sample_instance(rng)
    assert inst.prompt[0] == BOS
    assert inst.prompt[-1] == MARKER
    lo, hi = inst.payload_span
    payload = inst.prompt[lo:hi]
    # the expected echo repeats the delimited span, braces included
    assert inst.answer == [ord("{")] + payload + [ord("}")]
    assert inst.prompt[lo - 1] == ord("{")
    assert inst.prompt[hi] == ord("}")
    assert 4 <= len(payload) <= 8
    assert len(set(payload)) == len(payload)
    assert all(t in PAYLOAD_ALPHABET for t in payload)


def test_copy_grading(rng):
    spec = SyntheticTaskSpec(kind="copy")
    inst = spec.sample_instance(rng)
    assert inst.grade(inst.answer + [EOS])
    assert inst.grade(inst.answer + [EOS] + [1, 2, 3])  # EOS ends grading
    assert inst.grade(inst.answer)  # budget exhaustion right at the boundary
    assert not inst.grade(inst.answer[:-1] + [EOS])
    assert not inst.grade(inst.answer + [99])  # trailing junk before any EOS


def test_copy_batch_shapes(rng):
    from kvmas.engine.tokenizer import PAD

    spec = SyntheticTaskSpec(kind="copy", min_payload=3, max_payload=6,
                             min_context=0, max_context=4)
    tokens, mask = spec.sample_batch(rng, 5)
    assert tokens.shape == mask.shape
    assert tokens.shape[0] == 5
    assert tokens.dtype == np.int64
    # every real token is supervised; pads are not
    for row, mrow in zip(tokens, mask):
        row = list(row)
        eos_idx = row.index(EOS)
        assert mrow[: eos_idx + 1].sum() == eos_idx + 1
        assert mrow[eos_idx + 1 :].sum() == 0
        assert all(t == PAD for t in row[eos_idx + 1 :])
        # echo region: "{payload}" appears twice, once in prompt, once after MARKER
        marker_idx = row.index(MARKER)
        assert row[marker_idx + 1] == ord("{")
        assert row[eos_idx - 1] == ord("}")


def test_keyed_lookup_instance(rng):
    spec = SyntheticTaskSpec(kind="keyed_lookup")
    inst = spec.sample_instance(rng)
    assert inst.prompt[0] == BOS
    assert inst.prompt[-1] == ord(":")
    assert len(inst.answer) == 2
    # queried key appears in the body with its value right after
    qkey = inst.prompt[-3:-1]
    body = inst.prompt[1 : inst.prompt.index(MARKER)]
    joined = list(body)
    idx = next(i for i in range(len(joined) - 1)
               if joined[i : i + 2] == qkey and joined[i + 2] == ord(":"))
    assert joined[idx + 3 : idx + 5] == inst.answer


def test_batches_deterministic():
    spec = SyntheticTaskSpec(kind="copy", seed=9)
    a_tokens, a_mask = spec.sample_batch(np.random.default_rng(1), 4)
    b_tokens, b_mask = spec.sample_batch(np.random.default_rng(1), 4)
    assert np.array_equal(a_tokens, b_tokens)
    assert np.array_equal(a_mask, b_mask)


def test_trim_at_eos():
    assert trim_at_eos([1, 2, EOS, 3]) == [1, 2]
    assert trim_at_eos([EOS]) == []
    assert trim_at_eos([5, 6]) == [5, 6]


def test_noise_sentences_use_payload_alphabet(rng):
    lookup = SyntheticTaskSpec(kind="keyed_lookup")
    sentence = noise_sentence(lookup, rng)
    assert 4 <= len(sentence) <= 12
    content = [t for t in sentence if t not in (ord(":"), ord(";"), ord("{"), ord("}"))]
    assert all(t in PAYLOAD_ALPHABET for t in content)


def test_task_spec_validation():
    with pytest.raises(ValueError, match="kind"):
        SyntheticTaskSpec(kind="riddle")
    with pytest.raises(ValueError, match="payload"):
        SyntheticTaskSpec(min_payload=5, max_payload=2)
