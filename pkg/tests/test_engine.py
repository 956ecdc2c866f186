import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvmas.engine import (
    BOS,
    EOS,
    GREEDY,
    ModelConfig,
    SamplingParams,
    decode_step,
    detokenize,
    forward_tokens,
    generate,
    init_model,
    load_weights,
    prefill,
    save_weights,
    tokenize,
    weights_fingerprint,
    weights_to_bytes,
)
from kvmas.errors import CapacityError, ConfigError, WeightsFormatError

from conftest import random_tokens


# --- config ------------------------------------------------------------------

def test_config_rejects_indivisible_heads():
    with pytest.raises(ConfigError, match="model_dim not divisible by num_heads"):
        ModelConfig(num_layers=1, model_dim=6, num_heads=4, head_dim=0,
                    vocab_size=260, max_seq_len=16)


def test_config_rejects_odd_head_dim():
    with pytest.raises(ConfigError, match="head_dim must be even"):
        ModelConfig(num_layers=1, model_dim=6, num_heads=2, head_dim=0,
                    vocab_size=260, max_seq_len=16)


def test_config_derives_head_dim():
    cfg = ModelConfig(num_layers=1, model_dim=64, num_heads=4, head_dim=0,
                      vocab_size=260, max_seq_len=16)
    assert cfg.head_dim == 16


# --- init determinism ---------------------------------------------------------

def test_init_deterministic(tiny_config):
    a = init_model(tiny_config)
    b = init_model(tiny_config)
    for x, y in zip(a.param_arrays(), b.param_arrays()):
        assert np.array_equal(x, y)


def test_init_seed_changes_weights(tiny_config):
    a = init_model(tiny_config)
    b = init_model(tiny_config.with_seed(tiny_config.seed + 1))
    assert any(not np.array_equal(x, y) for x, y in zip(a.param_arrays(), b.param_arrays()))


# --- tokenizer -----------------------------------------------------------------

def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_bytes_identity():
    assert tokenize("ab") == [97, 98]


def test_round_trip_random_byte_strings():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(0, 64))
        s = bytes(rng.integers(0, 256, size=n).tolist())
        assert detokenize(tokenize(s)) == s


@given(st.binary(max_size=256))
@settings(max_examples=200)
def test_round_trip_property(s):
    assert detokenize(tokenize(s)) == s


def test_detokenize_rejects_out_of_vocab():
    with pytest.raises(ValueError, match="outside vocabulary"):
        detokenize([300], vocab_size=260)


# --- prefill / decode ----------------------------------------------------------

def test_prefill_single_token(tiny_weights):
    logits, cache = prefill(tiny_weights, [5], 0)
    assert cache.current_len == 1
    assert cache.position_base == 0
    assert logits.shape == (tiny_weights.config.vocab_size,)


def test_prefill_rejects_empty(tiny_weights):
    with pytest.raises(ValueError, match="non-empty"):
        prefill(tiny_weights, [], 0)


def test_prefill_rejects_overflow(tiny_weights):
    cfg = tiny_weights.config
    with pytest.raises(CapacityError):
        prefill(tiny_weights, [1] * (cfg.max_seq_len + 1), 0)
    with pytest.raises(CapacityError):
        prefill(tiny_weights, [1, 2], cfg.max_seq_len - 1)


def test_decode_step_increments_all_layers(tiny_weights, rng):
    _, cache = prefill(tiny_weights, random_tokens(rng, 7), 0)
    _, cache2 = decode_step(tiny_weights, cache, 3)
    assert cache2.current_len == 8
    for k, v in zip(cache2.keys, cache2.values):
        assert k.shape[0] == 8 and v.shape[0] == 8
    # original cache untouched
    assert cache.current_len == 7


def test_decode_steps_accumulate(tiny_weights, rng):
    _, cache = prefill(tiny_weights, random_tokens(rng, 5), 0)
    for i in range(6):
        _, cache = decode_step(tiny_weights, cache, i)
    assert cache.current_len == 11


def test_incremental_matches_one_shot(tiny_weights, rng):
    """Oracle: the one-shot full forward pass."""
    for _ in range(20):
        n1 = int(rng.integers(1, 24))
        n2 = int(rng.integers(1, 24))
        t1 = random_tokens(rng, n1)
        t2 = random_tokens(rng, n2)
        one_shot, _ = prefill(tiny_weights, t1 + t2, 0)
        logits, cache = prefill(tiny_weights, t1, 0)
        for tok in t2:
            logits, cache = decode_step(tiny_weights, cache, tok)
        assert np.abs(one_shot - logits).max() <= 1e-5


def test_causality_exact(tiny_weights, rng):
    """Changing token j leaves every cached row and prefix logit before j
    untouched, exactly."""
    seq = random_tokens(rng, 16)
    j = 9
    other = list(seq)
    other[j] = (other[j] + 1) % 260
    _, c1 = prefill(tiny_weights, seq, 0)
    _, c2 = prefill(tiny_weights, other, 0)
    for k1, k2, v1, v2 in zip(c1.keys, c2.keys, c1.values, c2.values):
        assert np.array_equal(k1[:j], k2[:j])
        assert np.array_equal(v1[:j], v2[:j])
    l1, _ = prefill(tiny_weights, seq[:j], 0)
    l2, _ = prefill(tiny_weights, other[:j], 0)
    assert np.array_equal(l1, l2)


def test_prefill_respects_position_base(tiny_weights, rng):
    toks = random_tokens(rng, 6)
    _, c0 = prefill(tiny_weights, toks, 0)
    _, c9 = prefill(tiny_weights, toks, 9)
    assert c9.position_base == 9
    # values are position-independent; keys are rotated differently
    for v0, v9 in zip(c0.values, c9.values):
        assert np.allclose(v0, v9, atol=1e-6)
    assert any(not np.allclose(k0, k9, atol=1e-4) for k0, k9 in zip(c0.keys, c9.keys))


# --- generate -------------------------------------------------------------------

def test_generate_rejects_zero_budget(tiny_weights, rng):
    _, cache = prefill(tiny_weights, random_tokens(rng, 4), 0)
    with pytest.raises(ValueError, match="max_new_tokens"):
        generate(tiny_weights, cache, GREEDY, 0)


def test_generate_greedy_deterministic(tiny_weights, rng):
    toks = random_tokens(rng, 10)
    _, cache = prefill(tiny_weights, toks, 0)
    out1, _, _ = generate(tiny_weights, cache, GREEDY, 12)
    _, cache2 = prefill(tiny_weights, toks, 0)
    out2, _, _ = generate(tiny_weights, cache2, GREEDY, 12)
    assert out1 == out2


def test_generate_counts_and_cache(tiny_weights, rng):
    _, cache = prefill(tiny_weights, random_tokens(rng, 8), 0)
    out, final, usage = generate(tiny_weights, cache, GREEDY, 15)
    assert usage.decoded_tokens == len(out)
    assert final.current_len == 8 + len(out)
    assert usage.wall_seconds >= 0
    assert usage.generations == 1


def test_generate_stops_at_stop_token(tiny_weights, rng):
    _, cache = prefill(tiny_weights, random_tokens(rng, 8), 0)
    probe, _, _ = generate(tiny_weights, cache, GREEDY, 6)
    stop = probe[2]
    _, cache2 = prefill(tiny_weights, random_tokens(np.random.default_rng(20240817), 8), 0)
    out, _, usage = generate(tiny_weights, cache2, GREEDY, 6, stop_tokens={stop})
    assert out[-1] == stop
    assert len(out) == 3
    assert not usage.truncated


def test_generate_truncates_at_capacity(tiny_weights, rng):
    cfg = tiny_weights.config
    _, cache = prefill(tiny_weights, random_tokens(rng, cfg.max_seq_len - 3), 0)
    out, final, usage = generate(tiny_weights, cache, GREEDY, 10)
    assert usage.truncated
    assert len(out) == 3
    assert final.current_len == cfg.max_seq_len


def test_generate_temperature_deterministic_given_seed(tiny_weights, rng):
    toks = random_tokens(rng, 6)
    params = SamplingParams(mode="temperature", temperature=1.3, rng_seed=99)
    _, c1 = prefill(tiny_weights, toks, 0)
    _, c2 = prefill(tiny_weights, toks, 0)
    out1, _, _ = generate(tiny_weights, c1, params, 10)
    out2, _, _ = generate(tiny_weights, c2, params, 10)
    assert out1 == out2


# --- weights persistence ---------------------------------------------------------

def test_weights_round_trip(tiny_weights, tmp_path):
    path = tmp_path / "w.bin"
    save_weights(tiny_weights, path)
    loaded = load_weights(path)
    assert loaded.config == tiny_weights.config
    for a, b in zip(tiny_weights.param_arrays(), loaded.param_arrays()):
        assert np.array_equal(a, b)
    assert weights_fingerprint(loaded) == weights_fingerprint(tiny_weights)


def test_weights_loader_rejects_bad_magic(tiny_weights, tmp_path):
    path = tmp_path / "w.bin"
    data = bytearray(weights_to_bytes(tiny_weights))
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(WeightsFormatError, match="bad magic"):
        load_weights(path)


def test_weights_loader_rejects_size_mismatch(tiny_weights, tmp_path):
    path = tmp_path / "w.bin"
    path.write_bytes(weights_to_bytes(tiny_weights)[:-8])
    with pytest.raises(WeightsFormatError, match="size mismatch"):
        load_weights(path)
