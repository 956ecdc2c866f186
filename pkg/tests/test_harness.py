import numpy as np
import pytest

from kvmas.harness import (
    CompareConfig,
    InjectionExperimentConfig,
    NoiseExperimentConfig,
    compare_methods,
    run_injection_experiment,
    run_noise_experiment,
    run_two_stage,
    _build_noise_trial,
)
from kvmas.runtime import LocalEngine
from kvmas.tasks import SyntheticTaskSpec

from conftest import random_tokens


@pytest.fixture(scope="module")
def engine(tiny_weights):
    return LocalEngine(tiny_weights)


@pytest.fixture(scope="module")
def wide_engine():
    """Default-shape engine: window large enough for the shipped role prompts."""
    from kvmas.engine import default_config

    return LocalEngine.from_config(default_config(seed=8))


SMALL_TASK = SyntheticTaskSpec(kind="copy", min_payload=3, max_payload=6,
                               min_context=2, max_context=4)
NOISE_TASK = SyntheticTaskSpec(kind="copy", min_payload=6, max_payload=10,
                               min_context=0, max_context=0)


def inject_cfg(**kw):
    base = dict(base_task=SMALL_TASK, trials=3, generation_budget=12, seed=5)
    base.update(kw)
    return InjectionExperimentConfig(**base)


def noise_cfg(**kw):
    base = dict(base_task=NOISE_TASK, trials=3, generation_budget=12,
                context_truncation_tokens=64, noise_levels=(0, 1, 3), seed=5)
    base.update(kw)
    return NoiseExperimentConfig(**base)


# --- two-stage channel ---------------------------------------------------------------

def test_two_stage_accounting(engine, rng):
    ctx = random_tokens(rng, 20)
    _, prefilled_latent, relayed_latent, _ = run_two_stage(engine, ctx, "latent", 4)
    _, prefilled_text, relayed_text, _ = run_two_stage(engine, ctx, "text", 4)
    assert relayed_latent == 0
    assert prefilled_latent == 20
    assert relayed_text == 20
    assert prefilled_text == 40


def test_two_stage_same_output_both_channels(engine, rng):
    ctx = random_tokens(rng, 15)
    out_latent, _, _, _ = run_two_stage(engine, ctx, "latent", 6)
    out_text, _, _, _ = run_two_stage(engine, ctx, "text", 6)
    assert out_latent == out_text


def test_two_stage_rejects_unknown_channel(engine, rng):
    with pytest.raises(ValueError, match="channel"):
        run_two_stage(engine, random_tokens(rng, 5), "telepathy", 4)


# --- injection experiment ---------------------------------------------------------------

def test_injection_row_per_position(engine):
    report = run_injection_experiment(inject_cfg(), engine, "latent")
    assert [r.condition for r in report.rows] == [
        "position=none", "position=begin", "position=mid", "position=end",
    ]
    assert all(r.trials == 3 for r in report.rows)


def test_injection_compliance_defined_except_none(engine):
    report = run_injection_experiment(inject_cfg(), engine, "latent")
    by_condition = {r.condition: r for r in report.rows}
    assert by_condition["position=none"].injection_compliance is None
    for pos in ("begin", "mid", "end"):
        assert by_condition[f"position={pos}"].injection_compliance is not None


def test_injection_report_deterministic(engine):
    a = run_injection_experiment(inject_cfg(), engine, "latent")
    b = run_injection_experiment(inject_cfg(), engine, "latent")
    assert a.stripped().to_json() == b.stripped().to_json()


def test_injection_config_validation():
    with pytest.raises(ValueError, match="positions"):
        inject_cfg(positions=("start",))
    with pytest.raises(ValueError, match="markers"):
        inject_cfg(marker_open="")
    with pytest.raises(ValueError, match="trials"):
        inject_cfg(trials=0)


# --- noise experiment ---------------------------------------------------------------------

def test_noise_rows_for_every_level(engine):
    report = run_noise_experiment(noise_cfg(), engine, "latent")
    assert [r.condition for r in report.rows] == ["noise=0", "noise=1", "noise=3"]
    for row in report.rows:
        assert 0.0 <= row.accuracy <= 1.0


def test_noise_zero_level_equals_separate_baseline(engine):
    full = run_noise_experiment(noise_cfg(), engine, "latent")
    baseline = run_noise_experiment(noise_cfg(noise_levels=(0,)), engine, "latent")
    zero_row = full.rows[0]
    base_row = baseline.rows[0]
    assert zero_row.accuracy == base_row.accuracy
    assert zero_row.mean_decoded_tokens == base_row.mean_decoded_tokens
    assert zero_row.mean_prefill_tokens == base_row.mean_prefill_tokens


def test_noise_text_prefill_monotone_with_level(engine):
    report = run_noise_experiment(noise_cfg(), engine, "text")
    prefills = [r.mean_prefill_tokens for r in report.rows]
    assert prefills == sorted(prefills)
    assert prefills[0] < prefills[-1]


def test_noise_trial_construction_inserts_noise():
    cfg = noise_cfg()
    rng = np.random.default_rng(0)
    clean, expected_clean = _build_noise_trial(cfg, rng, 0)
    rng = np.random.default_rng(0)
    noisy, expected_noisy = _build_noise_trial(cfg, rng, 3)
    assert expected_clean == expected_noisy
    assert len(noisy) > len(clean)


def test_noise_config_validation():
    with pytest.raises(ValueError, match="noise_levels"):
        noise_cfg(noise_levels=(1, 3))
    with pytest.raises(ValueError, match="noise_levels"):
        noise_cfg(noise_levels=(0, 5, 3))


def test_noise_report_config_echo_and_fingerprint(engine):
    report = run_noise_experiment(noise_cfg(), engine, "latent")
    assert report.config["trials"] == 3
    assert report.config["channel"] == "latent"
    assert report.engine_fingerprint == engine.fingerprint()


# --- method comparison -----------------------------------------------------------------------

def test_compare_single_method_single_row(engine):
    cfg = CompareConfig(methods=("single",), num_tasks=2, task=SMALL_TASK,
                        agent_budget=8, seed=3)
    report = compare_methods(cfg, engine)
    assert len(report.rows) == 1
    assert report.rows[0].condition == "method=single"
    assert report.rows[0].trials == 2


def test_compare_latent_vs_text_relay_columns(wide_engine):
    cfg = CompareConfig(methods=("review", "text_relay"), num_tasks=2, task=SMALL_TASK,
                        agent_budget=6, seed=3)
    report = compare_methods(cfg, wide_engine)
    by_method = {r.condition: r for r in report.rows}
    assert by_method["method=review"].mean_relay_tokens == 0.0
    assert by_method["method=text_relay"].mean_relay_tokens > 0.0
    assert (by_method["method=text_relay"].mean_prefill_tokens
            > by_method["method=review"].mean_prefill_tokens)


def test_compare_reports_byte_identical(wide_engine):
    cfg = CompareConfig(methods=("single", "review"), num_tasks=2, task=SMALL_TASK,
                        agent_budget=6, seed=3)
    a = compare_methods(cfg, wide_engine)
    b = compare_methods(cfg, wide_engine)
    assert a.stripped().to_json() == b.stripped().to_json()


def test_compare_rejects_unknown_method():
    with pytest.raises(ValueError, match="unknown methods"):
        CompareConfig(methods=("single", "quantum"), num_tasks=1)
