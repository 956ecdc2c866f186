"""Isolate which factor blocks the copy transition: depth, payload length,
or distractor context."""

import sys
import time

sys.path.insert(0, "src")

import numpy as np

from kvmas.cli import evaluate_exact_match
from kvmas.engine import ModelConfig, init_model
from kvmas.engine.train import AdamState, adam_step, forward_backward
from kvmas.tasks import SyntheticTaskSpec


def probe(tag, layers, max_payload, max_context, batch=64, lr=3e-3, steps=300):
    cfg = ModelConfig(num_layers=layers, model_dim=128, num_heads=4, head_dim=32,
                      vocab_size=260, max_seq_len=512, seed=0)
    task = SyntheticTaskSpec(kind="copy", max_payload=max_payload,
                             max_context=max_context, seed=1234)
    w = init_model(cfg)
    rng = np.random.default_rng(task.seed)
    st = AdamState.for_weights(w)
    t0 = time.perf_counter()
    for step in range(1, steps + 1):
        tokens, mask = task.sample_batch(rng, batch)
        loss, grads = forward_backward(w, tokens, mask)
        adam_step(w, grads, st, lr=lr * min(1.0, step / 150), beta2=0.98)
        if step % 100 == 0:
            acc = evaluate_exact_match(w, task, 40, seed=777)
            print(f"{tag}: step {step} loss {loss:.3f} acc {acc:.0%} "
                  f"[{time.perf_counter() - t0:.0f}s]", flush=True)


probe("base    L2 p8  j0 ", 2, 8, 0)
probe("depth   L4 p8  j0 ", 4, 8, 0)
probe("payload L2 p32 j0 ", 2, 32, 0)
probe("junk    L2 p8  j12", 2, 8, 12)
