"""Fast hyperparameter probe on a reduced config (2 layers, short payloads)."""

import sys
import time

sys.path.insert(0, "src")

import numpy as np

from kvmas.cli import evaluate_exact_match
from kvmas.engine import ModelConfig, init_model
from kvmas.engine.train import AdamState, adam_step, forward_backward
from kvmas.tasks import SyntheticTaskSpec


def probe(lr, beta2, warmup, steps=400, layers=2, batch=64, max_payload=8):
    cfg = ModelConfig(num_layers=layers, model_dim=128, num_heads=4, head_dim=32,
                      vocab_size=260, max_seq_len=512, seed=0)
    task = SyntheticTaskSpec(kind="copy", max_payload=max_payload, max_context=0, seed=1234)
    w = init_model(cfg)
    rng = np.random.default_rng(task.seed)
    st = AdamState.for_weights(w)
    t0 = time.perf_counter()
    for step in range(1, steps + 1):
        tokens, mask = task.sample_batch(rng, batch)
        loss, grads = forward_backward(w, tokens, mask)
        step_lr = lr * min(1.0, step / warmup) if warmup else lr
        adam_step(w, grads, st, lr=step_lr, beta2=beta2)
        if step % 100 == 0:
            acc = evaluate_exact_match(w, task, 40, seed=777)
            print(f"  lr={lr} b2={beta2} warm={warmup}: step {step} "
                  f"loss {loss:.3f} acc {acc:.0%} [{time.perf_counter() - t0:.0f}s]",
                  flush=True)


if __name__ == "__main__":
    for lr_, b2_, warm_ in [(1e-3, 0.999, 0), (3e-3, 0.98, 150), (1e-2, 0.98, 150)]:
        probe(lr_, b2_, warm_)
