"""Trajectory probe at the shipped default config and task."""

import sys
import time

sys.path.insert(0, "src")

import numpy as np

from kvmas.cli import evaluate_exact_match
from kvmas.engine import default_config, init_model
from kvmas.engine.train import AdamState, adam_step, forward_backward
from kvmas.tasks import SyntheticTaskSpec

lr = float(sys.argv[1]) if len(sys.argv) > 1 else 3e-3
batch = int(sys.argv[2]) if len(sys.argv) > 2 else 48
steps = int(sys.argv[3]) if len(sys.argv) > 3 else 700
beta2 = float(sys.argv[4]) if len(sys.argv) > 4 else 0.98
warmup = int(sys.argv[5]) if len(sys.argv) > 5 else 150

cfg = default_config(seed=0)
task = SyntheticTaskSpec(kind="copy", seed=1234)
w = init_model(cfg)
rng = np.random.default_rng(task.seed)
st = AdamState.for_weights(w)
t0 = time.perf_counter()
print(f"=== full config: lr={lr} B={batch} b2={beta2} warmup={warmup}", flush=True)
for step in range(1, steps + 1):
    tokens, mask = task.sample_batch(rng, batch)
    loss, grads = forward_backward(w, tokens, mask)
    adam_step(w, grads, st, lr=lr * min(1.0, step / warmup), beta2=beta2)
    if step % 100 == 0:
        acc = evaluate_exact_match(w, task, 60, seed=777)
        print(f"step {step:4d} loss {loss:.3f} acc {acc:.0%} [{time.perf_counter() - t0:.0f}s]",
              flush=True)
        if acc >= 0.99:
            break
