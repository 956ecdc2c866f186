"""Calibration sweep for the shipped training defaults: find (lr, batch,
steps) reaching >=97% held-out exact match on the default copy task with
comfortable margin, and record the trajectory."""

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from kvmas.cli import evaluate_exact_match
from kvmas.engine import default_config, init_model
from kvmas.engine.train import AdamState, adam_step, forward_backward
from kvmas.tasks import SyntheticTaskSpec


def run(lr, batch, max_steps, beta2=0.999, max_context=12, eval_every=100, eval_n=50):
    cfg = default_config(seed=0)
    task = SyntheticTaskSpec(kind="copy", max_context=max_context, seed=1234)
    weights = init_model(cfg)
    rng = np.random.default_rng(task.seed)
    state = AdamState.for_weights(weights)
    t0 = time.perf_counter()
    print(f"=== lr={lr} batch={batch} beta2={beta2} junk<= {max_context} max_steps={max_steps}",
          flush=True)
    warmup = 150
    for step in range(1, max_steps + 1):
        tokens, mask = task.sample_batch(rng, batch)
        loss, grads = forward_backward(weights, tokens, mask)
        step_lr = lr * min(1.0, step / warmup)
        adam_step(weights, grads, state, lr=step_lr, beta2=beta2)
        if step % eval_every == 0:
            acc = evaluate_exact_match(weights, task, eval_n, seed=777)
            dt = time.perf_counter() - t0
            print(f"step {step:5d}  loss {loss:.4f}  heldout {acc:.1%}  [{dt:.0f}s]", flush=True)
            if acc >= 0.99:
                print(f"reached 99% at step {step} in {dt:.0f}s", flush=True)
                return


if __name__ == "__main__":
    lr = float(sys.argv[1]) if len(sys.argv) > 1 else 1e-3
    batch = int(sys.argv[2]) if len(sys.argv) > 2 else 16
    steps = int(sys.argv[3]) if len(sys.argv) > 3 else 2000
    beta2 = float(sys.argv[4]) if len(sys.argv) > 4 else 0.999
    max_context = int(sys.argv[5]) if len(sys.argv) > 5 else 12
    run(lr, batch, steps, beta2=beta2, max_context=max_context)
