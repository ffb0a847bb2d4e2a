"""Amortized inference: one forward pass per dataset, a thousand joint
posterior draws in well under a second, no per-dataset fitting.

Reuses the checkpoint from demo 03 (run that first, or this script trains
it). Posterior means are compared against the generating truth across a
held-out batch of toy datasets.
"""

import pathlib
import time

import numpy as np

from mixedflow.metrics import aggregate, evaluate_dataset
from mixedflow.model import load_model
from mixedflow.seeding import substream
from mixedflow.train import TrainConfig, make_training_dataset, train

OUT = pathlib.Path(__file__).parent / "_artifacts" / "toy-demo-48"

cfg = TrainConfig(
    d=2, q=1, budget=4800, batch_size=16, seed=1, toy=True,
    width=48, summary_blocks=2, heads=4, flow_blocks=4, flow_hidden=48,
    eval_every=50, val_sets=128, warmup_steps=50,
)
if not (OUT / "best.ckpt").exists():
    print("training the demo checkpoint first (~5 min) ...")
    train(cfg, OUT)

model, manifest, _ = load_model(OUT / "best.ckpt")
print(f"loaded checkpoint {manifest['checkpoint_id'][:12]} "
      f"(d={model.cfg.d}, q={model.cfg.q}, width={model.cfg.width})")

ds = make_training_dataset(cfg, 0, "demo-test")
t0 = time.time()
draws = model.posterior(ds, k=1000, rng=substream(11, "demo"))
dt = time.time() - t0
print(f"\n1000 joint draws for m={ds.m} groups in {dt * 1000:.0f} ms")

truth = ds.truth.global_params
mean = draws.global_mean()
for name, t, m in zip(draws.param_names(),
                      np.concatenate([truth.beta, truth.sigma_alpha, [truth.sigma_eps]]),
                      mean):
    print(f"  {name:>10}: truth {t:+.3f}  posterior mean {m:+.3f}")

print("\nrecovery over 50 held-out datasets:")
evals = []
for i in range(50):
    ds_i = make_training_dataset(cfg, i, "demo-test")
    draws_i = model.posterior(ds_i, k=300, rng=substream(11, "demo", i))
    evals.append(evaluate_dataset(ds_i, draws_i))
rep = aggregate(evals)
for role, s in rep.per_role.items():
    print(f"  {role:>8}: r={s['r']:.3f}  rmse={s['rmse']:.3f}  bias={s['bias']:+.3f}")
print("(variance parameters converge slowest; the desk-scale acceptance "
      "run -- budget 20000, width 64 -- reaches fixed r >= 0.95 and "
      "variance r >= 0.90)")
