import numpy as np, time, json, sys
from rdecomp.trainer import TrainConfig, train

def run(env, env_params, mode, seed, iterations=60):
    kw = dict(env=env, env_params=env_params, iterations=iterations,
              ppo_batch=512, minibatch=64, buffer_capacity=50,
              regression_minibatch=16, policy_lr=3e-4, entropy_coef=0.01)
    if mode == "baseline":
        kw["use_decomposer"] = False
    t0 = time.time()
    result = train(TrainConfig(**kw), seed=seed)
    curve = [r["return_mean"] for r in result.metrics]
    print(f"{env} {mode} seed {seed}: {time.time()-t0:.0f}s  "
          f"first5 {np.mean(curve[:5]):.3f}  last6 {np.mean(curve[-6:]):.3f}", flush=True)
    return curve

out = {}
for env, params in [("chain", {"n_states": 8, "horizon": 12}), ("grid", {"size": 4, "horizon": 16})]:
    for mode in ("full", "baseline"):
        for seed in (1, 2):
            out[f"{env}-{mode}-{seed}"] = run(env, params, mode, seed)
json.dump(out, open(".pilot/pilot1.json", "w"))
