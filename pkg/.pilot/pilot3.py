import numpy as np, time, json
from rdecomp.trainer import TrainConfig, train

def run(env, env_params, mode, seed, iterations, **kw0):
    kw = dict(env=env, env_params=env_params, iterations=iterations,
              ppo_batch=128, minibatch=64, buffer_capacity=50,
              regression_minibatch=16, regression_epochs=20,
              policy_lr=3e-4, entropy_coef=0.01, gamma=0.7)
    kw.update(kw0)
    if mode == "baseline":
        kw["use_decomposer"] = False
    t0 = time.time()
    result = train(TrainConfig(**kw), seed=seed)
    curve = [r["return_mean"] for r in result.metrics]
    c = np.array(curve)
    marks = " ".join(f"{np.mean(c[i:i+20]):.2f}" for i in range(0, iterations, 20))
    print(f"{env} {mode} s{seed}: {time.time()-t0:.0f}s  [{marks}]", flush=True)
    return curve

out = {}
for env, params in [("chain", {"n_states": 8, "horizon": 12}), ("grid", {"size": 4, "horizon": 16})]:
    for mode in ("full", "baseline"):
        for seed in (1, 2):
            out[f"{env}-{mode}-{seed}"] = run(env, params, mode, seed, 100)
json.dump(out, open(".pilot/pilot3.json", "w"))
