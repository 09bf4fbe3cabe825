import time, json
import numpy as np
from biscc.data import SyntheticSpec, generate_synthetic
from biscc.trainer import TrainConfig, iterate, train_baseline, _iteration_metrics
from biscc.localize import LocalizeConfig, evaluate_model, co_scene_false_positive_rate
from biscc.trainer import pseudo_label_precision

out = {}
t_all = time.time()
for seed in [0, 1]:
    spec = SyntheticSpec(seed=seed)
    ds = generate_synthetic(spec)
    cfg = TrainConfig(seed=seed)
    loc = LocalizeConfig()
    t0 = time.time()
    res = iterate(ds, cfg, loc, eval_ious=(0.3, 0.5, 0.7))
    dt = time.time() - t0
    rows = []
    for m in res.iteration_metrics:
        rows.append(dict(it=m.iteration, q=round(m.pseudo_precision,4),
                         map_avg=round(m.map_avg,4),
                         map50=round(m.map_by_iou[0.5],4),
                         fp=round(m.co_scene_fp,4)))
    out[seed] = dict(time=round(dt,1), iters=rows)
    print(f"seed {seed}: {dt:.0f}s", flush=True)
    for r in rows:
        print("   ", r, flush=True)
print("total", time.time()-t_all)
json.dump(out, open(".scratch/directional.json","w"), indent=1)
