import time, itertools
import numpy as np
from biscc.data import SyntheticSpec, generate_synthetic
from biscc.trainer import TrainConfig, train_baseline, pseudo_label_precision
from biscc.localize import LocalizeConfig, evaluate_model, co_scene_false_positive_rate

grid = [
    # (noise, actions_per_video, action_length)
    (0.3, (1,3), (4,12)),
    (0.5, (1,3), (4,12)),
    (0.3, (1,2), (3,8)),
    (0.5, (1,2), (3,8)),
    (0.7, (1,2), (3,8)),
    (0.5, (1,2), (4,10)),
]
for noise, apv, alen in grid:
    spec = SyntheticSpec(noise_sigma=noise, actions_per_video=apv,
                         action_length=alen, seed=0)
    ds = generate_synthetic(spec)
    cfg = TrainConfig(steps_per_iteration=800, seed=0)
    t0 = time.time()
    state, recs = train_baseline(ds, cfg)
    q = pseudo_label_precision(state.student, ds.train, cfg.gamma)
    rep = evaluate_model(state.student, ds.test, LocalizeConfig(), (0.3,0.5,0.7))
    fp = co_scene_false_positive_rate(state.student, ds.test, cfg.gamma)
    print(f"noise={noise} apv={apv} alen={alen}: q={q:.3f} mAP={rep.average:.3f} "
          f"map50={rep.map_by_iou[0.5]:.3f} FP={fp:.3f}  ({time.time()-t0:.0f}s)", flush=True)
