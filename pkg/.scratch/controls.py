import time
import numpy as np
from biscc.data import SyntheticSpec, generate_synthetic
from biscc.trainer import TrainConfig, train_baseline, iterate, pseudo_label_precision
from biscc.localize import LocalizeConfig, evaluate_model, co_scene_false_positive_rate
import dataclasses

spec = SyntheticSpec(seed=0, noise_sigma=0.5, actions_per_video=(1,2), action_length=(3,8))
ds = generate_synthetic(spec)
loc = LocalizeConfig()

# (a) baseline trained 1500 vs 4500 steps
for steps in (1500, 4500):
    cfg = TrainConfig(seed=0, steps_per_iteration=steps)
    state, recs = train_baseline(ds, cfg)
    rep = evaluate_model(state.student, ds.test, loc, (0.3,0.5,0.7))
    fp = co_scene_false_positive_rate(state.student, ds.test, cfg.gamma)
    q = pseudo_label_precision(state.student, ds.train, cfg.gamma)
    print(f"baseline {steps} steps: q={q:.3f} mAP={rep.average:.3f} FP={fp:.3f} "
          f"loss={recs[-1].breakdown.total:.3f}", flush=True)

# (b) iterate with consistency off (alpha=0, augs off): pure continued training
cfg0 = TrainConfig(seed=0, alpha=0.0, use_inter_tca=False, use_intra_tca=False)
res = iterate(ds, cfg0, loc, eval_ious=(0.3,0.5,0.7))
for m in res.iteration_metrics:
    print(f"alpha0-iterate it{m.iteration}: q={m.pseudo_precision:.3f} "
          f"mAP={m.map_avg:.3f} FP={m.co_scene_fp:.3f}", flush=True)
