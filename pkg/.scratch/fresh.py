import time
import numpy as np
from biscc.data import SyntheticSpec, generate_synthetic
from biscc.trainer import (TrainConfig, train_baseline, train_biscc,
                           pseudo_label_precision)
from biscc.localize import LocalizeConfig, evaluate_model, co_scene_false_positive_rate

loc = LocalizeConfig()
for seed in (0, 1):
    spec = SyntheticSpec(seed=seed, noise_sigma=0.5, actions_per_video=(1,2),
                         action_length=(3,8))
    ds = generate_synthetic(spec)
    cfg = TrainConfig(seed=seed)
    base, _ = train_baseline(ds, cfg, itr_key=0)
    pseudo = base.student.clone(requires_grad=False)
    q = pseudo_label_precision(pseudo, ds.train, cfg.gamma)
    rep = evaluate_model(base.student, ds.test, loc, (0.3,0.5,0.7))
    fp = co_scene_false_positive_rate(base.student, ds.test, cfg.gamma)
    print(f"seed{seed} it1 (baseline): q={q:.3f} mAP={rep.average:.3f} FP={fp:.3f}", flush=True)
    for itr in (2, 3):
        ori, aug, _ = train_biscc(ds, cfg, pseudo, itr_key=itr)  # fresh init
        pseudo = ori.student.clone(requires_grad=False)
        q = pseudo_label_precision(pseudo, ds.train, cfg.gamma)
        rep = evaluate_model(ori.student, ds.test, loc, (0.3,0.5,0.7))
        fp = co_scene_false_positive_rate(ori.student, ds.test, cfg.gamma)
        print(f"seed{seed} it{itr} (fresh biscc): q={q:.3f} mAP={rep.average:.3f} FP={fp:.3f}", flush=True)
