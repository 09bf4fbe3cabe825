import numpy as np
from biscc.data import SyntheticSpec, generate_synthetic
from biscc.trainer import (TrainConfig, BranchState, train_baseline, train_biscc,
                           pseudo_label_precision)
from biscc.localize import LocalizeConfig, evaluate_model, co_scene_false_positive_rate

loc = LocalizeConfig()

def report(model, ds, gamma, tag):
    rep = evaluate_model(model, ds.test, loc, (0.3,0.5,0.7))
    fp = co_scene_false_positive_rate(model, ds.test, gamma)
    q = pseudo_label_precision(model, ds.train, gamma)
    print(f"  {tag}: q={q:.3f} mAP={rep.average:.3f} map50={rep.map_by_iou[0.5]:.3f} FP={fp:.3f}", flush=True)
    return rep.average, fp

for noise, alen in [(0.5,(3,8)), (0.5,(4,10))]:
    for seed in (0,):
        spec = SyntheticSpec(seed=seed, noise_sigma=noise, actions_per_video=(1,2), action_length=alen)
        ds = generate_synthetic(spec)
        cfg = TrainConfig(seed=seed, steps_per_iteration=700)
        print(f"config noise={noise} alen={alen} seed={seed}", flush=True)
        base, _ = train_baseline(ds, cfg, itr_key=0)
        report(base.student, ds, cfg.gamma, "it1 baseline")

        # warm-from-pseudo
        pseudo = base.student.clone(requires_grad=False)
        prev = None
        for itr in (2, 3):
            init_o = BranchState(student=pseudo.clone(True), teacher=pseudo.clone(False))
            init_a = BranchState(student=pseudo.clone(True), teacher=pseudo.clone(False))
            ori, aug, _ = train_biscc(ds, cfg, pseudo, itr_key=itr,
                                      init_original=init_o, init_augment=init_a)
            pseudo = ori.student.clone(requires_grad=False)
            report(ori.student, ds, cfg.gamma, f"it{itr} warm-from-pseudo")

        # fresh
        pseudo = base.student.clone(requires_grad=False)
        for itr in (2, 3):
            ori, aug, _ = train_biscc(ds, cfg, pseudo, itr_key=itr)
            pseudo = ori.student.clone(requires_grad=False)
            report(ori.student, ds, cfg.gamma, f"it{itr} fresh")
