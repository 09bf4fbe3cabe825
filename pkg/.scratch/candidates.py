import time
from biscc.data import SyntheticSpec, generate_synthetic
from biscc.trainer import TrainConfig, iterate
from biscc.localize import LocalizeConfig

configs = {
    "A_len38":  dict(noise_sigma=0.5, actions_per_video=(1,2), action_length=(3,8)),
    "B_len410": dict(noise_sigma=0.5, actions_per_video=(1,2), action_length=(4,10)),
}
for name, kw in configs.items():
    for seed in (0, 1):
        spec = SyntheticSpec(seed=seed, **kw)
        ds = generate_synthetic(spec)
        cfg = TrainConfig(seed=seed)
        t0 = time.time()
        res = iterate(ds, cfg, LocalizeConfig(), eval_ious=(0.3, 0.5, 0.7))
        print(f"{name} seed{seed} ({time.time()-t0:.0f}s):", flush=True)
        for m in res.iteration_metrics:
            print(f"   it{m.iteration}: q={m.pseudo_precision:.3f} "
                  f"mAP={m.map_avg:.3f} map50={m.map_by_iou[0.5]:.3f} "
                  f"FP={m.co_scene_fp:.3f}", flush=True)
