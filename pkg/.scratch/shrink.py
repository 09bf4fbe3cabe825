import numpy as np
from biscc.data import SyntheticSpec, generate_synthetic
from biscc.trainer import TrainConfig, train_baseline
from biscc.localize import LocalizeConfig, evaluate_model, localize_video, temporal_iou
from biscc.network import tcam_forward_stack

spec = SyntheticSpec(seed=0, noise_sigma=0.5, actions_per_video=(1,2), action_length=(3,8))
ds = generate_synthetic(spec)
loc = LocalizeConfig()

def stats(model, tag):
    rep = evaluate_model(model, ds.test, loc, (0.3, 0.5, 0.7))
    lens, best_ious, counts = [], [], []
    for v in ds.test[:50]:
        props = localize_video(model, v.features, loc)
        counts.append(len(props))
        lens.extend(p.end - p.start for p in props)
        for cls, s, e in v.gt_segments:
            cands = [temporal_iou((p.start, p.end), (s, e))
                     for p in props if p.class_id == cls]
            best_ious.append(max(cands) if cands else 0.0)
    gt_lens = [e - s for v in ds.test for _, s, e in v.gt_segments]
    print(f"{tag}: mAP@0.3={rep.map_by_iou[0.3]:.3f} @0.5={rep.map_by_iou[0.5]:.3f} "
          f"@0.7={rep.map_by_iou[0.7]:.3f} | prop_len={np.mean(lens):.2f} "
          f"(gt {np.mean(gt_lens):.2f}) best_iou={np.mean(best_ious):.3f} "
          f"props/video={np.mean(counts):.1f}", flush=True)

for steps in (700, 1500, 4500):
    cfg = TrainConfig(seed=0, steps_per_iteration=steps)
    state, _ = train_baseline(ds, cfg)
    stats(state.student, f"baseline@{steps}")
