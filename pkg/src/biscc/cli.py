"""Command-line entry point.

Subcommands: gen-data, train-baseline, train, localize, eval, sweep,
report.  Every command resolves its configuration (file + flag
overrides), writes the resolved snapshot next to its outputs, refuses to
write into a non-empty directory without --force, and removes partial
outputs on failure.  Set BISCC_LOG=debug|info|quiet for verbosity.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import shutil
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_run_config
from .data import Dataset, generate_synthetic, load_dataset, save_dataset
from .localize import (Proposal, evaluate_map, evaluate_model, localize_video,
                       co_scene_false_positive_rate)
from .network import load_params, save_params
from .report import model_trace_curves, sample_test_videos, tcam_trace_svg
from .trainer import (iterate, metrics_rows, pseudo_label_precision,
                      train_baseline)

log = logging.getLogger("biscc")


class CommandError(RuntimeError):
    pass


def _setup_logging() -> None:
    level = os.environ.get("BISCC_LOG", "info").lower()
    numeric = {"debug": logging.DEBUG, "info": logging.INFO,
               "quiet": logging.ERROR}.get(level, logging.INFO)
    logging.basicConfig(level=numeric, format="%(levelname)s %(message)s",
                        stream=sys.stderr)


class OutputDir:
    """Output directory guard: refuses non-empty targets without --force
    and can delete everything it created if the command fails."""

    def __init__(self, path: str, force: bool):
        self.root = Path(path)
        self.created_root = False
        self.files: list[Path] = []
        if self.root.exists():
            if not self.root.is_dir():
                raise CommandError(f"output path {path} exists and is not a directory")
            if any(self.root.iterdir()) and not force:
                raise CommandError(f"output directory {path} is not empty "
                                   f"(use --force to overwrite)")
        else:
            self.root.mkdir(parents=True)
            self.created_root = True

    def path(self, name: str) -> Path:
        p = self.root / name
        self.files.append(p)
        return p

    def subdir(self, name: str) -> Path:
        p = self.root / name
        p.mkdir(exist_ok=True)
        self.files.append(p)
        return p

    def cleanup_partial(self) -> None:
        if self.created_root:
            shutil.rmtree(self.root, ignore_errors=True)
            return
        for p in reversed(self.files):
            if p.is_dir():
                shutil.rmtree(p, ignore_errors=True)
            elif p.exists():
                p.unlink()


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _load_dataset_arg(path: str) -> Dataset:
    if not Path(path).exists():
        raise CommandError(f"dataset file not found: {path}")
    return load_dataset(path)


def _resolve_config(args) -> RunConfig:
    return load_run_config(getattr(args, "config", None), seed=args.seed)


def _write_resolved(out: OutputDir, cfg: RunConfig) -> None:
    _write_text(out.path("config.resolved"), cfg.resolved_text())


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    out = OutputDir(args.out, args.force)
    try:
        dataset = generate_synthetic(cfg.synthetic_spec())
        save_dataset(dataset, out.path("dataset.bscc"))
        _write_resolved(out, cfg)
        log.info("wrote dataset with %d train / %d test videos",
                 len(dataset.train), len(dataset.test))
        return 0
    except Exception:
        out.cleanup_partial()
        raise


def cmd_train_baseline(args) -> int:
    cfg = _resolve_config(args)
    dataset = _load_dataset_arg(args.data)
    out = OutputDir(args.out, args.force)
    try:
        tcfg = cfg.train_config()
        state, records = train_baseline(dataset, tcfg)
        save_params(state.student, out.path("student.bscp"))
        save_params(state.teacher, out.path("teacher.bscp"))
        marks = _final_marks(records, state.student, dataset, cfg)
        _write_text(out.path("metrics.csv"), "\n".join(metrics_rows(records, marks)) + "\n")
        _write_resolved(out, cfg)
        log.info("baseline trained for %d steps", len(records))
        return 0
    except Exception:
        out.cleanup_partial()
        raise


def _final_marks(records, model, dataset, cfg: RunConfig) -> dict:
    if not records or not dataset.test:
        return {}
    loc = cfg.localize_config()
    report = evaluate_model(model, dataset.test, loc, (0.5,))
    q = pseudo_label_precision(model, dataset.train, cfg["gamma"])
    return {records[-1].step: (f"{q:.6f}", f"{report.map_by_iou[0.5]:.6f}")}


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    dataset = _load_dataset_arg(args.data)
    out = OutputDir(args.out, args.force)
    try:
        result = iterate(dataset, cfg.train_config(), cfg.localize_config(),
                         eval_ious=cfg.eval_ious())
        save_params(result.original.student, out.path("final_student.bscp"))
        save_params(result.original.teacher, out.path("final_teacher.bscp"))
        if result.baseline is not None:
            save_params(result.baseline.student, out.path("baseline_student.bscp"))
        if result.augment is not None:
            save_params(result.augment.student, out.path("aug_student.bscp"))
        _save_iteration_outputs(out, result, dataset, cfg)
        _write_resolved(out, cfg)
        return 0
    except Exception:
        out.cleanup_partial()
        raise


def _save_iteration_outputs(out: OutputDir, result, dataset, cfg: RunConfig) -> None:
    steps_per = cfg["steps_per_iteration"]
    marks = {}
    for i, m in enumerate(result.iteration_metrics):
        last_step = steps_per * (i + 1) - 1
        map50 = m.map_by_iou.get(0.5, m.map_avg)
        marks[last_step] = (f"{m.pseudo_precision:.6f}", f"{map50:.6f}")
    _write_text(out.path("metrics.csv"),
                "\n".join(metrics_rows(result.records, marks)) + "\n")
    rows = ["iteration,q,map_avg," + ",".join(
        f"map{t:g}" for t in sorted(result.iteration_metrics[0].map_by_iou)) +
        ",co_scene_fp"]
    for m in result.iteration_metrics:
        per_iou = ",".join(f"{m.map_by_iou[t]:.6f}" for t in sorted(m.map_by_iou))
        rows.append(f"{m.iteration},{m.pseudo_precision:.6f},{m.map_avg:.6f},"
                    f"{per_iou},{m.co_scene_fp:.6f}")
    _write_text(out.path("iterations.csv"), "\n".join(rows) + "\n")


def cmd_localize(args) -> int:
    cfg = _resolve_config(args)
    dataset = _load_dataset_arg(args.data)
    if not Path(args.model).exists():
        raise CommandError(f"checkpoint not found: {args.model}")
    params = load_params(args.model)
    out = OutputDir(args.out, args.force)
    try:
        loc = cfg.localize_config()
        videos = dataset.test if args.split == "test" else dataset.train
        rows = ["video_id,class,start,end,conf"]
        for v in videos:
            for p in localize_video(params, v.features, loc):
                rows.append(f"{v.video_id},{p.class_id},{p.start},{p.end},{p.conf:.8g}")
        _write_text(out.path("proposals.csv"), "\n".join(rows) + "\n")
        _write_resolved(out, cfg)
        log.info("wrote %d proposals for %d videos", len(rows) - 1, len(videos))
        return 0
    except Exception:
        out.cleanup_partial()
        raise


def _read_proposals_csv(path: str) -> dict:
    if not Path(path).exists():
        raise CommandError(f"proposals file not found: {path}")
    by_video: dict[str, list] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows:
        return {}
    start = 1 if rows[0][:1] == ["video_id"] else 0
    for row in rows[start:]:
        if len(row) != 5:
            raise CommandError(f"bad proposals row: {row}")
        vid, cls, s, e, conf = row
        by_video.setdefault(vid, []).append(
            Proposal(class_id=int(cls), start=int(s), end=int(e), conf=float(conf)))
    return by_video


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    dataset = _load_dataset_arg(args.data)
    proposals = _read_proposals_csv(args.proposals)
    out = OutputDir(args.out, args.force)
    try:
        videos = dataset.test if args.split == "test" else dataset.train
        gt = {v.video_id: list(v.gt_segments) for v in videos}
        for vid in proposals:
            gt.setdefault(vid, [])
        ious = cfg.eval_ious()
        result = evaluate_map(proposals, gt, ious)
        rows = ["iou,map"]
        for t in ious:
            rows.append(f"{t:g},{result[t]:.6f}")
        rows.append(f"avg,{result['avg']:.6f}")
        _write_text(out.path("report.csv"), "\n".join(rows) + "\n")
        _write_resolved(out, cfg)
        log.info("mAP(avg over IoUs) = %.4f", result["avg"])
        return 0
    except Exception:
        out.cleanup_partial()
        raise


_SWEEP_PARAMS = {
    "alpha": ("alpha", float),
    "gamma": ("gamma", float),
    "K": ("ctg_k", int),
    "ctg_k": ("ctg_k", int),
    "ctg_mode": ("ctg_mode", str),
}


def cmd_sweep(args) -> int:
    if args.param not in _SWEEP_PARAMS:
        raise CommandError(f"unknown sweep parameter {args.param!r} "
                           f"(choose from {sorted(_SWEEP_PARAMS)})")
    key, cast = _SWEEP_PARAMS[args.param]
    try:
        values = [cast(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise CommandError(f"bad sweep values {args.values!r}") from exc
    if not values:
        raise CommandError("no sweep values given")
    cfg = _resolve_config(args)
    dataset = _load_dataset_arg(args.data)
    out = OutputDir(args.out, args.force)
    try:
        rows = ["param,value,map_avg,map50,q,co_scene_fp"]
        for val in values:
            sub_cfg = cfg.override(**{key: val})
            run_dir = out.subdir(f"{args.param}_{val}")
            result = iterate(dataset, sub_cfg.train_config(),
                             sub_cfg.localize_config(), eval_ious=sub_cfg.eval_ious())
            final = result.iteration_metrics[-1]
            map50 = final.map_by_iou.get(0.5, final.map_avg)
            rows.append(f"{args.param},{val},{final.map_avg:.6f},{map50:.6f},"
                        f"{final.pseudo_precision:.6f},{final.co_scene_fp:.6f}")
            save_params(result.original.student, run_dir / "final_student.bscp")
            _write_text(run_dir / "config.resolved", sub_cfg.resolved_text())
            log.info("%s=%s -> map_avg %.4f", args.param, val, final.map_avg)
        _write_text(out.path("sweep.csv"), "\n".join(rows) + "\n")
        _write_resolved(out, cfg)
        return 0
    except Exception:
        out.cleanup_partial()
        raise


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    cfg_path = run_dir / "config.resolved"
    if not cfg_path.exists():
        raise CommandError(f"no config.resolved in {args.run}")
    cfg = load_run_config(cfg_path, seed=args.seed)
    dataset = _load_dataset_arg(args.data)
    final_path = run_dir / "final_student.bscp"
    if not final_path.exists():
        raise CommandError(f"no final_student.bscp in {args.run}")
    final_model = load_params(final_path)
    baseline_path = run_dir / "baseline_student.bscp"
    baseline_model = load_params(baseline_path) if baseline_path.exists() else None
    out = OutputDir(args.out, args.force)
    try:
        videos = sample_test_videos(dataset.test, cfg["report_videos"], cfg["seed"])
        for v in videos:
            curves = {}
            if baseline_model is not None:
                curves.update(model_trace_curves(v, baseline_model, "baseline"))
            curves.update(model_trace_curves(v, final_model, "bi-scc"))
            svg = tcam_trace_svg(v, curves, title=v.video_id)
            _write_text(out.path(f"trace_{v.video_id}.svg"), svg)
        _write_text(out.path("summary.csv"),
                    _summary_csv(baseline_model, final_model, dataset, cfg))
        _write_resolved(out, cfg)
        log.info("wrote %d trace charts", len(videos))
        return 0
    except Exception:
        out.cleanup_partial()
        raise


def _summary_csv(baseline_model, final_model, dataset, cfg: RunConfig) -> str:
    loc = cfg.localize_config()
    ious = cfg.eval_ious()
    rows = ["model,map_avg,map50,co_scene_fp,q"]
    items = []
    if baseline_model is not None:
        items.append(("baseline", baseline_model))
    items.append(("bi-scc", final_model))
    for name, model in items:
        report = evaluate_model(model, dataset.test, loc, ious)
        map50 = report.map_by_iou.get(0.5, report.average)
        fp = co_scene_false_positive_rate(model, dataset.test, cfg["gamma"])
        q = pseudo_label_precision(model, dataset.train, cfg["gamma"])
        rows.append(f"{name},{report.average:.6f},{map50:.6f},{fp:.6f},{q:.6f}")
    return "\n".join(rows) + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biscc",
        description="Weakly-supervised temporal action localization on the "
                    "synthetic co-scene confound benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, model=False):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true",
                       help="allow writing into a non-empty directory")
        if data:
            p.add_argument("--data", required=True, help="dataset file")
        if model:
            p.add_argument("--model", required=True, help="model checkpoint")

    common(sub.add_parser("gen-data", help="generate a synthetic dataset"))
    common(sub.add_parser("train-baseline", help="train the mean-teacher baseline"),
           data=True)
    common(sub.add_parser("train", help="train the full dual-branch pipeline"),
           data=True)
    p = sub.add_parser("localize", help="generate proposals with a checkpoint")
    common(p, data=True, model=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p = sub.add_parser("eval", help="evaluate a proposals file")
    common(p, data=True)
    p.add_argument("--proposals", required=True, help="proposals csv")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p = sub.add_parser("sweep", help="sweep one parameter over a value list")
    common(p, data=True)
    p.add_argument("--param", required=True,
                   help="one of alpha, gamma, K, ctg_mode")
    p.add_argument("--values", required=True, help="comma-separated values")
    p = sub.add_parser("report", help="emit trace charts and a summary")
    common(p, data=True)
    p.add_argument("--run", required=True, help="training run directory")
    return parser


_HANDLERS = {
    "gen-data": cmd_gen_data,
    "train-baseline": cmd_train_baseline,
    "train": cmd_train,
    "localize": cmd_localize,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (CommandError, ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
