"""SVG trace rendering for per-video attention / T-CAM inspection.

Charts are plain hand-built SVG so they stay dependency-free, diffable,
and parseable as XML in tests.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .data import VideoSample
from .network import ModelParams, tcam_forward_np
from .numeric import row_softmax

_WIDTH, _HEIGHT = 720, 260
_PAD_L, _PAD_R, _PAD_T, _PAD_B = 50, 16, 34, 30


def _x(t: float, t_len: int) -> float:
    span = _WIDTH - _PAD_L - _PAD_R
    return _PAD_L + span * t / max(1, t_len - 1)


def _y(v: float) -> float:
    span = _HEIGHT - _PAD_T - _PAD_B
    return _PAD_T + span * (1.0 - min(1.0, max(0.0, v)))


def _polyline(values: np.ndarray, color: str, dash: str = "") -> str:
    t_len = len(values)
    pts = " ".join(f"{_x(t, t_len):.2f},{_y(float(v)):.2f}"
                   for t, v in enumerate(values))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return (f'<polyline fill="none" stroke="{color}" stroke-width="1.5"'
            f'{extra} points="{pts}" />')


def tcam_trace_svg(video: VideoSample, curves: dict, title: str = "") -> str:
    """One SVG line chart: named curves in [0,1] over segments, with the
    ground-truth action intervals shaded underneath.

    ``curves`` maps a legend label to a length-T array; up to four curves
    get distinct colors.
    """
    t_len = video.num_segments
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
             f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">',
             f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white" />']
    label = title or video.video_id
    parts.append(f'<text x="{_PAD_L}" y="18" font-family="monospace" '
                 f'font-size="12">{escape(label)}</text>')
    for cls, s, e in video.gt_segments:
        x0, x1 = _x(s, t_len), _x(max(s, e - 1), t_len)
        parts.append(f'<rect x="{x0:.2f}" y="{_PAD_T}" '
                     f'width="{max(1.0, x1 - x0):.2f}" '
                     f'height="{_HEIGHT - _PAD_T - _PAD_B}" fill="#ffd27f" '
                     f'opacity="0.45"><title>gt class {cls}</title></rect>')
    axis_y0, axis_y1 = _y(0.0), _y(1.0)
    parts.append(f'<line x1="{_PAD_L}" y1="{axis_y0}" x2="{_WIDTH - _PAD_R}" '
                 f'y2="{axis_y0}" stroke="#444" stroke-width="1" />')
    parts.append(f'<line x1="{_PAD_L}" y1="{axis_y0}" x2="{_PAD_L}" '
                 f'y2="{axis_y1}" stroke="#444" stroke-width="1" />')
    for frac in (0.0, 0.5, 1.0):
        parts.append(f'<text x="{_PAD_L - 30}" y="{_y(frac) + 4:.2f}" '
                     f'font-family="monospace" font-size="10">{frac:.1f}</text>')
    legend_x = _PAD_L
    for (name, values), color in zip(curves.items(), colors):
        parts.append(_polyline(np.asarray(values, dtype=np.float64), color))
        parts.append(f'<rect x="{legend_x}" y="{_HEIGHT - 18}" width="10" '
                     f'height="10" fill="{color}" />')
        parts.append(f'<text x="{legend_x + 14}" y="{_HEIGHT - 9}" '
                     f'font-family="monospace" font-size="10">{escape(name)}</text>')
        legend_x += 14 + 8 * len(name) + 24
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def model_trace_curves(video: VideoSample, params: ModelParams,
                       prefix: str) -> dict:
    """Attention and best-action-class probability curves for one model."""
    _, a, s_bar = tcam_forward_np(video.features.astype(np.float64), params)
    probs = row_softmax(s_bar)
    action_max = probs[:, :-1].max(axis=1)
    return {f"{prefix} attention": a[:, 0],
            f"{prefix} action prob": action_max}


def sample_test_videos(videos: list, count: int, seed: int) -> list:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(97,)))
    if count >= len(videos):
        return list(videos)
    idx = sorted(rng.choice(len(videos), size=count, replace=False).tolist())
    return [videos[i] for i in idx]
