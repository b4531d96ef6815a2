"""Full-reference proxy metrics (PSNR, SSIM, MS-SSIM) and per-clip targets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from proxyvqa.errors import ValidationError

PSNR_CAP_DB = 100.0
WIN_SIZE = 11
WIN_SIGMA = 1.5
K1, K2 = 0.01, 0.03
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _pair(ref, dist):
    ref = np.asarray(ref, dtype=np.float64)
    dist = np.asarray(dist, dtype=np.float64)
    if ref.shape != dist.shape:
        raise ValidationError(f"dimension mismatch: {ref.shape} vs {dist.shape}")
    if ref.ndim != 2:
        raise ValidationError("frames must be 2-D luma arrays")
    return ref, dist


def psnr(ref, dist, cap: float = PSNR_CAP_DB) -> float:
    ref, dist = _pair(ref, dist)
    mse = float(np.mean((ref - dist) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * np.log10(1.0 / mse))


def psnr_norm(ref, dist, cap: float = PSNR_CAP_DB) -> float:
    return float(np.clip(psnr(ref, dist, cap) / PSNR_CAP_DB, 0.0, 1.0))


def gaussian_window(size: int = WIN_SIZE, sigma: float = WIN_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable, valid region only
    n = g.size
    rows = sliding_window_view(img, n, axis=1) @ g
    return sliding_window_view(rows, n, axis=0) @ g


def _ssim_maps(ref, dist, data_range: float = 1.0):
    g = gaussian_window()
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_x = _filter_valid(ref, g)
    mu_y = _filter_valid(dist, g)
    sxx = _filter_valid(ref * ref, g) - mu_x ** 2
    syy = _filter_valid(dist * dist, g) - mu_y ** 2
    sxy = _filter_valid(ref * dist, g) - mu_x * mu_y
    lum = (2 * mu_x * mu_y + c1) / (mu_x ** 2 + mu_y ** 2 + c1)
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    return lum, cs


def ssim(ref, dist) -> float:
    ref, dist = _pair(ref, dist)
    if min(ref.shape) < WIN_SIZE:
        raise ValidationError(f"frame {ref.shape} smaller than the {WIN_SIZE}x{WIN_SIZE} window")
    lum, cs = _ssim_maps(ref, dist)
    return float(np.mean(lum * cs))


def downsample2(img: np.ndarray) -> np.ndarray:
    h, w = (img.shape[0] // 2) * 2, (img.shape[1] // 2) * 2
    v = img[:h, :w]
    return 0.25 * (v[0::2, 0::2] + v[1::2, 0::2] + v[0::2, 1::2] + v[1::2, 1::2])


def ms_ssim_scales(height: int, width: int, max_scales: int = len(MS_SSIM_WEIGHTS)) -> int:
    """Number of dyadic scales whose coarsest level still fits the window."""
    n, h, w = 0, height, width
    while n < max_scales and min(h, w) >= WIN_SIZE:
        n += 1
        h, w = h // 2, w // 2
    return n


def ms_ssim_weights(n_scales: int) -> np.ndarray:
    w = np.asarray(MS_SSIM_WEIGHTS[:n_scales])
    return w / w.sum()


def ms_ssim(ref, dist) -> float:
    """Multi-scale SSIM. Negative per-scale terms are clamped to 0 before the power."""
    ref, dist = _pair(ref, dist)
    n = ms_ssim_scales(*ref.shape)
    if n < 2:
        raise ValidationError(f"frame {ref.shape} too small for two MS-SSIM scales")
    weights = ms_ssim_weights(n)
    out = 1.0
    for j in range(n):
        lum, cs = _ssim_maps(ref, dist)
        if j == n - 1:
            v = float(np.mean(lum * cs))
        else:
            v = float(np.mean(cs))
            ref, dist = downsample2(ref), downsample2(dist)
        out *= max(v, 0.0) ** weights[j]
    return float(out)


TASKS: dict = {
    "ssim": ssim,
    "ms_ssim": ms_ssim,
    "psnr_norm": psnr_norm,
}
DEFAULT_TASKS = ("ssim", "ms_ssim", "psnr_norm")


def parse_tasks(spec) -> tuple:
    names = [t.strip() for t in spec.split(",")] if isinstance(spec, str) else list(spec)
    names = [t for t in names if t]
    if not names:
        raise ValidationError("task list is empty")
    for t in names:
        if t not in TASKS:
            raise ValidationError(f"unknown task {t!r}; known: {', '.join(TASKS)}")
    if len(set(names)) != len(names):
        raise ValidationError("duplicate task in task list")
    return tuple(names)


@dataclass
class ProxyScores:
    task_names: tuple
    per_frame: np.ndarray  # (n_frames, n_tasks)
    clip_mean: np.ndarray = field(init=False)
    ms_ssim_scales: int = 0

    def __post_init__(self):
        self.per_frame = np.asarray(self.per_frame, dtype=np.float64)
        self.clip_mean = self.per_frame.mean(axis=0)

    def __getitem__(self, task: str) -> float:
        return float(self.clip_mean[self.task_names.index(task)])


def compute_proxy_targets(ref_clip, dist_clip, tasks: Sequence[str] = DEFAULT_TASKS) -> ProxyScores:
    tasks = parse_tasks(tasks)
    if ref_clip.content_id != dist_clip.content_id:
        raise ValidationError(f"content mismatch: {ref_clip.content_id} vs {dist_clip.content_id}")
    if ref_clip.frames.shape != dist_clip.frames.shape:
        raise ValidationError(f"clips not aligned: {ref_clip.frames.shape} vs {dist_clip.frames.shape}")
    fns: list[Callable] = [TASKS[t] for t in tasks]
    per_frame = [[fn(r, d) for fn in fns] for r, d in zip(ref_clip.frames, dist_clip.frames)]
    scales = ms_ssim_scales(ref_clip.height, ref_clip.width)
    return ProxyScores(tasks, np.array(per_frame), ms_ssim_scales=scales)


def mos_surrogate(ms_ssim_clip_mean: float) -> float:
    """Clip-mean MS-SSIM mapped affinely from [0, 1] onto a 1..5 opinion scale."""
    return 1.0 + 4.0 * float(np.clip(ms_ssim_clip_mean, 0.0, 1.0))
