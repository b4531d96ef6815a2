"""Synthetic gaming-like clips and the parametric distortion ladder.

Pristine clips mix a smooth background gradient, a scrolling textured panel,
hard-edged moving sprites and a static high-contrast HUD band. Distorted
versions are produced by blur -> uniform quantization -> additive noise ->
clamp, with five levels of increasing severity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from proxyvqa.errors import ValidationError

MIN_SIDE = 16
N_LEVELS = 5


def check_frame(frame: np.ndarray) -> None:
    if frame.ndim != 2:
        raise ValidationError(f"frame must be 2-D, got shape {frame.shape}")
    h, w = frame.shape
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ValidationError(f"frame {w}x{h} smaller than {MIN_SIDE}x{MIN_SIDE}")
    if not np.all(np.isfinite(frame)):
        raise ValidationError("frame contains non-finite samples")
    if frame.min() < 0.0 or frame.max() > 1.0:
        raise ValidationError("frame samples outside [0, 1]")


@dataclass
class Clip:
    """A luma clip; ``frames`` has shape (n_frames, height, width), float32."""

    content_id: int
    distortion_level: int
    frames: np.ndarray
    mos_surrogate: Optional[float] = None

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3:
            raise ValidationError("clip frames must be a (n, h, w) array")
        if self.frames.shape[0] < 2:
            raise ValidationError("a clip needs at least 2 frames")
        if not 0 <= self.distortion_level <= N_LEVELS:
            raise ValidationError(f"distortion level {self.distortion_level} not in 0..{N_LEVELS}")
        for f in self.frames:
            check_frame(f)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def is_reference(self) -> bool:
        return self.distortion_level == 0


@dataclass(frozen=True)
class LadderLevel:
    blur_sigma: float
    quant_step: float
    noise_sigma: float


@dataclass(frozen=True)
class LadderSpec:
    levels: tuple

    def __post_init__(self):
        if len(self.levels) != N_LEVELS:
            raise ValidationError(f"ladder needs {N_LEVELS} levels, got {len(self.levels)}")
        for lv in self.levels:
            if lv.blur_sigma < 0 or lv.noise_sigma < 0:
                raise ValidationError("blur and noise sigmas must be >= 0")
            if not 0 < lv.quant_step <= 1:
                raise ValidationError("quant_step must lie in (0, 1]")
        for name in ("blur_sigma", "quant_step", "noise_sigma"):
            vals = [getattr(lv, name) for lv in self.levels]
            if len(set(vals)) > 1 and any(b <= a for a, b in zip(vals, vals[1:])):
                raise ValidationError(f"ladder component {name} must be constant or strictly increasing")

    @classmethod
    def from_lists(cls, blur: Sequence[float], quant: Sequence[float], noise: Sequence[float]) -> "LadderSpec":
        return cls(tuple(LadderLevel(float(b), float(q), float(n)) for b, q, n in zip(blur, quant, noise)))

    def __getitem__(self, level: int) -> LadderLevel:
        return self.levels[level - 1]


DEFAULT_LADDER = LadderSpec.from_lists(
    blur=[0.5, 0.8, 1.2, 1.8, 2.5],
    quant=[1 / 64, 1 / 48, 1 / 32, 1 / 24, 1 / 16],
    noise=[0.002, 0.004, 0.008, 0.012, 0.02],
)

# Ladder of the shifted evaluation domain: milder blur, heavier noise.
TARGET_LADDER = LadderSpec.from_lists(
    blur=[0.3, 0.6, 1.0, 1.5, 2.2],
    quant=[1 / 96, 1 / 64, 1 / 40, 1 / 28, 1 / 20],
    noise=[0.004, 0.008, 0.014, 0.022, 0.032],
)


@dataclass(frozen=True)
class SceneParams:
    """Knobs of the content generator. Two presets emulate a source/target shift."""

    sprites: tuple = (3, 6)
    sprite_size: tuple = (0.08, 0.22)
    hud_contrast: float = 0.7
    hud_height: float = 0.12
    texture_freq: tuple = (3.0, 9.0)
    speed: float = 0.03
    panel_fraction: float = 0.45


SOURCE_SCENE = SceneParams()
TARGET_SCENE = SceneParams(sprites=(7, 12), sprite_size=(0.05, 0.15), hud_contrast=0.95,
                           hud_height=0.18, texture_freq=(6.0, 14.0), speed=0.05, panel_fraction=0.35)

DOMAINS = {"source": (SOURCE_SCENE, DEFAULT_LADDER), "target": (TARGET_SCENE, TARGET_LADDER)}


def _render_clip(rng: np.random.Generator, n_frames: int, width: int, height: int,
                 scene: SceneParams) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= height
    xx /= width

    theta = rng.uniform(0, 2 * np.pi)
    base = rng.uniform(0.2, 0.5) + rng.uniform(0.1, 0.3) * (np.cos(theta) * xx + np.sin(theta) * yy)
    base += 0.05 * np.sin(2 * np.pi * (rng.uniform(0.5, 1.5) * xx + rng.uniform(0.5, 1.5) * yy))

    fx, fy = rng.uniform(*scene.texture_freq, size=2) * rng.choice([-1, 1], size=2)
    tex_amp = rng.uniform(0.15, 0.3)
    tex_mean = rng.uniform(0.35, 0.65)
    pw = ph = scene.panel_fraction
    px0, py0 = rng.uniform(0, 1 - pw), rng.uniform(0, 1 - ph)
    pv = rng.uniform(-scene.speed, scene.speed, size=2)
    tex_shift = rng.uniform(0.02, 0.08)

    n_sprites = int(rng.integers(scene.sprites[0], scene.sprites[1] + 1))
    sprites = []
    for _ in range(n_sprites):
        sprites.append(dict(
            pos=rng.uniform(0, 1, size=2),
            vel=rng.uniform(-2 * scene.speed, 2 * scene.speed, size=2),
            size=rng.uniform(*scene.sprite_size, size=2),
            value=rng.uniform(0.0, 1.0),
            disc=bool(rng.integers(0, 2)),
        ))

    hud_top = bool(rng.integers(0, 2))
    hud_rows = max(2, int(round(scene.hud_height * height)))
    hud_dark = rng.uniform(0.0, 0.1)
    n_glyphs = int(rng.integers(4, 9))
    glyphs = [(rng.uniform(0.02, 0.9), rng.uniform(0.03, 0.08)) for _ in range(n_glyphs)]

    frames = np.empty((n_frames, height, width), dtype=np.float32)
    for t in range(n_frames):
        img = base.copy()

        ox, oy = (px0 + pv[0] * t) % (1 - pw), (py0 + pv[1] * t) % (1 - ph)
        panel = (xx >= ox) & (xx < ox + pw) & (yy >= oy) & (yy < oy + ph)
        grating = np.sin(2 * np.pi * (fx * xx + fy * yy + tex_shift * t))
        img = np.where(panel, tex_mean + tex_amp * np.sign(grating) * np.abs(grating) ** 0.5, img)

        for s in sprites:
            cx, cy = (s["pos"] + s["vel"] * t) % 1.0
            sx, sy = s["size"]
            dx = (xx - cx + 0.5) % 1.0 - 0.5
            dy = (yy - cy + 0.5) % 1.0 - 0.5
            if s["disc"]:
                mask = (dx / sx) ** 2 + (dy / sy) ** 2 <= 0.25
            else:
                mask = (np.abs(dx) <= sx / 2) & (np.abs(dy) <= sy / 2)
            img = np.where(mask, s["value"], img)

        band = slice(0, hud_rows) if hud_top else slice(height - hud_rows, height)
        img[band, :] = hud_dark
        bright = hud_dark + scene.hud_contrast
        rows = img[band, :]
        for gx, gw in glyphs:
            c0 = int(gx * width)
            c1 = min(width, c0 + max(1, int(gw * width)))
            rows[1:-1, c0:c1] = bright
        frames[t] = np.clip(img, 0.0, 1.0)
    return frames


def generate_contents(seed: int, n_contents: int, frames_per_clip: int, width: int, height: int,
                      scene: SceneParams = SOURCE_SCENE, first_content: int = 0) -> list:
    """Render ``n_contents`` pristine clips. Content ``k`` depends only on (seed, k)."""
    if n_contents < 1:
        raise ValidationError("n_contents must be >= 1")
    if frames_per_clip < 2:
        raise ValidationError("frames_per_clip must be >= 2")
    if width < MIN_SIDE or height < MIN_SIDE:
        raise ValidationError(f"frame size {width}x{height} below {MIN_SIDE}x{MIN_SIDE}")
    clips = []
    for cid in range(first_content, first_content + n_contents):
        rng = np.random.default_rng([seed, cid])
        clips.append(Clip(cid, 0, _render_clip(rng, frames_per_clip, width, height, scene)))
    return clips


def distort_frame(frame: np.ndarray, level: LadderLevel, rng: np.random.Generator) -> np.ndarray:
    out = frame.astype(np.float64)
    if level.blur_sigma > 0:
        out = gaussian_filter(out, level.blur_sigma, mode="reflect")
    out = np.round(out / level.quant_step) * level.quant_step
    if level.noise_sigma > 0:
        out = out + rng.normal(0.0, level.noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def distort(clip: Clip, level: int, ladder: LadderSpec = DEFAULT_LADDER, seed: int = 0) -> Clip:
    if not clip.is_reference:
        raise ValidationError("only pristine (level 0) clips can be distorted")
    if not 1 <= level <= N_LEVELS:
        raise ValidationError(f"level {level} not in 1..{N_LEVELS}")
    rng = np.random.default_rng([seed, clip.content_id, level])
    params = ladder[level]
    frames = np.stack([distort_frame(f, params, rng) for f in clip.frames])
    return replace(clip, distortion_level=level, frames=frames, mos_surrogate=None)


def build_corpus(seed: int, n_contents: int, frames_per_clip: int, width: int, height: int,
                 domain: str = "source", first_content: int = 0,
                 levels: Sequence[int] = range(1, N_LEVELS + 1)) -> list:
    """References plus their distorted versions, ordered by (content, level)."""
    if domain not in DOMAINS:
        raise ValidationError(f"unknown domain {domain!r}; expected one of {sorted(DOMAINS)}")
    scene, ladder = DOMAINS[domain]
    out = []
    for ref in generate_contents(seed, n_contents, frames_per_clip, width, height, scene, first_content):
        out.append(ref)
        out.extend(distort(ref, lv, ladder, seed) for lv in levels)
    return out
