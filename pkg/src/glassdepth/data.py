"""RGB-D samples: synthetic scene generation, depth corruption, augmentation, disk I/O.

A sample couples an RGB image, a corrupted sensor-style depth map, the true
depth, a binary mask of transparent pixels and pinhole intrinsics.  On disk
a sample is one directory::

    rgb.png         8-bit RGB
    depth_raw.png   16-bit grayscale, millimetres, 0 = missing
    depth_gt.png    16-bit grayscale, millimetres
    mask.png        8-bit, >= 128 means transparent
    intrinsics.txt  four ASCII floats: fx fy cx cy

The generator composes analytic primitives (sphere caps, boxes, cylinders)
over a tilted background plane by per-pixel depth minimum, shades RGB from
the depth normals, and then corrupts the depth inside the transparent mask
the way real sensors fail on glass: background bleed-through, dropouts, or
noisy hits.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image

from .errors import ConfigError, ContractError, FormatError

DEPTH_SCALE = 1000.0  # stored millimetres per metre
MANIFEST_NAME = "manifest.txt"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError(f"focal lengths must be positive, got {self}")


@dataclass
class RgbdSample:
    rgb: np.ndarray        # (H, W, 3) uint8
    raw_depth: np.ndarray  # (H, W) float32 metres, 0 = missing
    gt_depth: np.ndarray   # (H, W) float32 metres
    mask: np.ndarray       # (H, W) uint8, 1 = transparent pixel
    intrinsics: CameraIntrinsics

    @property
    def height(self) -> int:
        return self.gt_depth.shape[0]

    @property
    def width(self) -> int:
        return self.gt_depth.shape[1]

    def validate(self) -> "RgbdSample":
        h, w = self.gt_depth.shape
        if self.rgb.shape != (h, w, 3) or self.raw_depth.shape != (h, w) \
                or self.mask.shape != (h, w):
            raise ContractError(
                f"plane extents disagree: rgb {self.rgb.shape}, "
                f"raw {self.raw_depth.shape}, gt {self.gt_depth.shape}, "
                f"mask {self.mask.shape}")
        if (self.raw_depth < 0).any():
            raise ContractError("raw depth must be non-negative")
        if (self.gt_depth[self.mask.astype(bool)] <= 0).any():
            raise ContractError("ground truth must be positive on masked pixels")
        return self

    def digest(self) -> str:
        """Content hash; stable across load order and in-memory copies."""
        h = hashlib.sha1()
        for plane in (self.rgb, self.raw_depth, self.gt_depth, self.mask):
            h.update(np.ascontiguousarray(plane).tobytes())
        h.update(repr(self.intrinsics).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic transparent-scene generator."""

    height: int = 48
    width: int = 64
    min_objects: int = 2
    max_objects: int = 5
    shapes: tuple = ("sphere", "box", "cylinder")
    background_depth: tuple = (1.2, 2.5)   # plane depth range at centre, metres
    background_tilt: float = 0.3           # max edge-to-edge plane variation
    transparent_fraction: float = 0.7      # per-object transparency probability
    p_background: float = 0.5              # masked pixel reads the background
    p_missing: float = 0.3                 # masked pixel drops out (0)
    p_noise: float = 0.2                   # masked pixel reads gt + noise
    noise_sigma: float = 0.005             # sensor noise, metres
    seed: int = 0

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ConfigError("scene extents are too small")
        if not 0 <= self.min_objects <= self.max_objects:
            raise ConfigError("bad object count range")
        if self.background_depth[0] <= 0 or \
                self.background_depth[1] < self.background_depth[0]:
            raise ConfigError("background depth range must be positive and ordered")
        p = self.p_background + self.p_missing + self.p_noise
        if abs(p - 1.0) > 1e-9:
            raise ConfigError(f"corruption probabilities sum to {p}, expected 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise sigma must be non-negative")


class Primitive:
    """Analytic depth footprint of one object plus its appearance."""

    def __init__(self, kind: str, center: tuple, size: tuple, z_base: float,
                 bump: float, albedo: np.ndarray, transparent: bool):
        self.kind = kind
        self.center = center          # (u0, v0) pixels
        self.size = size              # kind-specific pixel extents
        self.z_base = z_base          # metres at the silhouette edge
        self.bump = bump              # metres of relief toward the camera
        self.albedo = albedo
        self.transparent = transparent

    def depth_map(self, height: int, width: int) -> np.ndarray:
        """Per-pixel surface depth; +inf outside the footprint."""
        v, u = np.mgrid[0:height, 0:width].astype(np.float64)
        u0, v0 = self.center
        out = np.full((height, width), np.inf)
        if self.kind == "sphere":
            r = self.size[0]
            rho2 = ((u - u0) ** 2 + (v - v0) ** 2) / (r * r)
            inside = rho2 <= 1.0
            out[inside] = self.z_base - self.bump * np.sqrt(1.0 - rho2[inside])
        elif self.kind == "box":
            a, b = self.size
            inside = (np.abs(u - u0) <= a) & (np.abs(v - v0) <= b)
            out[inside] = self.z_base - self.bump
        elif self.kind == "cylinder":
            r, half_len = self.size
            du2 = ((u - u0) / r) ** 2
            inside = (du2 <= 1.0) & (np.abs(v - v0) <= half_len)
            out[inside] = self.z_base - self.bump * np.sqrt(1.0 - du2[inside])
        else:
            raise ConfigError(f"unknown primitive kind {self.kind!r}")
        return out


def default_intrinsics(height: int, width: int) -> CameraIntrinsics:
    f = 0.866 * width  # ~60 degree horizontal field of view
    return CameraIntrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0)


def _background_plane(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    z0 = rng.uniform(*cfg.background_depth)
    gu = rng.uniform(-cfg.background_tilt, cfg.background_tilt)
    gv = rng.uniform(-cfg.background_tilt, cfg.background_tilt)
    v, u = np.mgrid[0:cfg.height, 0:cfg.width].astype(np.float64)
    plane = z0 + gu * (u / (cfg.width - 1) - 0.5) + gv * (v / (cfg.height - 1) - 0.5)
    return np.maximum(plane, 0.05)


def make_primitives(cfg: SynthConfig, rng: np.random.Generator,
                    plane: np.ndarray) -> List[Primitive]:
    n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    prims: List[Primitive] = []
    for _ in range(n):
        kind = cfg.shapes[int(rng.integers(len(cfg.shapes)))]
        u0 = rng.uniform(0.15 * cfg.width, 0.85 * cfg.width)
        v0 = rng.uniform(0.15 * cfg.height, 0.85 * cfg.height)
        scale = min(cfg.height, cfg.width)
        if kind == "sphere":
            size = (rng.uniform(0.10, 0.22) * scale,)
        elif kind == "box":
            size = (rng.uniform(0.08, 0.18) * scale, rng.uniform(0.08, 0.18) * scale)
        else:
            size = (rng.uniform(0.06, 0.12) * scale, rng.uniform(0.15, 0.35) * scale)
        z_plane = plane[int(np.clip(v0, 0, cfg.height - 1)),
                        int(np.clip(u0, 0, cfg.width - 1))]
        z_base = max(0.2, z_plane - rng.uniform(0.0, 0.15))
        bump = rng.uniform(0.04, 0.18)
        albedo = rng.uniform(0.25, 0.9, size=3)
        prims.append(Primitive(kind, (u0, v0), size, z_base, bump, albedo,
                               transparent=False))
    if prims:
        flags = rng.random(len(prims)) < cfg.transparent_fraction
        if not flags.any():
            flags[int(rng.integers(len(prims)))] = True
        for p, t in zip(prims, flags):
            p.transparent = bool(t)
    return prims


def render_depth(prims: Sequence[Primitive], plane: np.ndarray):
    """Z-buffer the primitives over the plane.

    Returns (gt_depth, owner) where owner[y, x] is the index of the nearest
    primitive or -1 for the background plane.
    """
    h, w = plane.shape
    stack = np.stack([plane] + [p.depth_map(h, w) for p in prims], axis=0)
    owner = np.argmin(stack, axis=0) - 1
    return np.min(stack, axis=0), owner


def _shade(depth: np.ndarray) -> np.ndarray:
    # Lambertian intensity from depth-gradient normals, fixed light direction
    gh = np.zeros_like(depth)
    gw = np.zeros_like(depth)
    gh[:-1] = depth[1:] - depth[:-1]
    gw[:, :-1] = depth[:, 1:] - depth[:, :-1]
    n = np.stack([gw, gh, -np.ones_like(depth)], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    light = np.array([0.35, 0.25, -1.0])
    light /= np.linalg.norm(light)
    return np.clip(n @ light, 0.0, 1.0)


TRANSPARENT_ALPHA = 0.25  # weak appearance: mostly background shows through


def generate_scene(cfg: SynthConfig) -> RgbdSample:
    """Deterministically render one synthetic sample from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    plane = _background_plane(cfg, rng)
    prims = make_primitives(cfg, rng, plane)
    gt, owner = render_depth(prims, plane)

    # mask: pixels whose nearest surface belongs to a transparent object
    mask = np.zeros(gt.shape, dtype=np.uint8)
    for i, p in enumerate(prims):
        if p.transparent:
            mask[owner == i] = 1

    shade = _shade(gt)
    bg_albedo = rng.uniform(0.3, 0.7, size=3)
    bg_shade = _shade(plane)
    rgb = bg_shade[..., None] * bg_albedo[None, None, :]
    for i, p in enumerate(prims):
        sel = owner == i
        surface = shade[sel, None] * p.albedo[None, :]
        if p.transparent:
            rgb[sel] = (TRANSPARENT_ALPHA * surface
                        + (1 - TRANSPARENT_ALPHA) * rgb[sel])
        else:
            rgb[sel] = surface
    rgb_u8 = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)

    # the depth a sensor would return if the transparent objects were absent
    opaque = [p for p in prims if not p.transparent]
    behind, _ = render_depth(opaque, plane)

    sample = RgbdSample(
        rgb=rgb_u8,
        raw_depth=gt.astype(np.float32),  # placeholder, replaced by corruption
        gt_depth=gt.astype(np.float32),
        mask=mask,
        intrinsics=default_intrinsics(cfg.height, cfg.width),
    )
    return corrupt_depth(sample, cfg, rng, background=behind).validate()


def corrupt_depth(sample: RgbdSample, cfg: SynthConfig,
                  rng: np.random.Generator,
                  background: Optional[np.ndarray] = None) -> RgbdSample:
    """Simulate sensor failure on transparent pixels.

    Inside the mask each pixel independently reads the background depth
    along its ray (``p_background``), drops out to 0 (``p_missing``), or
    reads the true depth plus noise (``p_noise``).  Outside the mask the
    sensor reads the truth plus Gaussian noise.  ``background`` defaults to
    a least-squares plane fitted to the unmasked ground truth.
    """
    gt = sample.gt_depth.astype(np.float64)
    mask = sample.mask.astype(bool)
    if background is None:
        background = _fit_plane(gt, ~mask)
    raw = gt + rng.normal(0.0, cfg.noise_sigma, gt.shape)
    if mask.any():
        draw = rng.random(gt.shape)
        use_bg = mask & (draw < cfg.p_background)
        use_miss = mask & (draw >= cfg.p_background) \
            & (draw < cfg.p_background + cfg.p_missing)
        use_noise = mask & ~use_bg & ~use_miss
        raw[use_bg] = background[use_bg]
        raw[use_miss] = 0.0
        raw[use_noise] = gt[use_noise] + rng.normal(0.0, cfg.noise_sigma,
                                                    int(use_noise.sum()))
    raw = np.maximum(raw, 0.0).astype(np.float32)
    return replace(sample, raw_depth=raw)


def _fit_plane(depth: np.ndarray, sel: np.ndarray) -> np.ndarray:
    h, w = depth.shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    a = np.stack([np.ones(int(sel.sum())), u[sel], v[sel]], axis=1)
    coef, *_ = np.linalg.lstsq(a, depth[sel], rcond=None)
    return coef[0] + coef[1] * u + coef[2] * v


# ---------------------------------------------------------------------------
# augmentation

def flip_sample(sample: RgbdSample, axis: int) -> RgbdSample:
    """Mirror all planes along ``axis`` (0 = vertical flip, 1 = horizontal)."""
    intr = sample.intrinsics
    if axis == 1:
        intr = replace(intr, cx=sample.width - 1 - intr.cx)
    elif axis == 0:
        intr = replace(intr, cy=sample.height - 1 - intr.cy)
    else:
        raise ConfigError(f"axis must be 0 or 1, got {axis}")
    return RgbdSample(
        rgb=np.flip(sample.rgb, axis=axis).copy(),
        raw_depth=np.flip(sample.raw_depth, axis=axis).copy(),
        gt_depth=np.flip(sample.gt_depth, axis=axis).copy(),
        mask=np.flip(sample.mask, axis=axis).copy(),
        intrinsics=intr,
    )


def rotate90_sample(sample: RgbdSample, k: int = 1) -> RgbdSample:
    """Rotate all planes counter-clockwise by k * 90 degrees."""
    k = k % 4
    out = sample
    for _ in range(k):
        intr = out.intrinsics
        # np.rot90: new(row, col) = old(col, W-1-row)  =>  u' = v, v' = W-1-u
        new_intr = CameraIntrinsics(fx=intr.fy, fy=intr.fx,
                                    cx=intr.cy, cy=out.width - 1 - intr.cx)
        out = RgbdSample(
            rgb=np.rot90(out.rgb).copy(),
            raw_depth=np.rot90(out.raw_depth).copy(),
            gt_depth=np.rot90(out.gt_depth).copy(),
            mask=np.rot90(out.mask).copy(),
            intrinsics=new_intr,
        )
    return out


def augment(sample: RgbdSample, rng: np.random.Generator) -> RgbdSample:
    """Random flips and a 90-degree-multiple rotation, planes kept aligned."""
    out = sample
    if rng.random() < 0.5:
        out = flip_sample(out, axis=1)
    if rng.random() < 0.5:
        out = flip_sample(out, axis=0)
    out = rotate90_sample(out, int(rng.integers(4)))
    return out


# ---------------------------------------------------------------------------
# disk layout

def save_depth_png(path, depth_m: np.ndarray) -> None:
    """Store metres as 16-bit millimetre PNG (clipped to the uint16 range)."""
    mm = np.clip(np.round(depth_m.astype(np.float64) * DEPTH_SCALE), 0, 65535)
    Image.fromarray(mm.astype(np.uint16)).save(path)


def load_depth_png(path) -> np.ndarray:
    """Read a 16-bit millimetre PNG back to float32 metres."""
    return (_load_png(Path(path)).astype(np.float64) / DEPTH_SCALE).astype(np.float32)


def _load_png(path: Path) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(path)
    return np.asarray(Image.open(path))


def write_sample(sample: RgbdSample, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    Image.fromarray(sample.rgb).save(directory / "rgb.png")
    save_depth_png(directory / "depth_raw.png", sample.raw_depth)
    save_depth_png(directory / "depth_gt.png", sample.gt_depth)
    Image.fromarray((sample.mask.astype(np.uint8) * 255)).save(directory / "mask.png")
    intr = sample.intrinsics
    (directory / "intrinsics.txt").write_text(
        f"{intr.fx} {intr.fy} {intr.cx} {intr.cy}\n")


def load_sample(directory) -> RgbdSample:
    directory = Path(directory)
    rgb = _load_png(directory / "rgb.png")
    raw = _load_png(directory / "depth_raw.png")
    gt = _load_png(directory / "depth_gt.png")
    mask = _load_png(directory / "mask.png")
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise FormatError(f"rgb.png must be 8-bit RGB, got shape {rgb.shape}")
    extents = {rgb.shape[:2], raw.shape, gt.shape, mask.shape[:2]}
    if len(extents) != 1:
        raise FormatError(f"plane extents disagree in {directory}: {extents}")
    try:
        parts = (directory / "intrinsics.txt").read_text().split()
        fx, fy, cx, cy = (float(p) for p in parts)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise FormatError(f"unreadable intrinsics in {directory}: {exc}") from exc
    return RgbdSample(
        rgb=rgb.astype(np.uint8),
        raw_depth=(raw.astype(np.float64) / DEPTH_SCALE).astype(np.float32),
        gt_depth=(gt.astype(np.float64) / DEPTH_SCALE).astype(np.float32),
        mask=(np.asarray(mask) >= 128).astype(np.uint8),
        intrinsics=CameraIntrinsics(fx, fy, cx, cy),
    ).validate()


def write_manifest(root, names: Sequence[str]) -> None:
    Path(root, MANIFEST_NAME).write_text("".join(f"{n}\n" for n in names))


def load_dataset(root) -> List[RgbdSample]:
    """Load every sample listed in the manifest (or every sample directory)."""
    root = Path(root)
    manifest = root / MANIFEST_NAME
    if manifest.exists():
        names = [ln.strip() for ln in manifest.read_text().splitlines() if ln.strip()]
    else:
        names = sorted(p.name for p in root.iterdir()
                       if p.is_dir() and (p / "rgb.png").exists())
    return [load_sample(root / n) for n in names]
