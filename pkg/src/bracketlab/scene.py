"""Procedural dynamic HDR scenes.

A scene is a static background radiance field plus sprites that translate
along piecewise-linear trajectories over the normalised frame interval
u in [0, 1].  Radiance is linear, in electrons per second.  Because sprites
are composited analytically at any u, sub-frame sampling, ground-truth motion
fields and the importance mask are all exact, with no learned interpolation,
flow or saliency in the loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpecError

DEFAULT_FRAME_INTERVAL = 1.0 / 30.0

# Generated scenes draw their peak radiance from this log2 range (e-/s).
# Kept to a two-stop spread so preview appearance identifies exposure.
_LOG2_PEAK_RANGE = (16.5, 18.5)
_HIGHLIGHT_WINDOW = 16


@dataclass(frozen=True)
class SceneSpec:
    """Parameters that fully determine a generated scene."""

    width: int = 128
    height: int = 128
    dynamic_range_stops: float = 12.0
    object_count: int = 2
    motion_magnitude: float = 0.0
    static_flag: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.width < 16 or self.height < 16:
            raise InvalidSpecError("width and height must be at least 16")
        if not 4.0 <= self.dynamic_range_stops <= 20.0:
            raise InvalidSpecError("dynamic_range_stops must lie in [4, 20]")
        if self.object_count < 0:
            raise InvalidSpecError("object_count must be non-negative")
        if self.motion_magnitude < 0:
            raise InvalidSpecError("motion_magnitude must be non-negative")
        if self.motion_magnitude > 0.75 * min(self.width, self.height):
            raise InvalidSpecError("motion_magnitude too large for the frame")


@dataclass(frozen=True)
class Sprite:
    """A radiance patch translating along a piecewise-linear path.

    ``times`` are strictly increasing waypoint times covering [0, 1];
    ``points`` are the (y, x) positions of the patch origin at those times.
    """

    patch: np.ndarray
    times: np.ndarray
    points: np.ndarray

    def position(self, u: float) -> tuple[float, float]:
        y = float(np.interp(u, self.times, self.points[:, 0]))
        x = float(np.interp(u, self.times, self.points[:, 1]))
        return y, x

    @property
    def is_static(self) -> bool:
        return bool(np.all(self.points == self.points[0]))


@dataclass(frozen=True)
class RadianceScene:
    """Immutable scene: background field, sprites, importance mask."""

    spec: SceneSpec
    background: np.ndarray
    sprites: tuple[Sprite, ...]
    importance: np.ndarray
    frame_interval: float = DEFAULT_FRAME_INTERVAL
    stats: dict = field(default_factory=dict)

    @property
    def is_static(self) -> bool:
        return all(s.is_static for s in self.sprites)


def _splat_add(target: np.ndarray, patch: np.ndarray, y: float, x: float,
               scale: float = 1.0) -> None:
    """Add ``patch`` into ``target`` at sub-pixel position via bilinear split."""
    h, w = patch.shape
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    fy, fx = y - y0, x - x0
    weights = ((1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx)
    offsets = ((0, 0), (0, 1), (1, 0), (1, 1))
    H, W = target.shape
    for wgt, (dy, dx) in zip(weights, offsets):
        if wgt == 0.0:
            continue
        ty, tx = y0 + dy, x0 + dx
        sy0, sx0 = max(0, -ty), max(0, -tx)
        sy1 = min(h, H - ty)
        sx1 = min(w, W - tx)
        if sy1 <= sy0 or sx1 <= sx0:
            continue
        target[ty + sy0:ty + sy1, tx + sx0:tx + sx1] += (
            wgt * scale * patch[sy0:sy1, sx0:sx1]
        )


def sample_radiance(scene: RadianceScene, u: float) -> np.ndarray:
    """Exact composite radiance frame at normalised time u."""
    if u < -1e-12 or u > 1.0 + 1e-12:
        raise ValueError(f"u={u} outside [0, 1]")
    u = min(max(u, 0.0), 1.0)
    frame = scene.background.copy()
    for sprite in scene.sprites:
        y, x = sprite.position(u)
        _splat_add(frame, sprite.patch, y, x)
    return frame


def sample_radiance_mean(scene: RadianceScene, u_samples: np.ndarray) -> np.ndarray:
    """Mean of exact radiance frames over the given sample times.

    Equivalent to averaging :func:`sample_radiance` over ``u_samples`` but
    computed as one impulse-cloud convolution per sprite, so the cost is
    nearly independent of the sample count.
    """
    from scipy.signal import fftconvolve

    frame = scene.background.copy()
    m = len(u_samples)
    for sprite in scene.sprites:
        ys = np.interp(u_samples, sprite.times, sprite.points[:, 0])
        xs = np.interp(u_samples, sprite.times, sprite.points[:, 1])
        if np.ptp(ys) == 0.0 and np.ptp(xs) == 0.0:
            _splat_add(frame, sprite.patch, float(ys[0]), float(xs[0]))
            continue
        y0 = np.floor(ys).astype(int)
        x0 = np.floor(xs).astype(int)
        fy = ys - y0
        fx = xs - x0
        oy, ox = y0.min(), x0.min()
        canvas = np.zeros((y0.max() - oy + 2, x0.max() - ox + 2))
        w = 1.0 / m
        np.add.at(canvas, (y0 - oy, x0 - ox), w * (1 - fy) * (1 - fx))
        np.add.at(canvas, (y0 - oy, x0 - ox + 1), w * (1 - fy) * fx)
        np.add.at(canvas, (y0 - oy + 1, x0 - ox), w * fy * (1 - fx))
        np.add.at(canvas, (y0 - oy + 1, x0 - ox + 1), w * fy * fx)
        smear = np.maximum(fftconvolve(canvas, sprite.patch), 0.0)
        H, W = frame.shape
        h, w_ = smear.shape
        ty0, tx0 = max(0, oy), max(0, ox)
        sy0, sx0 = ty0 - oy, tx0 - ox
        ty1 = min(H, oy + h)
        tx1 = min(W, ox + w_)
        if ty1 > ty0 and tx1 > tx0:
            frame[ty0:ty1, tx0:tx1] += smear[sy0:sy0 + (ty1 - ty0),
                                             sx0:sx0 + (tx1 - tx0)]
    return frame


def ground_truth_hdr(scene: RadianceScene, u: float) -> np.ndarray:
    """Reference radiance for reward evaluation; alias of sample_radiance."""
    return sample_radiance(scene, u)


def motion_field(scene: RadianceScene, u0: float, u1: float) -> np.ndarray:
    """Per-pixel (dy, dx) displacement of object pixels between u0 and u1.

    Background pixels carry zero.  Pixels covered by several sprites take the
    displacement of the last sprite in scene order.
    """
    if not (0.0 - 1e-12 <= u0 <= u1 <= 1.0 + 1e-12):
        raise ValueError(f"need 0 <= u0 <= u1 <= 1, got ({u0}, {u1})")
    H, W = scene.background.shape
    flow = np.zeros((H, W, 2))
    if u0 == u1 or scene.is_static:
        return flow
    coverage = np.zeros((H, W))
    ones_cache: dict[tuple[int, int], np.ndarray] = {}
    for sprite in scene.sprites:
        y0, x0 = sprite.position(u0)
        y1, x1 = sprite.position(u1)
        dy, dx = y1 - y0, x1 - x0
        key = sprite.patch.shape
        ones = ones_cache.setdefault(key, np.ones(key))
        coverage[:] = 0.0
        _splat_add(coverage, ones, y0, x0)
        mask = coverage > 0.0
        flow[mask, 0] = dy
        flow[mask, 1] = dx
    return flow


def importance_mask(scene: RadianceScene) -> np.ndarray:
    """Authored per-pixel weights in [0, 1] standing in for saliency."""
    return scene.importance


def _smooth_unit_field(rng: np.random.Generator, height: int, width: int,
                       cells: int = 5) -> np.ndarray:
    """Smooth random field, min-max normalised to hit exactly 0 and 1."""
    coarse = rng.uniform(0.0, 1.0, size=(cells, cells))
    ys = np.linspace(0.0, cells - 1.0, height)
    xs = np.linspace(0.0, cells - 1.0, width)
    y0 = np.clip(ys.astype(int), 0, cells - 2)
    x0 = np.clip(xs.astype(int), 0, cells - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    c00 = coarse[np.ix_(y0, x0)]
    c01 = coarse[np.ix_(y0, x0 + 1)]
    c10 = coarse[np.ix_(y0 + 1, x0)]
    c11 = coarse[np.ix_(y0 + 1, x0 + 1)]
    f = (c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx
         + c10 * fy * (1 - fx) + c11 * fy * fx)
    f -= f.min()
    peak = f.max()
    if peak > 0:
        f /= peak
    return f


def _make_patch(rng: np.random.Generator, amplitude: float) -> np.ndarray:
    """Soft-edged rectangular radiance patch."""
    h = int(rng.integers(10, 23))
    w = int(rng.integers(10, 23))
    taper = 2
    ramp_y = np.minimum(np.minimum(np.arange(h) + 1, h - np.arange(h)) / taper, 1.0)
    ramp_x = np.minimum(np.minimum(np.arange(w) + 1, w - np.arange(w)) / taper, 1.0)
    return amplitude * np.outer(ramp_y, ramp_x)


def _make_trajectory(rng: np.random.Generator, height: int, width: int,
                     patch_shape: tuple[int, int],
                     displacement: float) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-linear waypoints whose largest offset from start is exact."""
    h, w = patch_shape
    margin = 2.0
    if displacement <= 0.0:
        y = rng.uniform(margin, height - h - margin)
        x = rng.uniform(margin, width - w - margin)
        return np.array([0.0, 1.0]), np.array([[y, x], [y, x]])
    n_seg = int(rng.integers(1, 4))
    angles = rng.uniform(0.0, 2 * np.pi, size=n_seg)
    steps = rng.uniform(0.4, 1.0, size=n_seg)[:, None] * np.stack(
        [np.sin(angles), np.cos(angles)], axis=1
    )
    offsets = np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)])
    # Distance to the start is convex along each segment, so the maximum
    # offset is attained at a waypoint; scale it to the target displacement.
    radii = np.linalg.norm(offsets, axis=1)
    offsets *= displacement / radii.max()
    lo = margin - offsets.min(axis=0)
    hi = np.array([height - h - margin, width - w - margin]) - offsets.max(axis=0)
    if np.any(hi < lo):
        raise InvalidSpecError("motion does not fit inside the frame")
    start = np.array([rng.uniform(lo[0], hi[0]), rng.uniform(lo[1], hi[1])])
    times = np.concatenate([[0.0], np.sort(rng.uniform(0.15, 0.85, size=n_seg - 1)), [1.0]])
    return times, start[None, :] + offsets


def _build_scene(spec: SceneSpec, rng: np.random.Generator,
                 frame_interval: float) -> RadianceScene:
    H, W = spec.height, spec.width
    log2_peak = rng.uniform(*_LOG2_PEAK_RANGE)
    phi_max = 2.0 ** log2_peak
    phi_min = phi_max / 2.0 ** spec.dynamic_range_stops
    phi_cap = phi_max / 4.0

    f = _smooth_unit_field(rng, H, W)
    background = phi_min * (phi_cap / phi_min) ** f

    # Compactly supported highlight lifting the brightest spot to phi_max.
    py, px = np.unravel_index(int(np.argmax(f)), f.shape)
    my, mx = np.unravel_index(int(np.argmin(f)), f.shape)
    radius = float(rng.uniform(4.0, 8.0))
    cutoff = 3.0 * radius
    yy, xx = np.mgrid[0:H, 0:W]
    d2 = (yy - py) ** 2.0 + (xx - px) ** 2.0
    sigma = radius / 2.0
    bump = np.exp(-d2 / (2 * sigma * sigma)) - np.exp(-cutoff ** 2 / (2 * sigma * sigma))
    bump = np.clip(bump, 0.0, None)
    bump /= bump.max()
    background = background + (phi_max - background[py, px]) * bump
    if (my - py) ** 2 + (mx - px) ** 2 <= cutoff ** 2:
        raise InvalidSpecError("highlight overlaps the darkest point")  # retried

    motion = 0.0 if spec.static_flag else spec.motion_magnitude
    sprites = []
    for k in range(spec.object_count):
        amp = phi_max * rng.uniform(0.05, 0.3)
        patch = _make_patch(rng, amp)
        # The first object carries the full motion magnitude, others less.
        disp = motion if k == 0 else motion * rng.uniform(0.5, 1.0)
        times, points = _make_trajectory(rng, H, W, patch.shape, disp)
        sprites.append(Sprite(patch=patch, times=times, points=points))

    importance = np.zeros((H, W))
    for sprite in sprites:
        h, w = sprite.patch.shape
        for u in np.linspace(0.0, 1.0, 5):
            y, x = sprite.position(u)
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            importance[max(0, y0):y0 + h + 1, max(0, x0):x0 + w + 1] = 1.0
    half = _HIGHLIGHT_WINDOW // 2
    importance[max(0, py - half):py + half, max(0, px - half):px + half] = 1.0

    for arr in (background, importance):
        arr.flags.writeable = False
    for sprite in sprites:
        sprite.patch.flags.writeable = False
        sprite.times.flags.writeable = False
        sprite.points.flags.writeable = False

    scene = RadianceScene(
        spec=spec, background=background, sprites=tuple(sprites),
        importance=importance, frame_interval=frame_interval,
        stats={"phi_max": phi_max, "phi_min": phi_min,
               "highlight": (int(py), int(px))},
    )
    return scene


def realized_dynamic_range(scene: RadianceScene, u: float = 0.0) -> float:
    """log2(max / min positive radiance) of the composited frame at u."""
    frame = sample_radiance(scene, u)
    positive = frame[frame > 0]
    return float(np.log2(positive.max() / positive.min()))


def generate_scene(spec: SceneSpec,
                   frame_interval: float = DEFAULT_FRAME_INTERVAL) -> RadianceScene:
    """Deterministically build the scene described by ``spec``.

    Layouts whose realised dynamic range drifts outside +-1 stop of the spec
    (sprites or the highlight covering the darkest pixel) are re-rolled from
    derived seeds, so the result is still a pure function of the spec.
    """
    spec.validate()
    target = spec.dynamic_range_stops
    for attempt in range(16):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, attempt]))
        try:
            scene = _build_scene(spec, rng, frame_interval)
        except InvalidSpecError:
            continue
        realized = realized_dynamic_range(scene)
        if abs(realized - target) <= 0.9:
            return scene
    raise InvalidSpecError(
        f"could not realise dynamic range {target} stops for seed {spec.seed}"
    )
