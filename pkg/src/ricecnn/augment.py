"""Stochastic image augmentation.

Each augmented image applies a random subset of eight transforms in a fixed
order, with rotation-type transforms favored (higher inclusion probability).
Geometric transforms sample the source image bilinearly with mirror padding,
so augmented pixels stay inside [0, 1]. A "plan" (the drawn subset plus the
drawn parameters) fully determines an augmented image, which keeps dataset
expansion lazy and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from .rng import RngState

TRANSFORM_ORDER = (
    "small_rotation",
    "right_angle_rotation",
    "distortion",
    "shear",
    "vertical_flip",
    "horizontal_flip",
    "skew",
    "intensity",
)
ROTATION_KINDS = ("small_rotation", "right_angle_rotation")

DEFAULT_PROBABILITIES = {
    "small_rotation": 0.7,
    "right_angle_rotation": 0.7,
    "distortion": 0.3,
    "shear": 0.3,
    "vertical_flip": 0.3,
    "horizontal_flip": 0.3,
    "skew": 0.3,
    "intensity": 0.3,
}

SHEAR_LIMIT = 0.2          # |shear factor|
DISTORTION_LIMIT = 0.05    # control-point displacement, fraction of width
SKEW_LIMIT = 0.10          # corner displacement, fraction of width
INTENSITY_RANGE = (0.7, 1.3)
SKEW_DIRECTIONS = ("top", "bottom", "left", "right")


@dataclass(frozen=True)
class AugmentSpec:
    variants_per_image: int = 10
    probabilities: dict = field(default_factory=lambda: dict(DEFAULT_PROBABILITIES))
    small_rotation_degrees: tuple[float, float] = (-15.0, 15.0)

    def validate(self, require_rotation_bias: bool = False) -> "AugmentSpec":
        """Check field ranges. With require_rotation_bias (used for experiment
        configs), additionally require every rotation-type probability to be
        strictly greater than every non-rotation probability; ad-hoc specs
        (e.g. a single transform forced to probability 1) skip that check."""
        unknown = set(self.probabilities) - set(TRANSFORM_ORDER)
        if unknown:
            raise ValueError(f"unknown transform names: {sorted(unknown)}")
        missing = set(TRANSFORM_ORDER) - set(self.probabilities)
        if missing:
            raise ValueError(f"missing probabilities for: {sorted(missing)}")
        for kind, p in self.probabilities.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability for {kind} out of [0,1]: {p}")
        if require_rotation_bias:
            top_other = max(self.probabilities[k] for k in TRANSFORM_ORDER
                            if k not in ROTATION_KINDS)
            for rk in ROTATION_KINDS:
                if self.probabilities[rk] <= top_other:
                    raise ValueError(
                        "rotation-type probabilities must exceed every "
                        "non-rotation probability")
        if self.variants_per_image < 0:
            raise ValueError("variants_per_image must be >= 0")
        lo, hi = self.small_rotation_degrees
        if lo > hi:
            raise ValueError("small_rotation_degrees range is inverted")
        return self

    def with_variants(self, n: int) -> "AugmentSpec":
        return dc_replace(self, variants_per_image=n)


def _check_image(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    return img


def _mirror_fold(coord: np.ndarray, size: int) -> np.ndarray:
    """Fold a real coordinate into [0, size-1] by mirror reflection at the
    edges (no edge duplication)."""
    if size == 1:
        return np.zeros_like(coord)
    period = 2.0 * (size - 1)
    c = np.mod(coord, period)
    return np.where(c > size - 1, period - c, c)


def _bilinear_sample(image: np.ndarray, src_y: np.ndarray, src_x: np.ndarray) -> np.ndarray:
    """Sample image at real-valued (src_y, src_x) maps with mirror padding."""
    h, w = image.shape[:2]
    y = _mirror_fold(src_y, h)
    x = _mirror_fold(src_x, w)
    y0 = np.floor(y).astype(np.int64)
    x0 = np.floor(x).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (y - y0)[..., None]
    fx = (x - x0)[..., None]
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _dest_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    return yy, xx


def _rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    h, w = image.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(degrees)
    cos, sin = np.cos(theta), np.sin(theta)
    yy, xx = _dest_grid(h, w)
    dy, dx = yy - cy, xx - cx
    # inverse map: rotate destination offsets by -theta
    src_y = cy + cos * dy - sin * dx
    src_x = cx + sin * dy + cos * dx
    return _bilinear_sample(image, src_y, src_x)


def _shear(image: np.ndarray, factor: float) -> np.ndarray:
    h, w = image.shape[:2]
    cy = (h - 1) / 2.0
    yy, xx = _dest_grid(h, w)
    src_x = xx - factor * (yy - cy)
    return _bilinear_sample(image, yy, src_x)


def _homography_from_corners(dst: np.ndarray, src: np.ndarray) -> np.ndarray:
    """3x3 matrix H with H @ [x, y, 1] ~ src point, from 4 correspondences."""
    a = np.zeros((8, 8))
    rhs = np.zeros(8)
    for i, ((dx, dy), (sx, sy)) in enumerate(zip(dst, src)):
        a[2 * i] = [dx, dy, 1, 0, 0, 0, -dx * sx, -dy * sx]
        a[2 * i + 1] = [0, 0, 0, dx, dy, 1, -dx * sy, -dy * sy]
        rhs[2 * i] = sx
        rhs[2 * i + 1] = sy
    h = np.linalg.solve(a, rhs)
    return np.array([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])


def _skew(image: np.ndarray, direction: str, magnitude: float) -> np.ndarray:
    """Perspective tilt: one image edge is pinched inward by `magnitude`
    pixels at both corners."""
    h, w = image.shape[:2]
    src = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)
    dst = src.copy()
    m = magnitude
    if direction == "top":
        dst[0] += (m, 0)
        dst[1] -= (m, 0)
    elif direction == "bottom":
        dst[3] += (m, 0)
        dst[2] -= (m, 0)
    elif direction == "left":
        dst[0] += (0, m)
        dst[3] -= (0, m)
    elif direction == "right":
        dst[1] += (0, m)
        dst[2] -= (0, m)
    else:
        raise ValueError(f"unknown skew direction {direction!r}")
    hom = _homography_from_corners(dst, src)
    yy, xx = _dest_grid(h, w)
    u = hom[0, 0] * xx + hom[0, 1] * yy + hom[0, 2]
    v = hom[1, 0] * xx + hom[1, 1] * yy + hom[1, 2]
    z = hom[2, 0] * xx + hom[2, 1] * yy + hom[2, 2]
    return _bilinear_sample(image, v / z, u / z)


def _distort(image: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Elastic-style warp from a 4x4 control grid of (dy, dx) offsets,
    bilinearly upsampled to a full displacement field."""
    h, w = image.shape[:2]
    if offsets.shape != (4, 4, 2):
        raise ValueError(f"distortion offsets must be (4, 4, 2), got {offsets.shape}")
    yy, xx = _dest_grid(h, w)
    # position of each pixel in control-grid units
    gy = yy / max(h - 1, 1) * 3.0
    gx = xx / max(w - 1, 1) * 3.0
    dy = _bilinear_sample(offsets[:, :, 0:1], gy, gx)[..., 0]
    dx = _bilinear_sample(offsets[:, :, 1:2], gy, gx)[..., 0]
    return _bilinear_sample(image, yy + dy, xx + dx)


def draw_params(kind: str, spec: AugmentSpec, rng: RngState) -> dict:
    """Draw this transform's parameters from the stream. Size-dependent
    magnitudes (distortion, skew) are stored as fractions of image width so
    a drawn plan applies identically at any resolution."""
    if kind == "small_rotation":
        lo, hi = spec.small_rotation_degrees
        return {"degrees": float(rng.uniform(lo, hi))}
    if kind == "right_angle_rotation":
        return {"quarter_turns": int(rng.integers(1, 4))}
    if kind == "distortion":
        return {"offsets_frac": rng.uniform(-DISTORTION_LIMIT, DISTORTION_LIMIT,
                                            (4, 4, 2)).tolist()}
    if kind == "shear":
        return {"factor": float(rng.uniform(-SHEAR_LIMIT, SHEAR_LIMIT))}
    if kind in ("vertical_flip", "horizontal_flip"):
        return {}
    if kind == "skew":
        return {
            "direction": SKEW_DIRECTIONS[int(rng.integers(0, len(SKEW_DIRECTIONS)))],
            "magnitude_frac": float(rng.uniform(0.0, SKEW_LIMIT)),
        }
    if kind == "intensity":
        return {"factor": float(rng.uniform(*INTENSITY_RANGE))}
    raise ValueError(f"unknown transform kind {kind!r}")


def apply_transform(image: np.ndarray, kind: str, params: dict | None = None,
                    rng: RngState | None = None,
                    spec: AugmentSpec | None = None) -> np.ndarray:
    """Apply one transform. If params is None they are drawn from rng."""
    img = _check_image(image)
    if params is None:
        if rng is None:
            raise ValueError("either params or rng must be given")
        params = draw_params(kind, spec or AugmentSpec(), rng)
    width = img.shape[1]
    if kind == "small_rotation":
        return _rotate(img, params["degrees"])
    if kind == "right_angle_rotation":
        k = int(params["quarter_turns"]) % 4
        if img.shape[0] != img.shape[1] and k % 2 == 1:
            raise ValueError("right-angle rotation needs a square image")
        return np.rot90(img, k=k, axes=(0, 1)).copy()
    if kind == "distortion":
        frac = np.asarray(params["offsets_frac"], dtype=np.float64)
        if np.abs(frac).max() > DISTORTION_LIMIT + 1e-12:
            raise ValueError("distortion displacement out of range")
        return _distort(img, frac * width)
    if kind == "shear":
        f = params["factor"]
        if abs(f) > SHEAR_LIMIT + 1e-12:
            raise ValueError(f"shear factor {f} out of range")
        return _shear(img, f)
    if kind == "vertical_flip":
        return img[::-1, :, :].copy()
    if kind == "horizontal_flip":
        return img[:, ::-1, :].copy()
    if kind == "skew":
        frac = params["magnitude_frac"]
        if not 0.0 <= frac <= SKEW_LIMIT + 1e-12:
            raise ValueError(f"skew magnitude fraction {frac} out of range")
        return _skew(img, params["direction"], frac * width)
    if kind == "intensity":
        f = params["factor"]
        if not INTENSITY_RANGE[0] <= f <= INTENSITY_RANGE[1]:
            raise ValueError(f"intensity factor {f} out of range")
        return np.clip(img * f, 0.0, 1.0)
    raise ValueError(f"unknown transform kind {kind!r}")


def draw_plan(spec: AugmentSpec, rng: RngState) -> list[tuple[str, dict]]:
    """Independently include each transform with its configured probability,
    in the fixed TRANSFORM_ORDER, drawing fresh parameters for each."""
    plan: list[tuple[str, dict]] = []
    for kind in TRANSFORM_ORDER:
        if rng.random() < spec.probabilities[kind]:
            plan.append((kind, draw_params(kind, spec, rng)))
    return plan


def apply_plan(image: np.ndarray, plan: list[tuple[str, dict]]) -> np.ndarray:
    img = _check_image(image)
    for kind, params in plan:
        img = apply_transform(img, kind, params)
    return img


def augment_one(image: np.ndarray, spec: AugmentSpec, rng: RngState) -> np.ndarray:
    img = _check_image(image)
    return apply_plan(img, draw_plan(spec, rng))


def resize(image: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers and edge clamping; aspect
    ratio is not preserved. Same-size inputs are returned bit-exactly."""
    img = np.asarray(image, dtype=np.float64)
    if target_h <= 0 or target_w <= 0:
        raise ValueError("resize targets must be positive")
    h, w = img.shape[:2]
    if (h, w) == (target_h, target_w):
        return img.copy()
    ys = (np.arange(target_h) + 0.5) * (h / target_h) - 0.5
    xs = (np.arange(target_w) + 0.5) * (w / target_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1)
    xs = np.clip(xs, 0.0, w - 1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return _bilinear_sample(img, yy, xx)


def expand_dataset(samples: list, spec: AugmentSpec, rng: RngState) -> list:
    """Originals plus `variants_per_image` augmented variants per original.

    Variant plans are drawn from per-(sample, variant) derived streams, so
    the expansion is deterministic and order-independent. Variant pixels are
    materialized lazily from the stored plan.
    """
    from .dataset import Sample  # local import to avoid a cycle

    spec.validate()
    out: list = []
    for i, sample in enumerate(samples):
        out.append(sample)
        stream = rng.derive(f"augment/{i}")
        for j in range(spec.variants_per_image):
            plan = draw_plan(spec, stream.derive(f"variant/{j}"))
            out.append(Sample(
                id=f"{sample.id}__aug{j}",
                symptom=sample.symptom,
                parent=sample.parent,
                source=sample,
                plan=plan,
            ))
    return out
