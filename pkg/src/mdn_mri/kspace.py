"""Simulated MR acquisition: centered FFTs, sampling masks, zero-filling,
measurement noise and k-space data consistency.

Images are 2-D complex (or real) numpy arrays; k-space grids use a centered
layout with DC at ``(H // 2, W // 2)``. Transforms are orthonormal.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FAMILIES = ("cartesian", "radial", "variable_density")
RATE_TOLERANCE = 0.01


class MaskError(ValueError):
    """The requested sampling rate cannot be met for this family and size."""


class FormatError(ValueError):
    """A mask or CIMG file is malformed."""


def fft2c(image):
    """Orthonormal 2-D DFT with DC shifted to the grid center."""
    image = np.asarray(image)
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(image), norm="ortho"))


def ifft2c(kspace):
    """Inverse of :func:`fft2c`."""
    kspace = np.asarray(kspace)
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(kspace), norm="ortho"))


@dataclass(frozen=True)
class SamplingMask:
    bits: np.ndarray
    family: str
    requested_rate: float
    seed: int

    @property
    def shape(self):
        return self.bits.shape

    @property
    def achieved_rate(self):
        return float(np.count_nonzero(self.bits)) / self.bits.size


def _check_rate(achieved, rate, family, height, width):
    if abs(achieved - rate) > RATE_TOLERANCE:
        raise MaskError(
            f"{family} mask at {height}x{width} cannot reach rate {rate:.4f} "
            f"within {RATE_TOLERANCE} (closest achievable {achieved:.4f})")


def _cartesian(height, width, rate, rng, center_fraction):
    n_rows = int(round(rate * height))
    n_center = max(1, int(round(center_fraction * height)))
    if n_center > n_rows:
        _check_rate(n_center / height, rate, "cartesian", height, width)
        n_rows = n_center
    _check_rate(n_rows / height, rate, "cartesian", height, width)
    start = height // 2 - n_center // 2
    center = np.arange(start, start + n_center)
    rest = np.setdiff1d(np.arange(height), center)
    chosen = rng.choice(rest, size=n_rows - n_center, replace=False)
    rows = np.zeros(height, dtype=bool)
    rows[center] = True
    rows[chosen] = True
    return np.repeat(rows[:, None], width, axis=1)


def _raster_lines(height, width, theta):
    # One pixel per unit step along the dominant axis (8-connected, 1 px wide).
    cy, cx = height // 2, width // 2
    n = max(height, width)
    bits = np.zeros((height, width), dtype=bool)
    for th in np.atleast_1d(theta):
        s, c = np.sin(th), np.cos(th)
        t = np.arange(-n, n + 1) / max(abs(s), abs(c))
        ys = np.rint(cy + s * t).astype(np.int64)
        xs = np.rint(cx + c * t).astype(np.int64)
        keep = (ys >= 0) & (ys < height) & (xs >= 0) & (xs < width)
        bits[ys[keep], xs[keep]] = True
    return bits


def _radial_attempt(height, width, rate, offset, rng):
    # Base: the largest set of equally spaced spokes that stays below the
    # target. Then spokes bisecting the base gaps are added in seeded order
    # until the rate is reached, keeping each coverage increment small.
    def spokes(n):
        return offset * np.pi / n + np.pi * np.arange(n) / n

    n = 1
    while _raster_lines(height, width, spokes(2 * n)).mean() < rate and n < 4 * max(height, width):
        n *= 2
    lo, hi = n, 2 * n
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _raster_lines(height, width, spokes(mid)).mean() < rate:
            lo = mid
        else:
            hi = mid
    base = spokes(lo)
    bits = _raster_lines(height, width, base)
    if bits.mean() >= rate:
        return bits
    extra = base + np.pi / (2 * lo)
    for theta in extra[rng.permutation(lo)]:
        grown = bits | _raster_lines(height, width, np.array([theta]))
        if grown.mean() >= rate:
            if abs(grown.mean() - rate) <= abs(bits.mean() - rate):
                bits = grown
            break
        bits = grown
    return bits


def _radial(height, width, rate, rng, attempts=16):
    # Spoke overlap near DC makes coverage increments uneven on small grids;
    # a fresh seeded offset is tried when one lands outside the tolerance.
    best = None
    for _ in range(attempts):
        bits = _radial_attempt(height, width, rate, rng.random(), rng)
        if best is None or abs(bits.mean() - rate) < abs(best.mean() - rate):
            best = bits
        if abs(best.mean() - rate) <= RATE_TOLERANCE:
            break
    _check_rate(best.mean(), rate, "radial", height, width)
    return best


def _variable_density(height, width, rate, rng, power, center_radius):
    yy, xx = np.indices((height, width))
    r = np.hypot(yy - height // 2, xx - width // 2)
    density = (1 - r / r.max()) ** power
    center = r <= center_radius * min(height, width)
    target = int(round(rate * height * width))
    u = rng.random((height, width))
    bits = center.copy()
    need = target - int(center.sum())
    if need > 0:
        # A pixel is kept when u < scale * density; the scale is chosen as the
        # order statistic of u / density that yields exactly `target` pixels.
        with np.errstate(divide="ignore"):
            thresholds = np.where(center, np.inf, u / density)
        order = np.argsort(thresholds, axis=None, kind="stable")[:need]
        bits.flat[order] = True
    _check_rate(bits.mean(), rate, "variable_density", height, width)
    return bits


def gen_mask(family, height, width, rate, seed, *, center_fraction=0.04,
             vd_power=3.0, center_radius=0.03):
    """Generate a seeded binary k-space sampling mask.

    Parameters
    ----------
    family : {"cartesian", "radial", "variable_density"}
        Full phase-encode rows, spokes through DC, or center-weighted points.
    height, width : int
        Grid size.
    rate : float
        Requested fraction of sampled coefficients, in (0, 1].
    seed : int
        Seed for the pattern's random choices.
    center_fraction : float
        Fraction of central rows always kept by the cartesian family.
    vd_power, center_radius : float
        Variable-density falloff exponent and the radius (as a fraction of
        ``min(height, width)``) of the always-sampled center disc.

    Raises
    ------
    MaskError
        If the achieved rate would miss ``rate`` by more than 0.01.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown mask family {family!r}; expected one of {FAMILIES}")
    if not 0 < rate <= 1:
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    if rate == 1:
        bits = np.ones((height, width), dtype=bool)
    else:
        rng = np.random.default_rng(seed)
        if family == "cartesian":
            bits = _cartesian(height, width, rate, rng, center_fraction)
        elif family == "radial":
            bits = _radial(height, width, rate, rng)
        else:
            bits = _variable_density(height, width, rate, rng, vd_power, center_radius)
    return SamplingMask(bits=bits, family=family, requested_rate=float(rate), seed=int(seed))


def _check_dims(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: dimension mismatch {a.shape} vs {b.shape}")


def undersample(image, mask):
    """Masked centered spectrum: zeros wherever ``mask`` is 0."""
    image = np.asarray(image)
    _check_dims(image, mask.bits, "undersample")
    return np.where(mask.bits, fft2c(image), 0)


def zero_fill(kspace):
    """Zero-filled reconstruction of undersampled k-space."""
    return ifft2c(kspace)


def add_measurement_noise(kspace, v, seed, mask=None):
    """Add complex white Gaussian noise of std ``v`` (per real/imag part) at
    sampled positions.

    Sampled positions come from ``mask`` when given, otherwise from the
    nonzero support of ``kspace``.
    """
    if v < 0:
        raise ValueError("noise std must be nonnegative")
    kspace = np.asarray(kspace)
    if v == 0:
        return kspace.copy()
    support = mask.bits if mask is not None else kspace != 0
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, v, kspace.shape) + 1j * rng.normal(0.0, v, kspace.shape)
    return kspace + np.where(support, noise, 0)


def add_image_noise(image, v, seed):
    """Complex Gaussian noise added directly in the image domain."""
    if v < 0:
        raise ValueError("noise std must be nonnegative")
    image = np.asarray(image, dtype=complex)
    if v == 0:
        return image.copy()
    rng = np.random.default_rng(seed)
    return image + rng.normal(0.0, v, image.shape) + 1j * rng.normal(0.0, v, image.shape)


def data_consistency(x_cnn, kspace, mask, lam=0.0):
    """Blend the network output with measured k-space.

    On sampled positions the coefficient becomes ``(y + lam * X) / (1 + lam)``;
    elsewhere the network coefficient ``X`` is kept. ``lam = 0`` replaces the
    sampled coefficients with the measurements.
    """
    x_cnn = np.asarray(x_cnn)
    _check_dims(x_cnn, mask.bits, "data_consistency")
    return ifft2c(blend_kspace(fft2c(x_cnn), kspace, mask, lam))


def blend_kspace(k_cnn, kspace, mask, lam=0.0):
    """The k-space step of :func:`data_consistency`.

    With ``lam = 0`` the sampled entries of the result are the measurements
    themselves, bit for bit.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    k_cnn = np.asarray(k_cnn)
    kspace = np.asarray(kspace)
    _check_dims(k_cnn, mask.bits, "data_consistency")
    _check_dims(kspace, mask.bits, "data_consistency")
    sampled = mask.bits.astype(bool)
    if lam == 0:
        return np.where(sampled, kspace, k_cnn)
    return np.where(sampled, (kspace + lam * k_cnn) / (1 + lam), k_cnn)


def complex_to_channels(image):
    """(H, W) complex image -> (1, 2, H, W) float array of real/imag parts."""
    image = np.asarray(image)
    return np.stack([image.real, image.imag])[None]


def channels_to_complex(tensor):
    """Inverse of :func:`complex_to_channels`."""
    if tensor.ndim != 4 or tensor.shape[:2] != (1, 2):
        raise ValueError(f"expected shape (1, 2, H, W), got {tensor.shape}")
    return tensor[0, 0] + 1j * tensor[0, 1]


# --- file formats -----------------------------------------------------------

def format_mask(mask):
    h, w = mask.shape
    lines = [f"MASK {mask.family} {h} {w} {mask.requested_rate!r} {mask.seed}"]
    lines += ["".join("1" if b else "0" for b in row) for row in mask.bits]
    return "\n".join(lines) + "\n"


def save_mask(mask, path):
    Path(path).write_text(format_mask(mask))


def load_mask(path):
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty mask file")
    head = lines[0].split()
    if len(head) != 6 or head[0] != "MASK":
        raise FormatError(f"{path}: bad header {lines[0]!r}")
    family = head[1]
    try:
        h, w = int(head[2]), int(head[3])
        rate, seed = float(head[4]), int(head[5])
    except ValueError as exc:
        raise FormatError(f"{path}: bad header {lines[0]!r}") from exc
    rows = lines[1:1 + h]
    if len(rows) != h or any(len(r) != w or set(r) - {"0", "1"} for r in rows):
        raise FormatError(f"{path}: expected {h} rows of {w} '0'/'1' characters")
    bits = np.array([[c == "1" for c in r] for r in rows], dtype=bool)
    return SamplingMask(bits=bits, family=family, requested_rate=rate, seed=seed)


CIMG_MAGIC = b"CIMG"


def save_cimg(image, path):
    """Write a complex image: magic, H, W (uint32 LE), interleaved float32 LE re/im."""
    image = np.asarray(image)
    h, w = image.shape
    data = np.empty((h, w, 2), dtype="<f4")
    data[..., 0] = image.real
    data[..., 1] = image.imag
    with open(path, "wb") as fh:
        fh.write(CIMG_MAGIC + struct.pack("<II", h, w) + data.tobytes())


def load_cimg(path):
    raw = Path(path).read_bytes()
    if raw[:4] != CIMG_MAGIC or len(raw) < 12:
        raise FormatError(f"{path}: not a CIMG file")
    h, w = struct.unpack("<II", raw[4:12])
    expected = 12 + 8 * h * w
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2)
    return data[..., 0].astype(np.float64) + 1j * data[..., 1].astype(np.float64)
