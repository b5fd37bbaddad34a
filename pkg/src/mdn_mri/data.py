"""Image corpora: PGM/CIMG ingestion, rotation augmentation, synthetic
phantoms and bicubic resampling."""

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kspace import FormatError, load_cimg


class DatasetError(ValueError):
    pass


# --- portable graymap -------------------------------------------------------

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_pgm(path):
    """Read a binary (P5) or ASCII (P2) graymap; returns (uint array, maxval)."""
    raw = Path(path).read_bytes()
    pos = 0
    tokens = []
    while len(tokens) < 4:
        m = _PGM_TOKEN.match(raw, pos)
        if m is None:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic = tokens[0]
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: maxval {maxval} out of range")
    if magic == b"P5":
        pos += 1  # single whitespace byte before the raster
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = w * h * dtype.itemsize
        if len(raw) - pos < need:
            raise FormatError(f"{path}: truncated PGM raster")
        data = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos)
    elif magic == b"P2":
        data = np.array(raw[pos:].split(), dtype=np.int64)
        if data.size < w * h:
            raise FormatError(f"{path}: truncated PGM raster")
        data = data[:w * h]
    else:
        raise FormatError(f"{path}: unsupported magic {magic!r}")
    return data.reshape(h, w).astype(np.uint16 if maxval > 255 else np.uint8), maxval


def write_pgm(path, image, bits=8):
    """Write a [0, 1] image as a binary PGM with 8- or 16-bit depth."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    maxval = 255 if bits == 8 else 65535
    q = np.rint(image * maxval)
    data = q.astype(np.uint8) if bits == 8 else q.astype(">u2")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode())
        fh.write(data.tobytes())


# --- datasets ---------------------------------------------------------------

@dataclass
class Dataset:
    items: list
    paths: list = field(default_factory=list)
    rotations: tuple = ()

    def __len__(self):
        return len(self.items)

    @property
    def shape(self):
        return self.items[0].shape if self.items else None

    @property
    def is_complex(self):
        return any(np.iscomplexobj(x) for x in self.items)

    def digest(self):
        """SHA-256 over item shapes and bytes, for run manifests."""
        h = hashlib.sha256()
        for item in self.items:
            h.update(str(item.shape).encode())
            h.update(np.ascontiguousarray(item).tobytes())
        return h.hexdigest()


def _load_item(path):
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        data, _ = read_pgm(path)
        img = data.astype(np.float64)
        peak = img.max()
    elif suffix == ".cimg":
        img = load_cimg(path)
        if not np.any(img.imag):
            img = img.real
        peak = np.abs(img).max()
    else:
        raise DatasetError(f"{path}: unsupported image format {suffix!r}")
    return img / peak if peak > 0 else img


def load_dataset(directory, pattern="*"):
    """Load every ``.pgm``/``.cimg`` under ``directory`` matching ``pattern``.

    Items are max-normalized per image and ordered by sorted path.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"{directory}: not a readable directory")
    paths = sorted(p for p in directory.glob(pattern)
                   if p.is_file() and p.suffix.lower() in (".pgm", ".cimg"))
    if not paths:
        raise DatasetError(f"{directory}: no images found")
    items = []
    for p in paths:
        try:
            items.append(_load_item(p))
        except (OSError, FormatError) as exc:
            raise DatasetError(f"{p}: {exc}") from exc
        if items[-1].shape != items[0].shape:
            raise DatasetError(f"{p}: dimensions {items[-1].shape} differ from "
                               f"{paths[0]} {items[0].shape}")
    return Dataset(items=items, paths=[str(p) for p in paths])


def augment_rotations(ds, angles):
    """Return a new dataset with each item followed by its rotations.

    ``angles`` are degrees from {90, 180, 270}.
    """
    angles = tuple(angles)
    for a in angles:
        if a not in (90, 180, 270):
            raise ValueError(f"rotation angles must be 90, 180 or 270, got {a}")
    if angles and ds.items and ds.shape[0] != ds.shape[1] and any(a != 180 for a in angles):
        raise DatasetError("quarter-turn rotations need square images")
    items, paths = [], []
    for item, path in zip(ds.items, ds.paths or [""] * len(ds.items)):
        items.append(item)
        paths.append(path)
        for a in angles:
            items.append(np.rot90(item, a // 90).copy())
            paths.append(f"{path}@rot{a}")
    return Dataset(items=items, paths=paths, rotations=ds.rotations + angles)


# --- synthetic phantoms -----------------------------------------------------

# Modified Shepp-Logan: (intensity, semi-axis a, semi-axis b, x0, y0, angle deg)
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0),
)


def _ellipse(yy, xx, a, b, x0, y0, angle):
    t = np.deg2rad(angle)
    xr = (xx - x0) * np.cos(t) + (yy - y0) * np.sin(t)
    yr = -(xx - x0) * np.sin(t) + (yy - y0) * np.cos(t)
    return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


def phantom(size, seed=None, extra_ellipses=6):
    """Shepp-Logan-style phantom in [0, 1] with max exactly 1.

    ``seed=None`` gives the unperturbed modified Shepp-Logan phantom; any
    integer seed jitters each ellipse and adds ``extra_ellipses`` random
    small features so different seeds give different anatomy.
    """
    lin = (np.arange(size) + 0.5) / size * 2 - 1
    yy, xx = np.meshgrid(-lin, lin, indexing="ij")
    img = np.zeros((size, size))
    rng = np.random.default_rng(seed) if seed is not None else None
    for inten, a, b, x0, y0, ang in _SHEPP_LOGAN:
        if rng is not None:
            inten *= rng.uniform(0.8, 1.2)
            a *= rng.uniform(0.9, 1.1)
            b *= rng.uniform(0.9, 1.1)
            x0 += rng.normal(0, 0.02)
            y0 += rng.normal(0, 0.02)
            ang += rng.normal(0, 5)
        img[_ellipse(yy, xx, a, b, x0, y0, ang)] += inten
    if rng is not None:
        for _ in range(extra_ellipses):
            r = rng.uniform(0.0, 0.45)
            phi = rng.uniform(0, 2 * np.pi)
            img[_ellipse(yy, xx, rng.uniform(0.03, 0.15), rng.uniform(0.03, 0.15),
                         r * np.cos(phi), r * np.sin(phi), rng.uniform(0, 180))] += \
                rng.uniform(-0.15, 0.3)
    img = np.clip(img, 0, None)
    return img / img.max()


def phantom_dataset(count, size, seed=0):
    """``count`` distinct seeded phantoms as a :class:`Dataset`."""
    items = [phantom(size, seed=seed * 1000 + i) for i in range(count)]
    return Dataset(items=items, paths=[f"phantom:{seed}:{i}" for i in range(count)])


# --- bicubic resampling -----------------------------------------------------

def _cubic(x, a=-0.5):
    x = np.abs(x)
    return np.where(
        x <= 1, (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1,
        np.where(x < 2, a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a, 0.0))


def _resize_matrix(n_in, n_out):
    # Pixel-center mapping; kernel widened by 1/scale when shrinking
    # (antialiasing); replicate borders; each row sums to one.
    scale = n_out / n_in
    kscale = min(scale, 1.0)
    width = 4.0 / kscale
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    left = np.floor(centers - width / 2).astype(int)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    weights = kscale * _cubic((centers[:, None] - idx) * kscale)
    weights /= weights.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, n_in - 1)
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.repeat(np.arange(n_out), taps), idx.ravel()), weights.ravel())
    return m


def resize_bicubic(image, shape):
    """Separable bicubic resize of a 2-D image to ``shape`` (float64)."""
    image = np.asarray(image, dtype=np.float64)
    ry = _resize_matrix(image.shape[0], shape[0])
    rx = _resize_matrix(image.shape[1], shape[1])
    # Rows sum to one, so resampling about an offset is equivalent and keeps
    # constant images exactly constant.
    offset = image.flat[0]
    return offset + ry @ (image - offset) @ rx.T


def bicubic_degrade(image, scale):
    """Downsample by ``scale`` then upsample back to the original size."""
    h, w = image.shape
    small = resize_bicubic(image, (int(np.ceil(h / scale)), int(np.ceil(w / scale))))
    return resize_bicubic(small, (h, w))
