"""Image quality metrics: PSNR, SSIM, PSNR spread and absolute error maps."""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d


def _as_real_pair(x, ref, two_channel=False):
    x = np.asarray(x)
    ref = np.asarray(ref)
    if x.shape != ref.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {ref.shape}")
    if np.iscomplexobj(x) or np.iscomplexobj(ref):
        if two_channel:
            x = np.stack([np.real(x), np.imag(x)])
            ref = np.stack([np.real(ref), np.imag(ref)])
        else:
            x, ref = np.abs(x), np.abs(ref)
    return x.astype(np.float64), ref.astype(np.float64)


def psnr(x, ref, max_val=1.0, two_channel=False):
    """Peak signal-to-noise ratio in dB.

    Complex inputs are compared by magnitude unless ``two_channel`` is set,
    in which case real and imaginary parts count as separate pixels.
    Identical images give ``math.inf``.
    """
    if max_val <= 0:
        raise ValueError("max_val must be positive")
    x, ref = _as_real_pair(x, ref, two_channel)
    return psnr_from_mse(float(np.mean((x - ref) ** 2)), max_val)


def psnr_from_mse(mse, max_val=1.0):
    """``10 log10(max_val**2 / mse)``; ``math.inf`` for zero error."""
    if mse < 0 or max_val <= 0:
        raise ValueError("mse must be nonnegative and max_val positive")
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(max_val ** 2 / mse)


def gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(x, ref, max_val=1.0, win_size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean structural similarity over all fully contained Gaussian windows."""
    x, ref = _as_real_pair(x, ref)
    if x.ndim != 2:
        raise ValueError("ssim expects 2-D images")
    if min(x.shape) < win_size:
        raise ValueError(f"image {x.shape} smaller than the {win_size}x{win_size} window")
    win = gaussian_window(win_size, sigma)
    c1 = (k1 * max_val) ** 2
    c2 = (k2 * max_val) ** 2

    def filt(a):
        return convolve2d(a, win[::-1, ::-1], mode="valid")

    mu_x, mu_y = filt(x), filt(ref)
    sxx = filt(x * x) - mu_x * mu_x
    syy = filt(ref * ref) - mu_y * mu_y
    sxy = filt(x * ref) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def psnr_std(values):
    """Population standard deviation of per-image PSNR values (dB)."""
    values = [v.psnr if isinstance(v, ImageQuality) else v for v in values]
    if len(values) < 2:
        raise ValueError("need at least two PSNR values")
    if any(math.isinf(v) for v in values):
        raise ValueError("infinite PSNR entry present")
    return float(np.std(np.asarray(values, dtype=np.float64)))


def error_map(x, ref):
    """Per-pixel absolute error (magnitude of the difference for complex data)."""
    x = np.asarray(x)
    ref = np.asarray(ref)
    if x.shape != ref.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {ref.shape}")
    return np.abs(x - ref)


def write_error_map(path, emap):
    """Write ``emap`` as an 8-bit PGM scaled by its maximum.

    The scale factor goes to ``<path>.txt`` so absolute errors can be
    recovered as ``pixel / 255 * scale``. Returns the scale.
    """
    from .data import write_pgm

    path = Path(path)
    scale = float(emap.max())
    norm = emap / scale if scale > 0 else np.zeros_like(emap)
    write_pgm(path, norm, bits=8)
    path.with_name(path.name + ".txt").write_text(f"normalization {scale!r}\n")
    return scale


@dataclass(frozen=True)
class ImageQuality:
    image_id: str
    psnr: float
    ssim: float


@dataclass
class QualityReport:
    """Per-image PSNR/SSIM plus aggregates, tagged with the experiment cell."""

    entries: list = field(default_factory=list)
    variant: str = ""
    mask: str = ""
    rate: float = float("nan")
    seed: int = 0

    def add(self, image_id, recon, ref, max_val=1.0):
        entry = ImageQuality(str(image_id), psnr(recon, ref, max_val), ssim(recon, ref, max_val))
        self.entries.append(entry)
        return entry

    @property
    def finite_psnrs(self):
        return [e.psnr for e in self.entries if not math.isinf(e.psnr)]

    @property
    def excluded(self):
        """Number of infinite-PSNR entries left out of the PSNR aggregates."""
        return len(self.entries) - len(self.finite_psnrs)

    @property
    def mean_psnr(self):
        vals = self.finite_psnrs
        return float(np.mean(vals)) if vals else math.inf

    @property
    def mean_ssim(self):
        return float(np.mean([e.ssim for e in self.entries]))

    @property
    def psnr_std(self):
        vals = self.finite_psnrs
        return psnr_std(vals) if len(vals) >= 2 else 0.0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["image_id", "variant", "mask", "rate", "psnr_db", "ssim"])
            for e in self.entries:
                w.writerow([e.image_id, self.variant, self.mask, self.rate,
                            repr(e.psnr), repr(e.ssim)])
            w.writerow([])
            w.writerow(["# mean_psnr_db", repr(self.mean_psnr)])
            w.writerow(["# mean_ssim", repr(self.mean_ssim)])
            w.writerow(["# psnr_std_db", repr(self.psnr_std)])
            w.writerow(["# excluded_infinite", self.excluded])

    @classmethod
    def read_csv(cls, path):
        report = cls()
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("#") or row[0] == "image_id":
                    continue
                image_id, variant, mask, rate, p, s = row
                report.variant, report.mask, report.rate = variant, mask, float(rate)
                report.entries.append(ImageQuality(image_id, float(p), float(s)))
        return report
