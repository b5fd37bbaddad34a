"""Task-pair construction and the training loop."""

import csv
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import kspace
from .core.ops import mse_loss
from .core.optim import OptimizerConfig, adam_step, step_lr
from .data import bicubic_degrade
from .metrics import QualityReport
from .model import NonFiniteError

TASK_KINDS = ("csmri", "csmri_noisy", "superres")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    """What degradation maps a clean image to a network input.

    Only the fields of ``kind`` may be set: ``mask`` for the CS-MRI kinds,
    ``noise_v`` (and ``noise_domain``) for ``csmri_noisy``, ``scale`` for
    ``superres``.
    """

    kind: str
    mask: kspace.SamplingMask = None
    noise_v: float = None
    scale: int = None
    noise_domain: str = "kspace"

    def __post_init__(self):
        kind = self.kind.replace("-", "_")
        object.__setattr__(self, "kind", kind)
        if kind not in TASK_KINDS:
            raise ValueError(f"unknown task {self.kind!r}; expected one of {TASK_KINDS}")
        if kind in ("csmri", "csmri_noisy"):
            if self.mask is None:
                raise ValueError(f"{kind} needs a sampling mask")
            if self.scale is not None:
                raise ValueError(f"{kind} takes no scale")
        if kind == "csmri" and self.noise_v is not None:
            raise ValueError("csmri takes no noise level; use csmri_noisy")
        if kind == "csmri_noisy":
            if self.noise_v is None or self.noise_v < 0:
                raise ValueError("csmri_noisy needs a nonnegative noise_v")
            if self.noise_domain not in ("kspace", "image"):
                raise ValueError("noise_domain must be 'kspace' or 'image'")
        if kind == "superres":
            if self.scale not in (2, 3, 4):
                raise ValueError("superres scale must be 2, 3 or 4")
            if self.mask is not None or self.noise_v is not None:
                raise ValueError("superres takes neither mask nor noise level")

    def describe(self):
        d = {"kind": self.kind}
        if self.mask is not None:
            d.update(mask_family=self.mask.family, mask_rate=self.mask.requested_rate,
                     mask_seed=self.mask.seed, mask_shape=list(self.mask.shape))
        if self.noise_v is not None:
            d.update(noise_v=self.noise_v, noise_domain=self.noise_domain)
        if self.scale is not None:
            d["scale"] = self.scale
        return d


def to_tensor(image, complex_data):
    """(H, W) image -> (1, C, H, W) float32 tensor; C = 2 for complex data."""
    if complex_data:
        return kspace.complex_to_channels(image).astype(np.float32)
    return np.asarray(np.real(image), dtype=np.float32)[None, None]


def from_tensor(tensor, complex_data):
    if complex_data:
        return kspace.channels_to_complex(tensor.astype(np.float64))
    return tensor[0, 0].astype(np.float64)


def degrade(image, task, seed=0):
    """The degraded image for ``task`` (complex for CS-MRI kinds)."""
    image = np.asarray(image)
    if task.kind == "superres":
        if np.iscomplexobj(image):
            return (bicubic_degrade(image.real, task.scale)
                    + 1j * bicubic_degrade(image.imag, task.scale))
        return bicubic_degrade(image, task.scale)
    if image.shape != task.mask.shape:
        raise ValueError(f"image {image.shape} and mask {task.mask.shape} dimensions differ")
    if task.kind == "csmri_noisy" and task.noise_domain == "image":
        image = kspace.add_image_noise(image, task.noise_v, seed)
    y = kspace.undersample(image, task.mask)
    if task.kind == "csmri_noisy" and task.noise_domain == "kspace":
        y = kspace.add_measurement_noise(y, task.noise_v, seed, task.mask)
    return kspace.zero_fill(y)


def make_pair(image, task, seed=0):
    """Build ``(input, target)`` tensors of shape (1, C, H, W).

    Real images give one-channel tensors, with CS-MRI inputs taken as the
    magnitude of the zero-filled reconstruction. Complex images give
    two-channel (real, imaginary) tensors. ``image`` is never modified.
    """
    complex_data = np.iscomplexobj(image)
    x = degrade(image, task, seed)
    if not complex_data:
        x = np.abs(x) if task.kind != "superres" else x
    return to_tensor(x, complex_data), to_tensor(image, complex_data)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 4
    max_iterations: int = 2000
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 0
    eval_every: int = 0
    crop: int = 0
    fresh_mask: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.log_every < 1:
            raise ValueError("batch_size and log_every must be positive")
        if min(self.max_iterations, self.checkpoint_every, self.eval_every, self.crop) < 0:
            raise ValueError("iteration counts and crop must be nonnegative")

    def to_dict(self):
        return asdict(self)


@dataclass
class LossRecord:
    iteration: int
    lr: float
    train_loss: float
    test_psnr: float = None


@dataclass
class TrainResult:
    model: object
    curve: list
    iterations: int


def write_loss_csv(path, curve):
    with_test = any(r.test_psnr is not None for r in curve)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "lr", "train_loss"] + (["test_psnr"] if with_test else []))
        for r in curve:
            row = [r.iteration, repr(r.lr), repr(r.train_loss)]
            if with_test:
                row.append("" if r.test_psnr is None else repr(r.test_psnr))
            w.writerow(row)


def predict(model, inputs):
    """Inference-mode forward of a (N, C, H, W) batch."""
    return model.forward(inputs, training=False)


def evaluate(model, pairs, ids=None, complex_data=False, batch=4):
    """PSNR/SSIM of model reconstructions against targets."""
    report = QualityReport()
    for start in range(0, len(pairs), batch):
        chunk = pairs[start:start + batch]
        out = predict(model, np.concatenate([p[0] for p in chunk]))
        for k, (_, target) in enumerate(chunk):
            idx = start + k
            report.add(ids[idx] if ids else idx, from_tensor(out[k:k + 1], complex_data),
                       from_tensor(target, complex_data))
    return report


def baseline_report(pairs, ids=None, complex_data=False):
    """PSNR/SSIM of the degraded inputs themselves (zero-filled or bicubic)."""
    report = QualityReport()
    for idx, (inp, target) in enumerate(pairs):
        report.add(ids[idx] if ids else idx, from_tensor(inp, complex_data),
                   from_tensor(target, complex_data))
    return report


def _crop(pair, size, rng):
    inp, target = pair
    h, w = inp.shape[2:]
    if size <= 0 or size >= min(h, w):
        return inp, target
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    return inp[..., y:y + size, x:x + size], target[..., y:y + size, x:x + size]


class _SampleStream:
    # Seeded epoch-wise shuffles; an epoch is one full pass over the data.
    def __init__(self, n, rng):
        self.n = n
        self.rng = rng
        self.order = []
        self.drawn = 0

    def take(self, k):
        out = []
        for _ in range(k):
            if not self.order:
                self.order = list(self.rng.permutation(self.n))
            out.append(int(self.order.pop(0)))
            self.drawn += 1
        return out


def train(model, ds, task, config, *, test_pairs=None, log=None,
          checkpoint_fn=None):
    """Optimize ``model`` in place on pairs built from ``ds``.

    Each iteration draws ``batch_size`` items from a seeded shuffle,
    evaluates the halved mean-squared loss in training mode, backpropagates
    and applies Adam at the step-scheduled learning rate. The loss is logged
    at iteration 0, every ``log_every`` iterations and at the last
    iteration; ``test_pairs`` (if given) are evaluated every ``eval_every``
    iterations, or once per epoch when ``eval_every`` is 0.

    Raises
    ------
    TrainingError
        If the loss or any activation becomes non-finite; the message names
        the iteration.
    """
    if not len(ds):
        raise TrainingError("empty dataset")
    complex_data = ds.is_complex
    expected = 2 if complex_data else 1
    if model.config.input_channels != expected:
        raise TrainingError(f"model takes {model.config.input_channels} channels but the "
                            f"task produces {expected}")
    rng = np.random.default_rng(config.seed)
    pair_seeds = rng.integers(0, 2 ** 31, size=len(ds))
    pairs = None if config.fresh_mask else [
        make_pair(img, task, int(s)) for img, s in zip(ds.items, pair_seeds)]
    stream = _SampleStream(len(ds), np.random.default_rng(rng.integers(0, 2 ** 31)))
    crop_rng = np.random.default_rng(rng.integers(0, 2 ** 31))
    fresh_rng = np.random.default_rng(rng.integers(0, 2 ** 31))
    curve = []
    params = model.parameters()
    last_epoch = 0
    for it in range(config.max_iterations):
        idx = stream.take(config.batch_size)
        batch = []
        for i in idx:
            if pairs is None:
                t = task
                if task.mask is not None:
                    m = task.mask
                    t = TaskSpec(task.kind, kspace.gen_mask(
                        m.family, *m.shape, m.requested_rate, int(fresh_rng.integers(2 ** 31))),
                        task.noise_v, task.scale, task.noise_domain)
                pair = make_pair(ds.items[i], t, int(fresh_rng.integers(2 ** 31)))
            else:
                pair = pairs[i]
            batch.append(_crop(pair, config.crop, crop_rng))
        inputs = np.concatenate([b[0] for b in batch])
        targets = np.concatenate([b[1] for b in batch])
        lr = step_lr(it, config.optimizer)
        model.zero_grad()
        try:
            out = model.forward(inputs, training=True)
            loss, grads = mse_loss(out, targets)
            if not math.isfinite(loss):
                raise NonFiniteError("loss")
            model.backward(grads)
        except NonFiniteError as exc:
            raise TrainingError(f"non-finite value at iteration {it}: {exc}") from exc
        for p in params:
            adam_step(p, config.optimizer, lr)
        done = it + 1
        test_psnr = None
        if test_pairs:
            epochs = stream.drawn // len(ds)
            due = (done % config.eval_every == 0) if config.eval_every else epochs > last_epoch
            last_epoch = epochs
            if due:
                test_psnr = evaluate(model, test_pairs, complex_data=complex_data).mean_psnr
        if it % config.log_every == 0 or done == config.max_iterations or test_psnr is not None:
            rec = LossRecord(it, lr, loss, test_psnr)
            curve.append(rec)
            if log is not None:
                log(rec)
        if checkpoint_fn is not None and config.checkpoint_every and \
                done % config.checkpoint_every == 0:
            checkpoint_fn(model, done)
    return TrainResult(model=model, curve=curve, iterations=config.max_iterations)


# --- run manifests ----------------------------------------------------------

def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: list
    config: dict
    seeds: dict
    dataset_hash: str = ""
    version: str = ""
    started: str = field(default_factory=_now)
    finished: str = ""
    status: str = "running"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.version:
            from . import __version__
            self.version = __version__

    def finish(self, status="ok"):
        self.finished = _now()
        self.status = status
        return self

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")

    @classmethod
    def read(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def default_log(stream=None):
    t0 = time.perf_counter()
    stream = stream or sys.stderr

    def log(rec):
        extra = "" if rec.test_psnr is None else f"  test_psnr {rec.test_psnr:.3f} dB"
        stream.write(f"iter {rec.iteration:7d}  lr {rec.lr:.2e}  loss {rec.train_loss:.6e}"
                     f"{extra}  ({time.perf_counter() - t0:.1f}s)\n")
        stream.flush()
    return log
