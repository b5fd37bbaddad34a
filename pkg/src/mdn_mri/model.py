"""Multi-scale dilated residual network (MDN) for image-to-image reconstruction.

One block::

    c0 = relu(conv9x9(x))                      32 ch
    c_i = relu(dilated_conv_i(c_{i-1}))        i = 1..6, widths 64,32,64,32,64,32
    res1 = c0 + c2        res2 = c1 + c3
    res3 = res1 + c4      res4 = res2 + c5
    res5 = res3 + c6
    c7 = conv3x3(concat(bn(res4), bn(res5)))   96 -> input channels, no relu
    out = x + c7

Blocks are cascaded; the last block's output is the reconstruction.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .core import ops
from .core.ops import ConvSpec, Parameter, RunningStats

VARIANTS = ("full", "no_grl", "no_lrls", "no_residual", "non_dilated", "no_concat")


class ConfigError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kernel_size: int
    out_channels: int
    dilation: int = 1

    @property
    def extent(self):
        return self.dilation * (self.kernel_size - 1) + 1


DEFAULT_LAYERS = (
    LayerSpec(9, 32, 1),
    LayerSpec(3, 64, 2),
    LayerSpec(3, 32, 3),
    LayerSpec(3, 64, 2),
    LayerSpec(3, 32, 3),
    LayerSpec(3, 64, 2),
    LayerSpec(3, 32, 3),
)


@dataclass(frozen=True)
class BlockConfig:
    layers: tuple = DEFAULT_LAYERS
    lrl_enabled: bool = True
    grl_enabled: bool = True
    concat_enabled: bool = True
    fusion_kernel: int = 3


@dataclass(frozen=True)
class ModelConfig:
    num_blocks: int = 2
    input_channels: int = 1
    block: BlockConfig = field(default_factory=BlockConfig)
    variant: str = "full"

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        b = dict(d["block"])
        b["layers"] = tuple(LayerSpec(**layer) for layer in b["layers"])
        return cls(num_blocks=d["num_blocks"], input_channels=d["input_channels"],
                   block=BlockConfig(**b), variant=d["variant"])


def normalize_variant(name):
    name = name.replace("-", "_")
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    return name


def validate(config):
    """Raise :class:`ConfigError` if ``config`` breaks a structural invariant."""
    if config.num_blocks < 1:
        raise ConfigError("num_blocks must be >= 1")
    if config.input_channels not in (1, 2):
        raise ConfigError("input_channels must be 1 (real) or 2 (complex)")
    normalize_variant(config.variant)
    layers = config.block.layers
    if len(layers) != 7:
        raise ConfigError(f"a block has exactly 7 convolution layers, got {len(layers)}")
    for i, layer in enumerate(layers):
        if layer.kernel_size % 2 == 0 or layer.dilation < 1 or layer.out_channels < 1:
            raise ConfigError(f"layer {i}: invalid spec {layer}")
    if config.block.lrl_enabled:
        w = [layer.out_channels for layer in layers]
        # res1=c0+c2, res3=res1+c4, res5=res3+c6; res2=c1+c3, res4=res2+c5
        if not (w[0] == w[2] == w[4] == w[6]):
            raise ConfigError(f"residual sums need equal widths for layers 0,2,4,6, got {w}")
        if not (w[1] == w[3] == w[5]):
            raise ConfigError(f"residual sums need equal widths for layers 1,3,5, got {w}")


def make_variant(base, variant):
    """Return the ablation ``variant`` of a full-variant ``base`` config."""
    variant = normalize_variant(variant)
    if base.variant not in ("full", variant):
        raise ConfigError(f"make_variant expects a full base config, got {base.variant!r}")
    if base.variant == variant:
        return base
    block = base.block
    if variant == "no_grl":
        block = dataclasses.replace(block, grl_enabled=False)
    elif variant == "no_lrls":
        block = dataclasses.replace(block, lrl_enabled=False)
    elif variant == "no_residual":
        block = dataclasses.replace(block, grl_enabled=False, lrl_enabled=False)
    elif variant == "no_concat":
        block = dataclasses.replace(block, concat_enabled=False)
    elif variant == "non_dilated":
        layers = tuple(LayerSpec(layer.extent, layer.out_channels, 1) for layer in block.layers)
        block = dataclasses.replace(block, layers=layers)
    return dataclasses.replace(base, block=block, variant=variant)


def _branch_widths(config):
    layers = config.block.layers
    widths = [layers[5].out_channels, layers[6].out_channels]
    return widths if config.block.concat_enabled else widths[1:]


def _conv_specs(config):
    specs = []
    prev = config.input_channels
    for layer in config.block.layers:
        specs.append(ConvSpec(prev, layer.out_channels, layer.kernel_size, layer.dilation))
        prev = layer.out_channels
    fusion = ConvSpec(sum(_branch_widths(config)), config.input_channels,
                      config.block.fusion_kernel)
    return specs, fusion


def count_params(config):
    """Total number of kernel weights, biases and batchnorm gamma/beta entries."""
    validate(config)
    specs, fusion = _conv_specs(config)
    per_block = sum(int(np.prod(s.weight_shape)) + s.out_channels for s in specs + [fusion])
    per_block += 2 * sum(_branch_widths(config))
    return config.num_blocks * per_block


def receptive_field(config):
    """Square receptive-field extent of the whole network (longest path)."""
    validate(config)
    specs, fusion = _conv_specs(config)
    grow = sum(s.dilation * (s.kernel_size - 1) for s in specs) + fusion.kernel_size - 1
    return 1 + config.num_blocks * grow


def _check_finite(arr, where):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values after {where}")


class _Block:
    def __init__(self, prefix, config, params, stats):
        self.prefix = prefix
        self.cfg = config.block
        self.specs, self.fusion = _conv_specs(config)
        self.params = params
        self.stats = stats
        self.bn_names = [f"{prefix}.bn_a", f"{prefix}.bn_b"]
        if not self.cfg.concat_enabled:
            self.bn_names = self.bn_names[1:]

    def _conv(self, i, x):
        spec = self.specs[i] if i < len(self.specs) else self.fusion
        name = f"{self.prefix}.conv{i}" if i < len(self.specs) else f"{self.prefix}.fusion"
        out = ops.conv2d_forward(x, spec, self.params[name + ".weight"].value,
                                 self.params[name + ".bias"].value)
        _check_finite(out, name)
        return out

    def forward(self, x, training, bn_momentum, bn_eps):
        cs = []
        h = x
        for i in range(len(self.specs)):
            h = ops.relu(self._conv(i, h))
            cs.append(h)
        if self.cfg.lrl_enabled:
            res1 = ops.residual_add(cs[0], cs[2])
            res2 = ops.residual_add(cs[1], cs[3])
            res3 = ops.residual_add(res1, cs[4])
            res4 = ops.residual_add(res2, cs[5])
            res5 = ops.residual_add(res3, cs[6])
            branches = [res4, res5]
        else:
            branches = [cs[5], cs[6]]
        if not self.cfg.concat_enabled:
            branches = branches[1:]
        normed, bn_caches = [], []
        for name, b in zip(self.bn_names, branches):
            out, cache = ops.batchnorm_forward(
                b, self.params[name + ".gamma"].value, self.params[name + ".beta"].value,
                self.stats[name], training, bn_momentum, bn_eps)
            _check_finite(out, name)
            normed.append(out)
            bn_caches.append(cache)
        z = ops.concat_channels(normed)
        c7 = self._conv(len(self.specs), z)
        out = ops.residual_add(x, c7) if self.cfg.grl_enabled else c7
        self.cache = (x, cs, z, bn_caches, [b.shape[1] for b in branches])
        return out

    def backward(self, upstream, need_input_grad):
        x, cs, z, bn_caches, widths = self.cache
        n_layers = len(self.specs)
        name = f"{self.prefix}.fusion"
        dz, dw, db = ops.conv2d_backward(z, self.fusion, self.params[name + ".weight"].value,
                                         upstream)
        self.params[name + ".weight"].grad += dw
        self.params[name + ".bias"].grad += db
        d_branches = []
        for bn, cache, d in zip(self.bn_names, bn_caches, ops.concat_backward(dz, widths)):
            dx, dg, dbeta = ops.batchnorm_backward(cache, d)
            self.params[bn + ".gamma"].grad += dg
            self.params[bn + ".beta"].grad += dbeta
            d_branches.append(dx)
        if not self.cfg.concat_enabled:
            d_branches = [None] + d_branches
        d_a, d_b = d_branches
        dc = [None] * n_layers
        if self.cfg.lrl_enabled:
            d_res5 = d_b
            d_res3, dc[6] = ops.residual_add_backward(d_res5)
            d_res1, dc[4] = ops.residual_add_backward(d_res3)
            dc[0], dc[2] = ops.residual_add_backward(d_res1)
            if d_a is not None:
                d_res2, dc[5] = ops.residual_add_backward(d_a)
                dc[1], dc[3] = ops.residual_add_backward(d_res2)
        else:
            dc[6], dc[5] = d_b, d_a
        carry = None
        for i in range(n_layers - 1, -1, -1):
            grad = _sum_grads(dc[i], carry)
            if grad is None:
                carry = None
                continue
            dpre = ops.relu_backward(cs[i], grad)
            inp = cs[i - 1] if i > 0 else x
            name = f"{self.prefix}.conv{i}"
            carry, dw, db = ops.conv2d_backward(
                inp, self.specs[i], self.params[name + ".weight"].value, dpre,
                need_input_grad=(i > 0 or need_input_grad))
            self.params[name + ".weight"].grad += dw
            self.params[name + ".bias"].grad += db
        if not need_input_grad:
            return None
        if self.cfg.grl_enabled:
            return upstream if carry is None else carry + upstream
        return np.zeros_like(x) if carry is None else carry


def _sum_grads(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


class MDN:
    """A built network: configuration, named parameters and batchnorm statistics.

    ``forward`` caches activations; ``backward`` accumulates into each
    parameter's ``grad`` (call :meth:`zero_grad` between steps).
    """

    def __init__(self, config, params, stats, bn_momentum=0.1, bn_eps=1e-5):
        validate(config)
        self.config = config
        self.params = params
        self.stats = stats
        self.bn_momentum = bn_momentum
        self.bn_eps = bn_eps
        self.blocks = [_Block(f"block{b}", config, params, stats)
                       for b in range(config.num_blocks)]

    @property
    def dtype(self):
        return next(iter(self.params.values())).value.dtype

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[1] != self.config.input_channels:
            raise ops.ShapeError(
                f"input must have shape (N, {self.config.input_channels}, H, W), got {x.shape}")
        h = np.asarray(x, dtype=self.dtype)
        for block in self.blocks:
            h = block.forward(h, training, self.bn_momentum, self.bn_eps)
        return h

    __call__ = forward

    def backward(self, upstream, need_input_grad=False):
        """Backpropagate ``upstream`` (d loss / d output) through the last forward."""
        g = np.asarray(upstream, dtype=self.dtype)
        for idx in range(len(self.blocks) - 1, -1, -1):
            g = self.blocks[idx].backward(g, need_input_grad or idx > 0)
        return g

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def parameters(self):
        return list(self.params.values())

    def num_params(self):
        return sum(p.size for p in self.params.values())


def parameter_shapes(config):
    """Ordered ``(name, shape)`` for every parameter of ``config``."""
    specs, fusion = _conv_specs(config)
    shapes = []
    for b in range(config.num_blocks):
        prefix = f"block{b}"
        for i, s in enumerate(specs):
            shapes.append((f"{prefix}.conv{i}.weight", s.weight_shape))
            shapes.append((f"{prefix}.conv{i}.bias", (s.out_channels,)))
        names = ["bn_a", "bn_b"] if config.block.concat_enabled else ["bn_b"]
        for name, width in zip(names, _branch_widths(config)):
            shapes.append((f"{prefix}.{name}.gamma", (width,)))
            shapes.append((f"{prefix}.{name}.beta", (width,)))
        shapes.append((f"{prefix}.fusion.weight", fusion.weight_shape))
        shapes.append((f"{prefix}.fusion.bias", (fusion.out_channels,)))
    return shapes


def stat_shapes(config):
    """Ordered ``(name, channels)`` for every batchnorm's running statistics."""
    out = []
    for b in range(config.num_blocks):
        names = ["bn_a", "bn_b"] if config.block.concat_enabled else ["bn_b"]
        for name, width in zip(names, _branch_widths(config)):
            out.append((f"block{b}.{name}", width))
    return out


def build_model(config, seed=0, *, init="he", fusion_init="auto", dtype=np.float32):
    """Instantiate ``config`` with seeded weights.

    ``init="he"`` draws conv kernels from N(0, 2 / fan_in); ``init="zeros"``
    zeroes every kernel and bias. Biases start at zero, batchnorm gamma at 1
    and beta at 0. ``fusion_init="zeros"`` zeroes each block's fusion conv so a
    freshly built model with the global skip starts as the identity map.
    ``"auto"`` does that only when the skip exists; without it a zero fusion
    conv would leave no signal path, so the fusion conv is drawn like the rest.
    """
    validate(config)
    if init not in ("he", "zeros") or fusion_init not in ("he", "zeros", "auto"):
        raise ConfigError("init must be 'he' or 'zeros'")
    if fusion_init == "auto":
        fusion_init = "zeros" if config.block.grl_enabled else "he"
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(config):
        if name.endswith(".gamma"):
            value = np.ones(shape, dtype=dtype)
        elif name.endswith(".weight"):
            scheme = fusion_init if ".fusion." in name else init
            fan_in = int(np.prod(shape[1:]))
            draw = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
            value = (draw if scheme == "he" else np.zeros(shape)).astype(dtype)
        else:
            value = np.zeros(shape, dtype=dtype)
        params[name] = Parameter(value)
    stats = {name: RunningStats.init(width, dtype) for name, width in stat_shapes(config)}
    return MDN(config, params, stats)
