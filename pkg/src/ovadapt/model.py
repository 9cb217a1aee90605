"""Network definition: ReLU MLP feature extractor, a closed-set linear head
over the known classes, and one two-output open-set head per known class.

Each open-set head scores "this class" vs "not this class"; the known
probability is the first component of the head's two-way softmax. Forward
caches enough activations for an exact hand-derived backward pass, so no
autodiff framework is involved anywhere.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import check_finite, clamp_prob, sigmoid, PROB_FLOOR, PROB_CEIL

_CHECKPOINT_MAGIC = b"OVAD"
_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description.

    hidden_dims lists the extractor layer widths with ReLU between layers;
    an empty list means a zero-layer passthrough extractor (features are the
    raw inputs, so input_dim must equal feature_dim). That mode trains the
    heads directly on precomputed features.
    """

    input_dim: int
    hidden_dims: tuple[int, ...]
    feature_dim: int
    num_known_classes: int
    init_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    def validate(self) -> None:
        dims = (self.input_dim, self.feature_dim, *self.hidden_dims)
        if any(d < 1 for d in dims):
            raise ValueError(f"ModelSpec: all dims must be >= 1, got {dims}")
        if self.num_known_classes < 2:
            raise ValueError(
                f"ModelSpec: need at least 2 known classes, got {self.num_known_classes}"
            )
        if not self.hidden_dims and self.input_dim != self.feature_dim:
            raise ValueError(
                "ModelSpec: zero-layer extractor requires input_dim == feature_dim "
                f"(got {self.input_dim} != {self.feature_dim})"
            )
        if not np.isfinite(self.init_scale) or self.init_scale < 0:
            raise ValueError(f"ModelSpec: bad init_scale {self.init_scale}")

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per extractor layer; empty for the passthrough mode."""
        if not self.hidden_dims:
            return []
        widths = [self.input_dim, *self.hidden_dims, self.feature_dim]
        return [(widths[i], widths[i + 1]) for i in range(len(widths) - 1)]


@dataclass
class ModelParams:
    """All trainable parameters. The same structure doubles as the gradient
    tree returned by ``backward``."""

    extractor_w: list[np.ndarray]  # per layer, shape (out, in)
    extractor_b: list[np.ndarray]  # per layer, shape (out,)
    closed_w: np.ndarray  # (num_classes, feature_dim)
    closed_b: np.ndarray  # (num_classes,)
    ova_w: np.ndarray  # (num_classes, 2, feature_dim)
    ova_b: np.ndarray  # (num_classes, 2)

    @property
    def num_classes(self) -> int:
        return self.closed_w.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.closed_w.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(
            extractor_w=[w.copy() for w in self.extractor_w],
            extractor_b=[b.copy() for b in self.extractor_b],
            closed_w=self.closed_w.copy(),
            closed_b=self.closed_b.copy(),
            ova_w=self.ova_w.copy(),
            ova_b=self.ova_b.copy(),
        )

    def blocks(self) -> list[tuple[str, np.ndarray]]:
        """Named parameter blocks in a fixed, documented order."""
        out: list[tuple[str, np.ndarray]] = []
        for i, (w, b) in enumerate(zip(self.extractor_w, self.extractor_b)):
            out.append((f"extractor.{i}.weight", w))
            out.append((f"extractor.{i}.bias", b))
        out.append(("closed.weight", self.closed_w))
        out.append(("closed.bias", self.closed_b))
        out.append(("ova.weight", self.ova_w))
        out.append(("ova.bias", self.ova_b))
        return out

    def check_finite(self) -> None:
        for name, arr in self.blocks():
            check_finite(arr, name)


@dataclass
class ForwardResult:
    """Outputs of one forward pass plus the activation cache for backward.

    ova_known_prob holds the clamped per-class known probabilities p(known|x)
    in (0, 1); ova_grad_mask flags entries whose raw probability lay strictly
    inside the clamp range (gradients are zero where the clamp is active).
    """

    features: np.ndarray  # (B, feature_dim)
    closed_logits: np.ndarray  # (B, C)
    ova_logits: np.ndarray  # (B, C, 2)
    ova_known_prob: np.ndarray  # (B, C), clamped
    ova_grad_mask: np.ndarray  # (B, C) bool
    layer_inputs: list[np.ndarray] = field(default_factory=list)
    pre_activations: list[np.ndarray] = field(default_factory=list)

    @property
    def batch_size(self) -> int:
        return self.features.shape[0]


def init_model(spec: ModelSpec, rng: np.random.Generator) -> ModelParams:
    """Initialize weights uniformly in [-s/sqrt(fan_in), +s/sqrt(fan_in)].

    Biases start at zero. Draw order is fixed (extractor layers, closed head,
    open-set heads) so identical seeds give bit-identical parameters.
    """
    spec.validate()
    ext_w, ext_b = [], []
    for fan_in, fan_out in spec.layer_dims():
        lim = spec.init_scale / np.sqrt(fan_in)
        ext_w.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        ext_b.append(np.zeros(fan_out))
    lim = spec.init_scale / np.sqrt(spec.feature_dim)
    closed_w = rng.uniform(-lim, lim, size=(spec.num_known_classes, spec.feature_dim))
    closed_b = np.zeros(spec.num_known_classes)
    ova_w = rng.uniform(-lim, lim, size=(spec.num_known_classes, 2, spec.feature_dim))
    ova_b = np.zeros((spec.num_known_classes, 2))
    return ModelParams(ext_w, ext_b, closed_w, closed_b, ova_w, ova_b)


def forward(params: ModelParams, x: np.ndarray) -> ForwardResult:
    """Run the extractor and both heads on a batch of input rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"forward: expected non-empty 2-D batch, got shape {x.shape}")
    expected = params.extractor_w[0].shape[1] if params.extractor_w else params.feature_dim
    if x.shape[1] != expected:
        raise ValueError(
            f"forward: input dim {x.shape[1]} does not match model input dim {expected}"
        )

    layer_inputs: list[np.ndarray] = []
    pre_activations: list[np.ndarray] = []
    a = x
    n_layers = len(params.extractor_w)
    for i, (w, b) in enumerate(zip(params.extractor_w, params.extractor_b)):
        layer_inputs.append(a)
        h = a @ w.T + b
        pre_activations.append(h)
        a = np.maximum(h, 0.0) if i < n_layers - 1 else h
    features = a

    closed_logits = features @ params.closed_w.T + params.closed_b
    # (B, C, 2): per-class two-way logits
    ova_logits = np.einsum("bd,cod->bco", features, params.ova_w) + params.ova_b
    raw_known = sigmoid(ova_logits[:, :, 0] - ova_logits[:, :, 1])
    known_prob = clamp_prob(raw_known)
    grad_mask = (raw_known > PROB_FLOOR) & (raw_known < PROB_CEIL)

    return ForwardResult(
        features=features,
        closed_logits=closed_logits,
        ova_logits=ova_logits,
        ova_known_prob=known_prob,
        ova_grad_mask=grad_mask,
        layer_inputs=layer_inputs,
        pre_activations=pre_activations,
    )


def backward(
    params: ModelParams,
    fwd: ForwardResult,
    d_closed_logits: np.ndarray | None,
    d_ova_logits: np.ndarray | None,
) -> ModelParams:
    """Backpropagate loss gradients at the logits into all parameters.

    Either logit gradient may be None (treated as zero). Returns a gradient
    tree with the same shapes as ``params``; both heads share the extractor,
    so their feature gradients accumulate before the extractor backward.
    """
    feats = fwd.features
    d_features = np.zeros_like(feats)

    if d_closed_logits is None:
        g_closed_w = np.zeros_like(params.closed_w)
        g_closed_b = np.zeros_like(params.closed_b)
    else:
        g_closed_w = d_closed_logits.T @ feats
        g_closed_b = d_closed_logits.sum(axis=0)
        d_features += d_closed_logits @ params.closed_w

    if d_ova_logits is None:
        g_ova_w = np.zeros_like(params.ova_w)
        g_ova_b = np.zeros_like(params.ova_b)
    else:
        g_ova_w = np.einsum("bco,bd->cod", d_ova_logits, feats)
        g_ova_b = d_ova_logits.sum(axis=0)
        d_features += np.einsum("bco,cod->bd", d_ova_logits, params.ova_w)

    n_layers = len(params.extractor_w)
    g_ext_w = [np.zeros_like(w) for w in params.extractor_w]
    g_ext_b = [np.zeros_like(b) for b in params.extractor_b]
    d = d_features
    for i in reversed(range(n_layers)):
        if i < n_layers - 1:  # ReLU applied on all but the last layer
            d = d * (fwd.pre_activations[i] > 0.0)
        g_ext_w[i] = d.T @ fwd.layer_inputs[i]
        g_ext_b[i] = d.sum(axis=0)
        d = d @ params.extractor_w[i]

    return ModelParams(g_ext_w, g_ext_b, g_closed_w, g_closed_b, g_ova_w, g_ova_b)


def zeros_like_params(params: ModelParams) -> ModelParams:
    return ModelParams(
        extractor_w=[np.zeros_like(w) for w in params.extractor_w],
        extractor_b=[np.zeros_like(b) for b in params.extractor_b],
        closed_w=np.zeros_like(params.closed_w),
        closed_b=np.zeros_like(params.closed_b),
        ova_w=np.zeros_like(params.ova_w),
        ova_b=np.zeros_like(params.ova_b),
    )


def add_params(acc: ModelParams, other: ModelParams, scale: float = 1.0) -> ModelParams:
    """In-place acc += scale * other; returns acc."""
    for (_, a), (_, o) in zip(acc.blocks(), other.blocks()):
        a += scale * o
    return acc


def zero_params(spec: ModelSpec) -> ModelParams:
    """All-zero parameter tree for the given spec."""
    spec.validate()
    ext_w = [np.zeros((fo, fi)) for fi, fo in spec.layer_dims()]
    ext_b = [np.zeros(fo) for _, fo in spec.layer_dims()]
    return ModelParams(
        extractor_w=ext_w,
        extractor_b=ext_b,
        closed_w=np.zeros((spec.num_known_classes, spec.feature_dim)),
        closed_b=np.zeros(spec.num_known_classes),
        ova_w=np.zeros((spec.num_known_classes, 2, spec.feature_dim)),
        ova_b=np.zeros((spec.num_known_classes, 2)),
    )


def params_to_vector(params: ModelParams) -> np.ndarray:
    return np.concatenate([arr.ravel() for _, arr in params.blocks()])


def vector_to_params(vec: np.ndarray, spec: ModelSpec) -> ModelParams:
    """Inverse of params_to_vector for a model of the given spec."""
    out = zero_params(spec)
    offset = 0
    for _, arr in out.blocks():
        n = arr.size
        arr[...] = vec[offset : offset + n].reshape(arr.shape)
        offset += n
    if offset != vec.size:
        raise ValueError(f"vector_to_params: size mismatch ({vec.size} vs {offset})")
    return out


def block_slices(spec: ModelSpec) -> list[tuple[str, slice]]:
    """Flat-vector slice per named block, matching params_to_vector order."""
    out = []
    offset = 0
    for name, arr in zero_params(spec).blocks():
        out.append((name, slice(offset, offset + arr.size)))
        offset += arr.size
    return out


def num_params(spec: ModelSpec) -> int:
    return sum(arr.size for _, arr in zero_params(spec).blocks())


def save_checkpoint(params: ModelParams, spec: ModelSpec, path) -> None:
    """Write spec fields plus row-major float64 weights; round-trips bit-exact.

    Layout: magic, version, then u32 header (input_dim, n_hidden, hidden...,
    feature_dim, num_known_classes), f64 init_scale, then each block in
    ``blocks()`` order as little-endian float64.
    """
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", _CHECKPOINT_VERSION))
        header = [spec.input_dim, len(spec.hidden_dims), *spec.hidden_dims,
                  spec.feature_dim, spec.num_known_classes]
        fh.write(struct.pack(f"<{len(header)}I", *header))
        fh.write(struct.pack("<d", spec.init_scale))
        for _, arr in params.blocks():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, ModelSpec]:
    with open(path, "rb") as fh:
        if fh.read(4) != _CHECKPOINT_MAGIC:
            raise ValueError(f"checkpoint {path}: bad magic")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint {path}: unsupported version {version}")
        input_dim, n_hidden = struct.unpack("<2I", fh.read(8))
        hidden = struct.unpack(f"<{n_hidden}I", fh.read(4 * n_hidden)) if n_hidden else ()
        feature_dim, num_classes = struct.unpack("<2I", fh.read(8))
        (init_scale,) = struct.unpack("<d", fh.read(8))
        spec = ModelSpec(input_dim, tuple(hidden), feature_dim, num_classes, init_scale)
        params = zero_params(spec)
        for _, arr in params.blocks():
            buf = fh.read(8 * arr.size)
            if len(buf) != 8 * arr.size:
                raise ValueError(f"checkpoint {path}: truncated weight block")
            arr[...] = np.frombuffer(buf, dtype="<f8").reshape(arr.shape)
        if fh.read(1):
            raise ValueError(f"checkpoint {path}: trailing bytes")
    return params, spec
