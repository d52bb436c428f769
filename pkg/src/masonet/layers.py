"""Concrete network operators and their exact MASO representations.

Each supported operator (dense, conv, relu / leaky-relu / abs, max / avg
pool, folded batch-norm, linear-skip residual block) is either a MASO or a
degenerate (R = 1) MASO, and a linear layer followed by one of the
nonlinearities collapses into a single MASO via

    A[k,r,:] = W^T As[k,r,:]          B[k,r] = Bs[k,r] + <As[k,r,:], b>

Networks are ordered layer lists acting on flat row-major vectors; images
enter flattened and convolutions carry their expected (C, H, W) input
shape.  Convolution is applied through its explicit matrix form so the
matrix route and the forward route are the same arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .maso import HardSelection, MasoParams
from .ndcore import (
    DomainError,
    ShapeError,
    StructureError,
    Tensor,
    WindowError,
    as_tensor,
)

__all__ = [
    "Dense",
    "Conv",
    "Activation",
    "MaxPool",
    "AvgPool",
    "BatchNorm",
    "SkipBlock",
    "Network",
    "dense_as_maso",
    "activation_as_maso",
    "pool_as_maso",
    "compose_layer_maso",
    "conv_to_matrix",
    "conv_out_shape",
    "network_forward",
    "network_forward_batch",
    "bn_fold_affine",
    "skip_block_forward",
    "apodized_reconstruct",
    "interior_mask",
    "slope_nonnegativity",
    "layer_in_dim",
    "layer_out_dim",
    "layer_forward_hard",
    "layer_selected_affine",
    "pool_regions_2d",
    "make_mlp",
    "ACTIVATION_SLOPES",
]


# ---------------------------------------------------------------------------
# layer specifications
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Dense:
    """Fully connected affine map z -> W z + b."""

    W: Tensor
    b: Tensor

    def __post_init__(self):
        self.W = as_tensor(self.W)
        self.b = as_tensor(self.b)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"dense shapes disagree: W {self.W.shape}, b {self.b.shape}")


@dataclass(eq=False)
class Conv:
    """2-D convolution, stride pair, 'valid' or zero-padded 'same' boundary.

    filters: (out_ch, in_ch, kh, kw); bias: per-out-channel.  in_shape is
    the (C, H, W) the layer expects; the lowered matrix is cached on first
    use since the geometry is fixed.
    """

    filters: Tensor
    bias: Tensor
    stride: tuple[int, int]
    padding: str
    in_shape: tuple[int, int, int]
    _matrix: Tensor | None = field(default=None, repr=False)

    def __post_init__(self):
        self.filters = as_tensor(self.filters)
        self.bias = as_tensor(self.bias)
        if self.filters.ndim != 4:
            raise ShapeError(f"filters must be 4-D, got shape {self.filters.shape}")
        if self.bias.shape != (self.filters.shape[0],):
            raise ShapeError("bias must have one entry per output channel")
        self.stride = (int(self.stride[0]), int(self.stride[1]))
        if self.stride[0] < 1 or self.stride[1] < 1:
            raise DomainError(f"stride must be positive, got {self.stride}")
        if self.padding not in ("valid", "same-zero"):
            raise DomainError(f"unknown padding {self.padding!r}")
        self.in_shape = tuple(int(s) for s in self.in_shape)
        if len(self.in_shape) != 3 or self.in_shape[0] != self.filters.shape[1]:
            raise ShapeError(
                f"in_shape {self.in_shape} incompatible with filters {self.filters.shape}"
            )
        # raises on impossible geometry (kernel larger than 'valid' input)
        conv_out_shape(self, self.in_shape)

    def matrix(self) -> Tensor:
        if self._matrix is None:
            self._matrix = conv_to_matrix(self, self.in_shape)
        return self._matrix

    def bias_flat(self) -> Tensor:
        _, ho, wo = conv_out_shape(self, self.in_shape)
        return np.repeat(self.bias, ho * wo)


ACTIVATION_SLOPES = {
    # kind -> (inactive slope, active slope); lrelu substitutes nu for None
    "relu": (0.0, 1.0),
    "lrelu": (None, 1.0),
    "abs": (-1.0, 1.0),
}


@dataclass(eq=False)
class Activation:
    """Elementwise two-region nonlinearity: relu, lrelu(nu) or abs."""

    kind: str
    dim: int
    nu: float = 0.01

    def __post_init__(self):
        if self.kind not in ACTIVATION_SLOPES:
            raise DomainError(f"unknown activation kind {self.kind!r}")
        if self.kind == "lrelu" and not self.nu > 0:
            raise DomainError(f"leaky slope must be positive, got {self.nu}")
        if self.dim < 1:
            raise ShapeError("activation dimension must be at least 1")

    def slopes(self) -> tuple[float, float]:
        lo, hi = ACTIVATION_SLOPES[self.kind]
        return (self.nu if lo is None else lo, hi)


def _check_regions(regions, in_dim: int):
    regs = tuple(tuple(int(i) for i in r) for r in regions)
    if not regs:
        raise DomainError("pooling needs at least one region")
    for r in regs:
        if not r:
            raise DomainError("empty pooling region")
        if min(r) < 0 or max(r) >= in_dim:
            raise DomainError(f"region index out of range for input dim {in_dim}")
    return regs


@dataclass(eq=False)
class MaxPool:
    """Max over explicit index regions of the flat input."""

    regions: tuple
    in_dim: int

    def __post_init__(self):
        self.regions = _check_regions(self.regions, self.in_dim)

    def padded_indices(self) -> np.ndarray:
        """(K, R) index matrix; short regions repeat their last index."""
        r_max = max(len(r) for r in self.regions)
        return np.array(
            [list(r) + [r[-1]] * (r_max - len(r)) for r in self.regions], dtype=np.int64
        )


@dataclass(eq=False)
class AvgPool:
    """Mean over explicit index regions of the flat input."""

    regions: tuple
    in_dim: int

    def __post_init__(self):
        self.regions = _check_regions(self.regions, self.in_dim)

    def matrix(self) -> Tensor:
        P = np.zeros((len(self.regions), self.in_dim))
        for k, r in enumerate(self.regions):
            np.add.at(P[k], list(r), 1.0 / len(r))
        return P


@dataclass(eq=False)
class BatchNorm:
    """Per-feature normalization; at inference a fixed affine map."""

    mean: Tensor
    var: Tensor
    scale: Tensor
    shift: Tensor
    epsilon: float = 1e-5

    def __post_init__(self):
        self.mean = as_tensor(self.mean)
        self.var = as_tensor(self.var)
        self.scale = as_tensor(self.scale)
        self.shift = as_tensor(self.shift)
        shapes = {self.mean.shape, self.var.shape, self.scale.shape, self.shift.shape}
        if len(shapes) != 1 or self.mean.ndim != 1:
            raise ShapeError("batch-norm fields must be equal-length vectors")
        if np.any(self.var + self.epsilon <= 0):
            raise DomainError("var + epsilon must be positive")


@dataclass(eq=False)
class SkipBlock:
    """Residual block z -> skip(z) + act(conv(z) + bias) + skip_bias.

    The skip path is a pure linear convolution; its own bias field must be
    zero so the block-level skip_bias is the only additive term.
    """

    conv: Conv
    activation: Activation
    skip: Conv
    skip_bias: Tensor

    def __post_init__(self):
        self.skip_bias = as_tensor(self.skip_bias)
        out_dim = int(np.prod(conv_out_shape(self.conv, self.conv.in_shape)))
        skip_out = int(np.prod(conv_out_shape(self.skip, self.skip.in_shape)))
        if self.activation.dim != out_dim:
            raise ShapeError("activation width must match conv output")
        if skip_out != out_dim or self.skip.in_shape != self.conv.in_shape:
            raise ShapeError("skip path must map the block input to the block output")
        if np.any(self.skip.bias != 0.0):
            raise DomainError("skip convolution must be bias-free; use skip_bias")
        if self.skip_bias.shape != (out_dim,):
            raise ShapeError(f"skip_bias must have length {out_dim}")


LayerSpec = Dense | Conv | Activation | MaxPool | AvgPool | BatchNorm | SkipBlock


def layer_in_dim(layer: LayerSpec) -> int:
    if isinstance(layer, Dense):
        return layer.W.shape[1]
    if isinstance(layer, Conv):
        return int(np.prod(layer.in_shape))
    if isinstance(layer, Activation):
        return layer.dim
    if isinstance(layer, (MaxPool, AvgPool)):
        return layer.in_dim
    if isinstance(layer, BatchNorm):
        return layer.mean.shape[0]
    if isinstance(layer, SkipBlock):
        return layer_in_dim(layer.conv)
    raise StructureError(f"unknown layer {type(layer).__name__}")


def layer_out_dim(layer: LayerSpec) -> int:
    if isinstance(layer, Dense):
        return layer.W.shape[0]
    if isinstance(layer, Conv):
        return int(np.prod(conv_out_shape(layer, layer.in_shape)))
    if isinstance(layer, Activation):
        return layer.dim
    if isinstance(layer, (MaxPool, AvgPool)):
        return len(layer.regions)
    if isinstance(layer, BatchNorm):
        return layer.mean.shape[0]
    if isinstance(layer, SkipBlock):
        return layer_out_dim(layer.conv)
    raise StructureError(f"unknown layer {type(layer).__name__}")


@dataclass(eq=False)
class Network:
    """Ordered layer chain acting on flattened inputs."""

    layers: list
    input_shape: tuple
    class_count: int

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.layers = list(self.layers)
        dim = int(np.prod(self.input_shape))
        dims = [dim]
        for i, layer in enumerate(self.layers):
            need = layer_in_dim(layer)
            if need != dim:
                raise ShapeError(f"layer {i} expects input dim {need}, chain gives {dim}")
            dim = layer_out_dim(layer)
            dims.append(dim)
        if dim != self.class_count:
            raise ShapeError(
                f"final layer emits {dim} values but class_count is {self.class_count}"
            )
        self.dims = tuple(dims)


# ---------------------------------------------------------------------------
# operator -> MASO builders
# ---------------------------------------------------------------------------

def dense_as_maso(W: Tensor, b: Tensor) -> MasoParams:
    """Affine map as a degenerate MASO: one region holding (W row, bias)."""
    layer = Dense(W, b)
    return MasoParams(layer.W[:, None, :], layer.b[:, None])


def activation_as_maso(kind: str, dim: int, nu: float = 0.01) -> MasoParams:
    """Two-region elementwise MASO; region 0 is the inactive branch.

    relu rows are {0, e_k}; lrelu(nu) rows {nu e_k, e_k}; abs rows
    {-e_k, e_k}.  All offsets are zero.
    """
    layer = Activation(kind, dim, nu)
    lo, hi = layer.slopes()
    A = np.zeros((dim, 2, dim))
    idx = np.arange(dim)
    A[idx, 0, idx] = lo
    A[idx, 1, idx] = hi
    return MasoParams(A, np.zeros((dim, 2)))


def pool_as_maso(regions, kind: str, in_dim: int | None = None) -> MasoParams:
    """Pooling as a MASO over indicator slopes.

    max: R = largest region size, row r of unit k is the indicator of the
    r-th index in region k (short regions repeat the last index so R is
    uniform).  avg: degenerate R = 1 with the mean indicator row.
    """
    if in_dim is None:
        in_dim = max(max(r) for r in regions if len(r)) + 1 if regions else 0
    if kind == "max":
        layer = MaxPool(regions, in_dim)
        idx = layer.padded_indices()
        K, R = idx.shape
        A = np.zeros((K, R, in_dim))
        for k in range(K):
            for r in range(R):
                A[k, r, idx[k, r]] = 1.0
        return MasoParams(A, np.zeros((K, R)))
    if kind == "avg":
        layer = AvgPool(regions, in_dim)
        return MasoParams(layer.matrix()[:, None, :], np.zeros((len(layer.regions), 1)))
    raise DomainError(f"unknown pooling kind {kind!r}")


def compose_layer_maso(linear: MasoParams, nonlinear: MasoParams) -> MasoParams:
    """Fold an affine map into the following MASO, giving one layer MASO.

    With the affine map z -> W z + b and MASO (As, Bs) on its output, the
    composition has slopes As @ W and offsets Bs + As b, so evaluating the
    single MASO equals running the two stages in sequence.
    """
    if linear.R != 1:
        raise ShapeError("linear stage must be a degenerate (R = 1) MASO")
    W = linear.A[:, 0, :]
    b = linear.B[:, 0]
    if nonlinear.D != W.shape[0]:
        raise ShapeError(
            f"nonlinear stage expects dim {nonlinear.D}, linear stage emits {W.shape[0]}"
        )
    A = np.einsum("krm,md->krd", nonlinear.A, W)
    B = nonlinear.B + nonlinear.A @ b
    return MasoParams(A, B)


# ---------------------------------------------------------------------------
# convolution lowering
# ---------------------------------------------------------------------------

def conv_out_shape(conv: Conv, input_shape) -> tuple[int, int, int]:
    """(out_ch, H_out, W_out) for the given input geometry."""
    c_in, h, w = (int(s) for s in input_shape)
    c_out, c_f, kh, kw = conv.filters.shape
    if c_f != c_in:
        raise ShapeError(f"input has {c_in} channels, filters expect {c_f}")
    sh, sw = conv.stride
    if conv.padding == "valid":
        if kh > h or kw > w:
            raise ShapeError(f"kernel {kh}x{kw} exceeds valid input {h}x{w}")
        return c_out, (h - kh) // sh + 1, (w - kw) // sw + 1
    # same-zero: output ceil(in/stride), kernel centered with left pad (k-1)//2
    return c_out, (h - 1) // sh + 1, (w - 1) // sw + 1


def _pad_before(conv: Conv) -> tuple[int, int]:
    if conv.padding == "valid":
        return 0, 0
    kh, kw = conv.filters.shape[2], conv.filters.shape[3]
    return (kh - 1) // 2, (kw - 1) // 2


def conv_to_matrix(conv: Conv, input_shape) -> Tensor:
    """Explicit (out_dim x in_dim) matrix M with conv(x) = M x + bias.

    Out-of-range taps under 'same-zero' padding read zeros, which is why
    those filter entries simply never land in M.
    """
    c_in, h, w = (int(s) for s in input_shape)
    c_out, h_out, w_out = conv_out_shape(conv, input_shape)
    if tuple(input_shape) == conv.in_shape and conv._matrix is not None:
        return conv._matrix
    kh, kw = conv.filters.shape[2], conv.filters.shape[3]
    sh, sw = conv.stride
    ph, pw = _pad_before(conv)
    M = np.zeros((c_out * h_out * w_out, c_in * h * w))
    for o in range(c_out):
        for y in range(h_out):
            for x in range(w_out):
                row = (o * h_out + y) * w_out + x
                for i in range(c_in):
                    for p in range(kh):
                        yy = y * sh + p - ph
                        if yy < 0 or yy >= h:
                            continue
                        for q in range(kw):
                            xx = x * sw + q - pw
                            if 0 <= xx < w:
                                M[row, (i * h + yy) * w + xx] += conv.filters[o, i, p, q]
    if tuple(input_shape) == conv.in_shape:
        conv._matrix = M
    return M


# ---------------------------------------------------------------------------
# forward evaluation
# ---------------------------------------------------------------------------

def layer_forward_hard(layer: LayerSpec, Z: Tensor):
    """Batched hard forward: (n, in) -> ((n, out), codes or None).

    codes is an (n, K) int array for layers that select a region (the
    activation inside a skip block speaks for the block); affine layers
    return None.
    """
    if isinstance(layer, Dense):
        return Z @ layer.W.T + layer.b, None
    if isinstance(layer, Conv):
        return Z @ layer.matrix().T + layer.bias_flat(), None
    if isinstance(layer, Activation):
        lo, hi = layer.slopes()
        codes = (Z > 0).astype(np.int64)
        if layer.kind == "relu":
            out = np.maximum(Z, 0.0)
        elif layer.kind == "lrelu":
            out = np.where(Z > 0, Z, lo * Z)
        else:
            out = np.where(Z > 0, Z, -Z)
        return out, codes
    if isinstance(layer, MaxPool):
        gathered = Z[:, layer.padded_indices()]
        return gathered.max(axis=2), np.argmax(gathered, axis=2)
    if isinstance(layer, AvgPool):
        return Z @ layer.matrix().T, None
    if isinstance(layer, BatchNorm):
        scale, shift = bn_fold_affine(layer)
        return Z * scale + shift, None
    if isinstance(layer, SkipBlock):
        pre = Z @ layer.conv.matrix().T + layer.conv.bias_flat()
        act, codes = layer_forward_hard(layer.activation, pre)
        return Z @ layer.skip.matrix().T + act + layer.skip_bias, codes
    raise StructureError(f"unknown layer {type(layer).__name__}")


def network_forward_batch(net: Network, X: Tensor):
    """Hard forward of many inputs: (n, D) -> ((n, C), per-layer codes)."""
    Z = as_tensor(X)
    if Z.ndim != 2 or Z.shape[1] != net.dims[0]:
        raise ShapeError(f"batch shape {Z.shape} does not match input dim {net.dims[0]}")
    codes_per_layer = []
    for layer in net.layers:
        Z, codes = layer_forward_hard(layer, Z)
        codes_per_layer.append(codes)
    return Z, codes_per_layer


def network_forward(net: Network, x: Tensor):
    """Single-input hard forward: logits and one HardSelection per layer.

    Entries are None for purely affine layers, which select nothing.
    """
    x = as_tensor(x)
    flat = x.reshape(-1)
    if flat.shape[0] != net.dims[0]:
        raise ShapeError(f"input has {flat.shape[0]} entries, expected {net.dims[0]}")
    logits, codes = network_forward_batch(net, flat[None, :])
    sels = [None if c is None else HardSelection(c[0]) for c in codes]
    return logits[0], sels


def bn_fold_affine(bn: BatchNorm) -> tuple[Tensor, Tensor]:
    """Inference-time batch-norm as (diagonal scale, shift)."""
    denom = np.sqrt(bn.var + bn.epsilon)
    scale = bn.scale / denom
    return scale, bn.shift - scale * bn.mean


def skip_block_forward(blk: SkipBlock, z: Tensor) -> Tensor:
    """Single-input residual block evaluation with hard activation codes."""
    z = as_tensor(z).reshape(-1)
    if z.shape[0] != layer_in_dim(blk):
        raise ShapeError(f"input has {z.shape[0]} entries, expected {layer_in_dim(blk)}")
    out, _ = layer_forward_hard(blk, z[None, :])
    return out[0]


def layer_selected_affine(layer: LayerSpec, z: Tensor) -> tuple[Tensor, Tensor]:
    """(A, b) of the affine map the layer applies around the given input.

    For affine layers this is the layer itself; for selector layers it is
    the region the input falls in (ties to the lowest region index).
    """
    z = as_tensor(z).reshape(-1)
    d = layer_in_dim(layer)
    if z.shape[0] != d:
        raise ShapeError(f"input has {z.shape[0]} entries, expected {d}")
    if isinstance(layer, Dense):
        return layer.W.copy(), layer.b.copy()
    if isinstance(layer, Conv):
        return layer.matrix().copy(), layer.bias_flat()
    if isinstance(layer, Activation):
        lo, hi = layer.slopes()
        slope = np.where(z > 0, hi, lo)
        return np.diag(slope), np.zeros(d)
    if isinstance(layer, MaxPool):
        idx = layer.padded_indices()
        winners = idx[np.arange(idx.shape[0]), np.argmax(z[idx], axis=1)]
        A = np.zeros((idx.shape[0], d))
        A[np.arange(idx.shape[0]), winners] = 1.0
        return A, np.zeros(idx.shape[0])
    if isinstance(layer, AvgPool):
        P = layer.matrix()
        return P, np.zeros(P.shape[0])
    if isinstance(layer, BatchNorm):
        scale, shift = bn_fold_affine(layer)
        return np.diag(scale), shift.copy()
    if isinstance(layer, SkipBlock):
        pre = layer.conv.matrix() @ z + layer.conv.bias_flat()
        Aact, bact = layer_selected_affine(layer.activation, pre)
        A = layer.skip.matrix() + Aact @ layer.conv.matrix()
        b = Aact @ layer.conv.bias_flat() + bact + layer.skip_bias
        return A, b
    raise StructureError(f"unknown layer {type(layer).__name__}")


# ---------------------------------------------------------------------------
# apodized patch reconstruction
# ---------------------------------------------------------------------------

def apodized_reconstruct(z: Tensor, patch_shape, window: Tensor) -> Tensor:
    """Sum windowed overlapping patches (unit stride) back into an image.

    Wherever the per-pixel coverage weight (sum of window values over all
    patches touching the pixel) equals 1, the reconstruction equals z; the
    full-coverage interior must have unit coverage within 1e-9 or the
    window is rejected.
    """
    z = as_tensor(z)
    window = as_tensor(window)
    ph, pw = (int(s) for s in patch_shape)
    if z.ndim != 2:
        raise ShapeError(f"expected a 2-D image, got shape {z.shape}")
    if window.shape != (ph, pw):
        raise ShapeError(f"window shape {window.shape} does not match patch {ph}x{pw}")
    if np.any(window < 0):
        raise WindowError("window entries must be nonnegative")
    h, w = z.shape
    if ph > h or pw > w:
        raise ShapeError("patch exceeds image")
    recon = np.zeros_like(z)
    coverage = np.zeros_like(z)
    for y in range(h - ph + 1):
        for x in range(w - pw + 1):
            recon[y : y + ph, x : x + pw] += window * z[y : y + ph, x : x + pw]
            coverage[y : y + ph, x : x + pw] += window
    inner = interior_mask((h, w), (ph, pw))
    if np.any(np.abs(coverage[inner] - 1.0) > 1e-9):
        worst = float(np.max(np.abs(coverage[inner] - 1.0)))
        raise WindowError(f"interior coverage deviates from 1 by {worst:.3e}")
    return recon


def interior_mask(image_shape, patch_shape) -> np.ndarray:
    """Boolean mask of pixels touched by every offset of the sliding patch."""
    h, w = (int(s) for s in image_shape)
    ph, pw = (int(s) for s in patch_shape)
    mask = np.zeros((h, w), dtype=bool)
    mask[ph - 1 : h - ph + 1, pw - 1 : w - pw + 1] = True
    return mask


def slope_nonnegativity(p: MasoParams) -> bool:
    """True iff every slope entry is nonnegative (the increasing-layer test)."""
    return bool(np.all(p.A >= 0.0))


# ---------------------------------------------------------------------------
# assembly helpers
# ---------------------------------------------------------------------------

def pool_regions_2d(shape, window, stride=None):
    """Index regions of a (C, H, W) tensor pooled channelwise.

    Returns (regions, out_shape).  Windows are laid out at the given
    stride (defaults to the window, i.e. non-overlapping); partial windows
    at the border are dropped, matching 'valid' pooling.
    """
    c, h, w = (int(s) for s in shape)
    wh, ww = (int(s) for s in window)
    sh, sw = (wh, ww) if stride is None else (int(stride[0]), int(stride[1]))
    if wh > h or ww > w:
        raise DomainError("pooling window exceeds input")
    h_out = (h - wh) // sh + 1
    w_out = (w - ww) // sw + 1
    regions = []
    for ch in range(c):
        for y in range(h_out):
            for x in range(w_out):
                regions.append(
                    tuple(
                        (ch * h + y * sh + p) * w + x * sw + q
                        for p in range(wh)
                        for q in range(ww)
                    )
                )
    return tuple(regions), (c, h_out, w_out)


def make_mlp(dims, kind: str = "relu", nu: float = 0.01, seed: int = 0) -> Network:
    """Fully connected net with the given widths and a final linear layer.

    Weights are Gaussian with scale 1/sqrt(fan-in), biases zero; each
    hidden affine layer is followed by the chosen activation.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise DomainError("need at least input and output widths")
    rng = np.random.default_rng(seed)
    layers: list = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        W = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        layers.append(Dense(W, np.zeros(fan_out)))
        if i < len(dims) - 2:
            layers.append(Activation(kind, fan_out, nu))
    return Network(layers, (dims[0],), dims[-1])
