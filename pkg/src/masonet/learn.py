"""Training machinery: loss, exact gradients, Adam, orthogonality tools.

Gradients are computed analytically for every layer kind in three
selection regimes:

* hard  -- the selection found at the forward pass is frozen and the
           gradient of the resulting affine map is returned (exact almost
           everywhere, one-sided on region boundaries),
* soft  -- selections are per-unit softmaxes of the affine scores and the
           gradient flows through them,
* beta  -- like soft but the scores are scaled by eta = beta/(1-beta);
           the gradient with respect to beta itself is also produced so
           beta can be learned through a logistic reparameterization.

Orthogonality comes in three flavors: a penalty on the final classifier
rows (templates), a penalty on cross-unit filter slopes, and a hard
Gram-Schmidt projection-subtraction pass.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .maso import HardSelection, MasoParams, forward_hard
from .ndcore import (
    DivergenceError,
    DomainError,
    DegeneracyError,
    PreconditionError,
    ShapeError,
    Tensor,
    as_tensor,
)

__all__ = [
    "Gradients",
    "TrainConfig",
    "AdamState",
    "cross_entropy",
    "forward_loss",
    "backward",
    "ortho_penalty_templates",
    "ortho_penalty_filters",
    "gram_schmidt",
    "adam_step",
    "train",
    "joint_map_factorial",
    "accuracy",
    "layer_params",
]

_BOUNDARY_GAP = 1e-7


@dataclass
class Gradients:
    """Parameter gradients keyed '<layer>.<field>' (plus '<layer>.beta')."""

    values: dict

    def __getitem__(self, key: str) -> Tensor:
        return self.values[key]

    def keys(self):
        return self.values.keys()


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 50
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gamma: float = 0.0          # template-orthogonality weight
    lam: float = 0.0            # filter-orthogonality weight
    beta_mode: str = "hard"     # hard | soft | beta
    beta: float = 0.5           # shared beta value when beta_mode == "beta"
    beta_learnable: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DomainError("learning rate must be positive")
        if self.epochs < 1:
            raise DomainError("need at least one epoch")
        if self.beta_mode not in ("hard", "soft", "beta"):
            raise DomainError(f"unknown beta_mode {self.beta_mode!r}")
        if self.beta_mode == "beta" and not 0.0 < self.beta < 1.0:
            raise DomainError("beta must lie strictly inside (0, 1)")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def cross_entropy(logits: Tensor, label: int) -> float:
    """-logits[label] + logsumexp(logits), stabilized by the max shift."""
    logits = as_tensor(logits).reshape(-1)
    label = int(label)
    if not 0 <= label < logits.shape[0]:
        raise DomainError(f"label {label} out of range for {logits.shape[0]} classes")
    m = logits.max()
    return float(np.log(np.sum(np.exp(logits - m))) + m - logits[label])


def _cross_entropy_batch(logits: Tensor, labels: np.ndarray) -> tuple[float, Tensor]:
    """Mean loss over the batch and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    p = e / e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    losses = np.log(e.sum(axis=1)) + m[:, 0] - logits[rows, labels]
    g = p.copy()
    g[rows, labels] -= 1.0
    return float(losses.mean()), g / n


# ---------------------------------------------------------------------------
# mode-aware forward with caches
# ---------------------------------------------------------------------------

def _eta_of(beta: float) -> float:
    return beta / (1.0 - beta)


def _beta_for_layers(net: L.Network, mode: str, beta) -> dict:
    """Per-selector-layer beta value for the given mode."""
    if mode == "hard":
        return {}
    out = {}
    for i, layer in enumerate(net.layers):
        if isinstance(layer, (L.Activation, L.MaxPool, L.SkipBlock)):
            if mode == "soft":
                out[i] = 0.5
            elif isinstance(beta, dict):
                out[i] = float(beta[i])
            elif beta is None:
                raise DomainError("beta mode needs a beta value")
            else:
                out[i] = float(beta)
    for i, b in out.items():
        if not 0.0 < b < 1.0:
            raise DomainError(f"layer {i}: beta must lie strictly inside (0, 1)")
    return out


def _soft_select_forward(s: Tensor, eta: float):
    """Weighted output of scores s (.., R) under T = softmax(eta * s)."""
    t = eta * s
    t = t - t.max(axis=-1, keepdims=True)
    T = np.exp(t)
    T /= T.sum(axis=-1, keepdims=True)
    out = np.sum(T * s, axis=-1)
    return out, T


def _activation_forward(layer: L.Activation, Z: Tensor, mode: str, beta):
    lo, hi = layer.slopes()
    if mode == "hard":
        out, codes = L.layer_forward_hard(layer, Z)
        return out, {"kind": "act-hard", "codes": codes, "slopes": (lo, hi)}
    s = np.stack([lo * Z, hi * Z], axis=-1)
    out, T = _soft_select_forward(s, _eta_of(beta))
    return out, {"kind": "act-soft", "s": s, "T": T, "beta": beta, "slopes": (lo, hi)}


def _maxpool_forward(layer: L.MaxPool, Z: Tensor, mode: str, beta):
    idx = layer.padded_indices()
    gathered = Z[:, idx]
    if mode == "hard":
        codes = np.argmax(gathered, axis=2)
        cache = {"kind": "pool-hard", "idx": idx, "codes": codes, "s": gathered}
        return gathered.max(axis=2), cache
    out, T = _soft_select_forward(gathered, _eta_of(beta))
    return out, {"kind": "pool-soft", "idx": idx, "s": gathered, "T": T, "beta": beta}


def _bn_forward(layer: L.BatchNorm, Z: Tensor, batch_stats: bool):
    if batch_stats and Z.shape[0] > 1:
        mu = Z.mean(axis=0)
        var = Z.var(axis=0)
    else:
        mu, var = layer.mean, layer.var
    denom = np.sqrt(var + layer.epsilon)
    xhat = (Z - mu) / denom
    out = layer.scale * xhat + layer.shift
    return out, {
        "kind": "bn",
        "xhat": xhat,
        "denom": denom,
        "Zc": Z - mu,
        "batch": batch_stats and Z.shape[0] > 1,
        "mu": mu,
        "var": var,
    }


def _layer_forward_train(layer, Z: Tensor, mode: str, beta, bn_batch_stats: bool):
    if isinstance(layer, L.Dense):
        return Z @ layer.W.T + layer.b, {"kind": "dense", "Zin": Z}
    if isinstance(layer, L.Conv):
        return Z @ layer.matrix().T + layer.bias_flat(), {"kind": "conv", "Zin": Z}
    if isinstance(layer, L.Activation):
        return _activation_forward(layer, Z, mode, beta)
    if isinstance(layer, L.MaxPool):
        return _maxpool_forward(layer, Z, mode, beta)
    if isinstance(layer, L.AvgPool):
        return Z @ layer.matrix().T, {"kind": "avg"}
    if isinstance(layer, L.BatchNorm):
        return _bn_forward(layer, Z, bn_batch_stats)
    if isinstance(layer, L.SkipBlock):
        pre = Z @ layer.conv.matrix().T + layer.conv.bias_flat()
        act, sub = _layer_forward_train(layer.activation, pre, mode, beta, bn_batch_stats)
        out = Z @ layer.skip.matrix().T + act + layer.skip_bias
        return out, {"kind": "skip", "Zin": Z, "pre": pre, "sub": sub}
    raise ShapeError(f"unknown layer {type(layer).__name__}")


def _forward_train(net: L.Network, X: Tensor, mode: str, betas: dict, bn_batch_stats: bool):
    Z = X
    caches = []
    for i, layer in enumerate(net.layers):
        Z, cache = _layer_forward_train(layer, Z, mode, betas.get(i), bn_batch_stats)
        caches.append(cache)
    return Z, caches


def forward_loss(
    net: L.Network,
    X: Tensor,
    labels,
    mode: str = "hard",
    beta=None,
    bn_batch_stats: bool = True,
) -> float:
    """Mean cross-entropy of a batch under the given selection regime.

    This is exactly the function whose gradients `backward` returns, which
    makes it the reference for finite-difference checks.  Batch-norm uses
    batch statistics here (training view); `network_forward` keeps using
    the stored inference statistics.
    """
    X, labels = _as_batch(net, X, labels)
    betas = _beta_for_layers(net, mode, beta)
    logits, _ = _forward_train(net, X, mode, betas, bn_batch_stats)
    loss, _ = _cross_entropy_batch(logits, labels)
    return loss


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def _soft_select_backward(G: Tensor, cache: dict):
    """Shared backward through out = sum_r T_r s_r, T = softmax(eta s).

    Returns (dout/ds contracted with G, d(loss)/d(eta) summed over the
    cache's units and batch).
    """
    s, T = cache["s"], cache["T"]
    eta = _eta_of(cache["beta"])
    out = np.sum(T * s, axis=-1)
    w = T * (1.0 + eta * (s - out[..., None]))
    Gs = G[..., None] * w
    # d out / d eta = E_T[s^2] - (E_T[s])^2, per unit
    dout_deta = np.sum(T * s * s, axis=-1) - out * out
    deta = float(np.sum(G * dout_deta))
    return Gs, deta


def _conv_param_grads(conv: L.Conv, Zin: Tensor, Gout: Tensor):
    """Filter/bias gradients from the batched input and output gradient."""
    n = Zin.shape[0]
    c_in, h, w = conv.in_shape
    c_out, h_out, w_out = L.conv_out_shape(conv, conv.in_shape)
    kh, kw = conv.filters.shape[2], conv.filters.shape[3]
    sh, sw = conv.stride
    ph, pw = L._pad_before(conv)
    pad_h = max(0, (h_out - 1) * sh + kh - ph - h)
    pad_w = max(0, (w_out - 1) * sw + kw - pw - w)
    Zimg = Zin.reshape(n, c_in, h, w)
    Zpad = np.pad(Zimg, ((0, 0), (0, 0), (ph, pad_h), (pw, pad_w)))
    Gimg = Gout.reshape(n, c_out, h_out, w_out)
    dfil = np.zeros_like(conv.filters)
    for p in range(kh):
        for q in range(kw):
            patch = Zpad[:, :, p : p + sh * h_out : sh, q : q + sw * w_out : sw]
            dfil[:, :, p, q] = np.einsum("noyx,niyx->oi", Gimg, patch)
    dbias = Gimg.sum(axis=(0, 2, 3))
    return dfil, dbias


def _layer_backward(layer, cache: dict, G: Tensor):
    """Returns (G w.r.t. layer input, param grads dict, d loss/d beta or None)."""
    kind = cache["kind"]
    if kind == "dense":
        Zin = cache["Zin"]
        return G @ layer.W, {"W": G.T @ Zin, "b": G.sum(axis=0)}, None
    if kind == "conv":
        dfil, dbias = _conv_param_grads(layer, cache["Zin"], G)
        return G @ layer.matrix(), {"filters": dfil, "bias": dbias}, None
    if kind == "act-hard":
        lo, hi = cache["slopes"]
        slope = np.where(cache["codes"] == 1, hi, lo)
        return G * slope, {}, None
    if kind == "act-soft":
        Gs, deta = _soft_select_backward(G, cache)
        lo, hi = cache["slopes"]
        Gin = Gs[..., 0] * lo + Gs[..., 1] * hi
        return Gin, {}, deta / (1.0 - cache["beta"]) ** 2
    if kind == "pool-hard":
        idx, codes = cache["idx"], cache["codes"]
        n, K = G.shape
        winners = idx[np.arange(K)[None, :], codes]
        Gin = np.zeros((n, layer.in_dim))
        np.add.at(Gin, (np.repeat(np.arange(n), K), winners.ravel()), G.ravel())
        return Gin, {}, None
    if kind == "pool-soft":
        Gs, deta = _soft_select_backward(G, cache)
        idx = cache["idx"]
        n = G.shape[0]
        Gin = np.zeros((n, layer.in_dim))
        rows = np.repeat(np.arange(n), idx.size)
        cols = np.tile(idx.ravel(), n)
        np.add.at(Gin, (rows, cols), Gs.reshape(n, -1).ravel())
        return Gin, {}, deta / (1.0 - cache["beta"]) ** 2
    if kind == "avg":
        return G @ layer.matrix(), {}, None
    if kind == "bn":
        return _bn_backward(layer, cache, G)
    if kind == "skip":
        dskip_bias = G.sum(axis=0)
        Gpre, _, dbeta = _layer_backward(layer.activation, cache["sub"], G)
        dfil, dbias = _conv_param_grads(layer.conv, cache["Zin"], Gpre)
        dskip_fil, _ = _conv_param_grads(layer.skip, cache["Zin"], G)
        Gin = Gpre @ layer.conv.matrix() + G @ layer.skip.matrix()
        grads = {
            "conv.filters": dfil,
            "conv.bias": dbias,
            "skip.filters": dskip_fil,
            "skip_bias": dskip_bias,
        }
        return Gin, grads, dbeta
    raise ShapeError(f"unknown cache kind {kind!r}")


def _bn_backward(layer: L.BatchNorm, cache: dict, G: Tensor):
    xhat, denom = cache["xhat"], cache["denom"]
    grads = {"scale": np.sum(G * xhat, axis=0), "shift": G.sum(axis=0)}
    dxhat = G * layer.scale
    if not cache["batch"]:
        return dxhat / denom, grads, None
    n = G.shape[0]
    Zc = cache["Zc"]
    dvar = np.sum(dxhat * Zc, axis=0) * (-0.5) * denom**-3
    dmu = -np.sum(dxhat, axis=0) / denom + dvar * (-2.0 / n) * Zc.sum(axis=0)
    Gin = dxhat / denom + dvar * 2.0 * Zc / n + dmu / n
    return Gin, grads, None


def _as_batch(net: L.Network, X, labels):
    X = as_tensor(X)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.dims[0]:
        raise ShapeError(f"batch shape {X.shape} does not match input dim {net.dims[0]}")
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (X.shape[0],):
        raise ShapeError("one label per input row required")
    if labels.size and (labels.min() < 0 or labels.max() >= net.class_count):
        raise DomainError("label out of range")
    return X, labels


def _cache_near_boundary(cache: dict, Zin: Tensor) -> bool:
    """Any unit of a hard-mode selector within the gap of a region tie?"""
    kind = cache["kind"]
    if kind == "act-hard":
        return bool(np.any(np.abs(Zin) < _BOUNDARY_GAP))
    if kind == "pool-hard":
        s = cache["s"]
        if s.shape[-1] < 2:
            return False
        top2 = np.sort(s, axis=-1)[..., -2:]
        return bool(np.any(top2[..., 1] - top2[..., 0] < _BOUNDARY_GAP))
    if kind == "skip":
        return _cache_near_boundary(cache["sub"], cache["pre"])
    return False


def backward(
    net: L.Network,
    x: Tensor,
    label,
    mode: str = "hard",
    beta=None,
    bn_batch_stats: bool = True,
) -> tuple[float, Gradients]:
    """Loss and analytic gradients of `forward_loss` at (x, label).

    Accepts a single input (1-D x, int label) or a batch.  In hard mode
    inputs close to a region boundary trigger a resample warning; the
    returned gradient is the one-sided derivative of the selected region.
    Gradient keys follow '<layer_index>.<field>'; in beta mode each
    selector layer additionally gets '<layer_index>.beta'.
    """
    X, labels = _as_batch(net, x, label)
    betas = _beta_for_layers(net, mode, beta)
    Zs = [X]
    caches = []
    Z = X
    for i, layer in enumerate(net.layers):
        Z, cache = _layer_forward_train(layer, Z, mode, betas.get(i), bn_batch_stats)
        caches.append(cache)
        Zs.append(Z)
    if mode == "hard":
        for i, cache in enumerate(caches):
            if _cache_near_boundary(cache, Zs[i]):
                warnings.warn(
                    f"layer {i}: input within {_BOUNDARY_GAP} of a region boundary; "
                    "the hard-mode gradient is one-sided; consider resampling",
                    RuntimeWarning,
                )
    loss, G = _cross_entropy_batch(Z, labels)
    values: dict = {}
    for i in range(len(net.layers) - 1, -1, -1):
        G, grads, dbeta = _layer_backward(net.layers[i], caches[i], G)
        for name, g in grads.items():
            values[f"{i}.{name}"] = g
        if mode == "beta" and dbeta is not None:
            values[f"{i}.beta"] = np.asarray(dbeta)
    return loss, Gradients(values)


# ---------------------------------------------------------------------------
# orthogonality
# ---------------------------------------------------------------------------

def ortho_penalty_templates(W_last: Tensor, gamma: float) -> tuple[float, Tensor]:
    """gamma * sum over ordered class pairs c1 != c2 of <W_c1, W_c2>^2.

    Returns the penalty and its gradient with respect to W_last.
    """
    W = as_tensor(W_last)
    if W.ndim != 2:
        raise ShapeError(f"expected a 2-D classifier matrix, got shape {W.shape}")
    Gm = W @ W.T
    np.fill_diagonal(Gm, 0.0)
    penalty = gamma * float(np.sum(Gm * Gm))
    grad = gamma * 4.0 * (Gm @ W)
    return penalty, grad


def ortho_penalty_filters(p, lam: float) -> tuple[float, Tensor]:
    """lam * cross-unit slope inner-product energy, same-unit pairs excluded.

    Accepts MasoParams (K x R x D slopes) or a plain 2-D weight matrix
    (rows = units, R = 1).  The gradient matches the input's slope shape.
    """
    if isinstance(p, MasoParams):
        A = p.A
    else:
        A = as_tensor(p)
        if A.ndim == 2:
            A = A[:, None, :]
        if A.ndim != 3:
            raise ShapeError(f"expected K x R x D slopes, got shape {A.shape}")
    K, R, D = A.shape
    F = A.reshape(K * R, D)
    Gm = F @ F.T
    unit = np.repeat(np.arange(K), R)
    cross = unit[:, None] != unit[None, :]
    Gm = np.where(cross, Gm, 0.0)
    penalty = lam * float(np.sum(Gm * Gm))
    grad = (lam * 4.0 * (Gm @ F)).reshape(K, R, D)
    if not isinstance(p, MasoParams) and as_tensor(p).ndim == 2:
        grad = grad[:, 0, :]
    return penalty, grad


def gram_schmidt(M: Tensor) -> Tensor:
    """Orthogonalize rows by sequential projection subtraction.

    Row k becomes w_k - sum_{j<k} (<q_j, w_k>/<q_j, q_j>) q_j against the
    already-processed rows q_j.  Rows are NOT renormalized, so
    already-orthogonal inputs pass through unchanged.
    """
    M = as_tensor(M)
    if M.ndim != 2:
        raise ShapeError(f"expected a matrix of rows, got shape {M.shape}")
    Q = M.copy()
    for k in range(Q.shape[0]):
        for j in range(k):
            Q[k] -= (Q[j] @ Q[k]) / (Q[j] @ Q[j]) * Q[j]
        if np.linalg.norm(Q[k]) <= 1e-10:
            raise DegeneracyError(f"row {k} is numerically dependent on earlier rows")
    return Q


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update; arrays are updated in place.

    Returns (params, state) so callers can thread the pair functionally.
    """
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for key, p in params.items():
        g = np.asarray(grads[key], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} ({key})")
        if key not in state.m:
            state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
        state.m[key] = b1 * state.m[key] + (1.0 - b1) * g
        state.v[key] = b2 * state.v[key] + (1.0 - b2) * g * g
        mhat = state.m[key] / corr1
        vhat = state.v[key] / corr2
        p -= config.learning_rate * mhat / (np.sqrt(vhat) + config.eps)
    return params, state


def layer_params(layer) -> dict:
    """Trainable arrays of one layer, keyed by field name."""
    if isinstance(layer, L.Dense):
        return {"W": layer.W, "b": layer.b}
    if isinstance(layer, L.Conv):
        return {"filters": layer.filters, "bias": layer.bias}
    if isinstance(layer, L.BatchNorm):
        return {"scale": layer.scale, "shift": layer.shift}
    if isinstance(layer, L.SkipBlock):
        return {
            "conv.filters": layer.conv.filters,
            "conv.bias": layer.conv.bias,
            "skip.filters": layer.skip.filters,
            "skip_bias": layer.skip_bias,
        }
    return {}


def accuracy(net: L.Network, X: Tensor, y: np.ndarray) -> float:
    logits, _ = L.network_forward_batch(net, X)
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(y)))


def _invalidate_conv_caches(net: L.Network):
    for layer in net.layers:
        if isinstance(layer, L.Conv):
            layer._matrix = None
        elif isinstance(layer, L.SkipBlock):
            layer.conv._matrix = None
            layer.skip._matrix = None


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def train(net: L.Network, dataset, config: TrainConfig):
    """Mini-batch Adam on cross-entropy plus the two orthogonality penalties.

    dataset is (X, y).  Returns (trained network, history) where history
    holds one dict per epoch with keys epoch, loss, accuracy,
    template_penalty, filter_penalty (and betas when beta is learnable).
    The input network is left untouched; batch order is drawn from the
    config seed, so runs are reproducible.
    """
    X, y = dataset
    X = as_tensor(X)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ShapeError("dataset must be (n x D features, n labels)")
    if y.size and (y.min() < 0 or y.max() >= net.class_count):
        raise DomainError("dataset label out of range for the network's classes")
    net = copy.deepcopy(net)
    rng = np.random.default_rng(config.seed)
    n = X.shape[0]
    bs = max(1, min(config.batch_size, n))

    params: dict = {}
    for i, layer in enumerate(net.layers):
        for name, arr in layer_params(layer).items():
            params[f"{i}.{name}"] = arr
    theta = {}
    if config.beta_mode == "beta" and config.beta_learnable:
        for i, layer in enumerate(net.layers):
            if isinstance(layer, (L.Activation, L.MaxPool, L.SkipBlock)):
                # logistic pre-parameter; beta = sigmoid(theta), init at config.beta
                theta[i] = np.array(np.log(config.beta / (1.0 - config.beta)))
                params[f"{i}.beta_raw"] = theta[i]

    last_dense = None
    for i, layer in enumerate(net.layers):
        if isinstance(layer, L.Dense):
            last_dense = i
    penalized = [
        (i, layer)
        for i, layer in enumerate(net.layers)
        if isinstance(layer, (L.Dense, L.Conv)) and i != last_dense
    ]

    def current_beta():
        if theta:
            return {i: float(_sigmoid(t)) for i, t in theta.items()}
        return config.beta if config.beta_mode == "beta" else None

    state = AdamState()
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            betadict = current_beta()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                loss, grads = backward(
                    net, X[idx], y[idx], mode=config.beta_mode, beta=betadict
                )
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became non-finite at epoch {epoch}")
            gvals = dict(grads.values)
            if config.gamma > 0 and last_dense is not None:
                _, gpen = ortho_penalty_templates(net.layers[last_dense].W, config.gamma)
                gvals[f"{last_dense}.W"] = gvals.get(f"{last_dense}.W", 0.0) + gpen
            if config.lam > 0:
                for i, layer in penalized:
                    Wmat = layer.W if isinstance(layer, L.Dense) else layer.filters.reshape(
                        layer.filters.shape[0], -1
                    )
                    _, gpen = ortho_penalty_filters(Wmat, config.lam)
                    key = f"{i}.W" if isinstance(layer, L.Dense) else f"{i}.filters"
                    gvals[key] = gvals.get(key, 0.0) + gpen.reshape(
                        np.asarray(gvals[key]).shape
                    )
            if theta:
                for i, t in theta.items():
                    b = float(_sigmoid(t))
                    dbeta = float(gvals.pop(f"{i}.beta", 0.0))
                    gvals[f"{i}.beta_raw"] = np.asarray(dbeta * b * (1.0 - b))
            else:
                for i in range(len(net.layers)):
                    gvals.pop(f"{i}.beta", None)
            adam_step(params, gvals, state, config)
            _invalidate_conv_caches(net)

        acc = accuracy(net, X, y)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            epoch_loss = forward_loss(net, X, y, mode=config.beta_mode, beta=current_beta())
        tpen = 0.0
        if last_dense is not None:
            tpen, _ = ortho_penalty_templates(net.layers[last_dense].W, config.gamma)
        fpen = 0.0
        for i, layer in penalized:
            Wmat = layer.W if isinstance(layer, L.Dense) else layer.filters.reshape(
                layer.filters.shape[0], -1
            )
            pen, _ = ortho_penalty_filters(Wmat, config.lam)
            fpen += pen
        entry = {
            "epoch": epoch,
            "loss": epoch_loss,
            "accuracy": acc,
            "template_penalty": tpen,
            "filter_penalty": fpen,
        }
        if theta:
            entry["betas"] = tuple(float(_sigmoid(t)) for t in theta.values())
        history.append(entry)
    return net, history


# ---------------------------------------------------------------------------
# factorial joint MAP
# ---------------------------------------------------------------------------

def joint_map_factorial(p: MasoParams, z: Tensor) -> HardSelection:
    """Joint argmax over all R^K region configurations, computed unit by unit.

    Valid when slopes of different units are mutually orthogonal: the joint
    score <z, sum_k A[k, r_k, :]> + sum_k B[k, r_k] then separates across
    units, so the per-unit hard codes solve the joint problem in linear
    time instead of R^K.
    """
    F = p.A.reshape(p.K * p.R, p.D)
    Gm = F @ F.T
    unit = np.repeat(np.arange(p.K), p.R)
    cross = unit[:, None] != unit[None, :]
    worst = float(np.max(np.abs(np.where(cross, Gm, 0.0)))) if p.K > 1 else 0.0
    if worst > 1e-9:
        raise PreconditionError(
            f"cross-unit slopes are not orthogonal (max inner product {worst:.3e})"
        )
    _, sel = forward_hard(p, z)
    return sel
