"""Dense numeric kernels sized to this architecture, with hand gradients.

Everything operates on plain numpy arrays; trainable state is a ``Param``
(value + accumulated gradient). Forward functions return whatever cache
their backward needs. Training runs in float32 by default; tests and the
gradient checker use float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid  # numerically stable logistic


class NumericError(FloatingPointError):
    """Raised when training produces a non-finite loss."""


@dataclass(eq=False)
class Param:
    value: np.ndarray
    grad: np.ndarray | None = None

    @property
    def g(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        return self.grad

    @g.setter
    def g(self, value) -> None:
        self.grad = np.asarray(value, dtype=self.value.dtype)

    def zero_grad(self) -> None:
        self.grad = None


def relu(x):
    return np.maximum(x, 0)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class TrainContext:
    """Carries train/eval mode, the dropout rate, and the stream of masks."""

    training: bool = False
    dropout: float = 0.0
    rng: np.random.Generator | None = None

    def mask(self, shape, dtype):
        """Inverted-dropout mask, or None when dropout is inactive."""
        if not self.training or self.dropout <= 0.0:
            return None
        keep = self.rng.random(shape) >= self.dropout
        return keep.astype(dtype) / dtype(1.0 - self.dropout)


EVAL = TrainContext()


def dropout(x: np.ndarray, rate: float, ctx: TrainContext) -> np.ndarray:
    """Standalone dropout; at evaluation time it is the identity."""
    if not ctx.training or rate <= 0.0:
        return x
    keep = ctx.rng.random(x.shape) >= rate
    return x * keep / x.dtype.type(1.0 - rate)


@dataclass
class EmbeddingBlock:
    """Residual transform v -> gain * v + ReLU(v) @ W^T.

    ``gain`` starts at 1 and ``weight`` at 0 so a fresh block is exactly the
    identity. The inner ReLU gets a dropout site in training mode.
    """

    weight: Param  # (D, D)
    gain: Param    # scalar

    @staticmethod
    def identity(dim: int, dtype=np.float32) -> "EmbeddingBlock":
        return EmbeddingBlock(
            weight=Param(np.zeros((dim, dim), dtype=dtype)),
            gain=Param(np.asarray(1.0, dtype=dtype)),
        )

    def forward(self, x: np.ndarray, ctx: TrainContext = EVAL):
        h = relu(x)
        mask = ctx.mask(h.shape, x.dtype.type)
        hd = h if mask is None else h * mask
        out = self.gain.value * x + hd @ self.weight.value.T
        return out, (x, hd, mask)

    def backward(self, dout: np.ndarray, cache) -> np.ndarray:
        x, hd, mask = cache
        self.gain.g += np.sum(dout * x)
        self.weight.g += dout.reshape(-1, dout.shape[-1]).T @ hd.reshape(-1, hd.shape[-1])
        dh = dout @ self.weight.value
        if mask is not None:
            dh = dh * mask
        return self.gain.value * dout + dh * (x > 0)

    def params(self, prefix: str) -> dict[str, Param]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.gain": self.gain}


def embedding_block_forward(v: np.ndarray, weight: np.ndarray, gain: float) -> np.ndarray:
    """Evaluation-mode residual transform on a single vector or batch."""
    return gain * v + relu(v) @ weight.T


@dataclass
class AttentionFusion:
    """Fuses per-label component vectors into one classifier vector.

    Components are gated through sigmoid(transform @ ReLU(component)),
    concatenated, and mapped by ``combine`` to one logit per component;
    the softmax of those logits weights the convex combination.
    """

    transform: Param  # (D, D)
    combine: Param    # (C, C*D)

    @staticmethod
    def init(dim: int, n_components: int, rng: np.random.Generator, dtype=np.float32):
        bound = 1.0 / np.sqrt(dim)
        return AttentionFusion(
            transform=Param(rng.uniform(-bound, bound, (dim, dim)).astype(dtype)),
            combine=Param(
                rng.uniform(-bound, bound, (n_components, n_components * dim)).astype(dtype)
            ),
        )

    @property
    def n_components(self) -> int:
        return self.combine.value.shape[0]

    def forward(self, comps: np.ndarray, ctx: TrainContext = EVAL):
        """comps: (C, m, D) -> (weights (m, D), attention (m, C), cache)."""
        c, m, d = comps.shape
        h = relu(comps)
        mask = ctx.mask(h.shape, comps.dtype.type)
        hd = h if mask is None else h * mask
        t = sigmoid(hd @ self.transform.value.T)          # (C, m, D)
        q = t.transpose(1, 0, 2).reshape(m, c * d)        # (m, C*D)
        logits = q @ self.combine.value.T                 # (m, C)
        alpha = softmax_rows(logits)
        w = np.einsum("mc,cmd->md", alpha, comps)
        return w, alpha, (comps, hd, mask, t, q, alpha)

    def backward(self, dw: np.ndarray, cache) -> np.ndarray:
        comps, hd, mask, t, q, alpha = cache
        c, m, d = comps.shape
        dalpha = np.einsum("md,cmd->mc", dw, comps)
        dcomps = np.einsum("mc,md->cmd", alpha, dw)
        # softmax backward
        dlogits = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
        self.combine.g += dlogits.T @ q
        dq = dlogits @ self.combine.value                 # (m, C*D)
        dt = dq.reshape(m, c, d).transpose(1, 0, 2)       # (C, m, D)
        ds = dt * t * (1.0 - t)
        self.transform.g += np.einsum("cme,cmd->ed", ds, hd)
        dh = ds @ self.transform.value
        if mask is not None:
            dh = dh * mask
        dcomps += dh * (comps > 0)
        return dcomps

    def params(self, prefix: str) -> dict[str, Param]:
        return {f"{prefix}.transform": self.transform, f"{prefix}.combine": self.combine}


def fuse_sum(comps: np.ndarray):
    """Unweighted mean of components; the ablation alternative to attention."""
    w = comps.mean(axis=0)
    return w, (comps.shape[0],)


def fuse_sum_backward(dw: np.ndarray, cache) -> np.ndarray:
    (c,) = cache
    return np.broadcast_to(dw / c, (c,) + dw.shape).copy()


def bce_with_logits(scores: np.ndarray, targets: np.ndarray):
    """Mean binary cross entropy over +-1 targets, from raw logits.

    Returns (loss, dloss/dscores). Uses the log-sum form, stable for large
    |score|.
    """
    z = -targets * scores
    loss = float(np.mean(np.logaddexp(0.0, z)))
    grad = (-targets * sigmoid(z) / scores.size).astype(scores.dtype)
    return loss, grad


class Adam:
    """Bias-corrected Adam over a named parameter dict.

    Matches the common framework defaults: moments initialized at zero,
    update = lr * m_hat / (sqrt(v_hat) + eps). Parameters whose grad is
    unset are skipped for that step.
    """

    def __init__(self, params: dict[str, Param], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.moments = {
            name: (np.zeros_like(p.value), np.zeros_like(p.value))
            for name, p in params.items()
        }
        self.lr_scale = {name: 1.0 for name in params}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            m, v = self.moments[name]
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * np.square(p.grad)
            lr = self.lr * self.lr_scale[name]
            p.value -= (lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def decay(self, factor: float) -> None:
        self.lr *= factor


class SpectralNorm:
    """Per-matrix persistent power iteration for largest-singular-value control.

    One iteration per call; the matrix is rescaled in place by
    1 / max(1, sigma_estimate), so repeated application drives the spectral
    norm toward at most one while leaving already-contractive matrices alone.
    """

    def __init__(self, rows: int, rng: np.random.Generator, dtype=np.float32):
        u = rng.standard_normal(rows)
        self.u = (u / np.linalg.norm(u)).astype(dtype)

    def apply(self, w: np.ndarray) -> float:
        wv = w.T @ self.u
        nv = np.linalg.norm(wv)
        if nv == 0.0:
            return 0.0
        v = wv / nv
        wu = w @ v
        nu = np.linalg.norm(wu)
        if nu == 0.0:
            return 0.0
        self.u = (wu / nu).astype(w.dtype)
        sigma = float(self.u @ w @ v)
        if sigma > 1.0:
            w /= w.dtype.type(sigma)
        return sigma


def spectral_regularize(w: np.ndarray, state: SpectralNorm) -> float:
    """Apply one spectral-normalization step in place; returns the estimate."""
    return state.apply(w)


def finite_difference_gradients(
    loss_fn, param: Param, eps: float = 1e-6, coords: np.ndarray | None = None
) -> np.ndarray:
    """Central finite differences of ``loss_fn()`` w.r.t. selected coordinates."""
    flat = param.value.reshape(-1)
    if coords is None:
        coords = np.arange(flat.size)
    out = np.empty(coords.size, dtype=np.float64)
    for i, c in enumerate(coords):
        orig = flat[c]
        flat[c] = orig + eps
        hi = loss_fn()
        flat[c] = orig - eps
        lo = loss_fn()
        flat[c] = orig
        out[i] = (hi - lo) / (2.0 * eps)
    return out


def max_grad_error(
    loss_fn,
    params: dict[str, Param],
    eps: float = 1e-6,
    max_coords: int = 128,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest relative disagreement between stored grads and finite differences.

    ``params`` must already hold analytic gradients for the loss that
    ``loss_fn`` recomputes. Coordinates are subsampled for large tensors.
    The relative error is ||fd - grad||_inf / max(||fd||_inf, ||grad||_inf, 1e-8),
    evaluated per parameter.
    """
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p in params.values():
        if p.grad is None:
            raise ValueError("analytic gradients must be computed before checking")
        size = p.value.size
        coords = (
            np.sort(rng.choice(size, size=max_coords, replace=False))
            if size > max_coords
            else np.arange(size)
        )
        fd = finite_difference_gradients(loss_fn, p, eps=eps, coords=coords)
        an = p.grad.reshape(-1)[coords]
        scale = max(np.abs(fd).max(initial=0.0), np.abs(an).max(initial=0.0), 1e-8)
        worst = max(worst, float(np.abs(fd - an).max(initial=0.0)) / scale)
    return worst


# --- checkpoint container -------------------------------------------------
#
# Byte layout (version 1, little endian):
#   magic b"GXTN", u32 version, u32 tensor count, then for each tensor in
#   ascending name order: u16 name length, name utf-8, u8 dtype code,
#   u8 ndim, u64 per dimension, raw array bytes.

_MAGIC = b"GXTN"
_VERSION = 1
_DTYPES = {0: np.float32, 1: np.float64, 2: np.int64, 3: np.int32}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(tensors)))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name])
            shape = arr.shape  # ascontiguousarray promotes 0-d to (1,)
            arr = np.ascontiguousarray(arr)
            code = _CODES.get(arr.dtype)
            if code is None:
                raise ValueError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<BB", code, len(shape)))
            fh.write(struct.pack(f"<{len(shape)}Q", *shape))
            fh.write(arr.tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"{path}: not a tensor checkpoint")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    off = 12
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        code, ndim = struct.unpack_from("<BB", blob, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}Q", blob, off)
        off += 8 * ndim
        dtype = np.dtype(_DTYPES[code])
        nbytes = int(np.prod(shape)) * dtype.itemsize if ndim else dtype.itemsize
        arr = np.frombuffer(blob[off : off + nbytes], dtype=dtype).reshape(shape).copy()
        off += nbytes
        out[name] = arr
    return out
