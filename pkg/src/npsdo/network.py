"""Hierarchical preconditioner network with image-dependent 3x3 kernels.

Level ``l`` convolves its input with kernels predicted from the local 3x3
window of the indicator image, average-pools to level ``l + 1``, upsamples
the coarse result, convolves again and blends the two branches with two
image-dependent scalars. The coarsest level is a single convolution. The
map is linear in the residual for fixed parameters and image.

Kernel slot ``s = 3 * (a + 1) + (b + 1)`` holds the weight applied to
``x[i + a, j + b]``. Fields are ``(Nx, Ny)`` arrays (or ``(batch, Nx, Ny)``).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .discretization import ReductionMap, pad_vector, restrict_vector
from .errors import DimensionError, FormatError
from .preconditioners import Preconditioner
from .scene import IndicatorImage, check_divisible, pad_image

NPM_MAGIC = b"NPMW"
NPM_VERSION = 1
OFFSETS = [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1)]
CONV_SIZE = 9 * 27 + 9
LINEAR_SIZE = 27 + 1


def slot(a: int, b: int) -> int:
    return 3 * (a + 1) + (b + 1)


@dataclass
class ConvBlockParams:
    W: np.ndarray  # (9, 3, 3, 3): kernel slot, channel, window row, window col
    B: np.ndarray  # (9,)

    def tensors(self):
        return [self.W, self.B]


@dataclass
class LinearBlockParams:
    K: np.ndarray  # (3, 3, 3)
    B: np.ndarray  # 0-d

    def tensors(self):
        return [self.K, self.B]


@dataclass
class LevelParams:
    conv_down: ConvBlockParams
    conv_up: ConvBlockParams
    lin_a: LinearBlockParams
    lin_b: LinearBlockParams

    def tensors(self):
        return (self.conv_down.tensors() + self.conv_up.tensors()
                + self.lin_a.tensors() + self.lin_b.tensors())


@dataclass
class NetParams:
    """Weights for a depth-``depth`` network: ``depth - 1`` full levels plus
    the coarsest convolution. Also used as the container for gradients."""

    depth: int
    levels: list = field(default_factory=list)
    coarsest: ConvBlockParams | None = None

    def tensors(self) -> list[np.ndarray]:
        """All parameter arrays in file order (views, not copies)."""
        out = []
        for lv in self.levels:
            out += lv.tensors()
        return out + self.coarsest.tensors()

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.tensors())

    @property
    def dtype(self):
        return self.coarsest.W.dtype

    def map(self, fn) -> "NetParams":
        """New NetParams with ``fn`` applied to every tensor."""
        def conv(p):
            return ConvBlockParams(fn(p.W), fn(p.B))

        def lin(p):
            return LinearBlockParams(fn(p.K), fn(p.B))

        levels = [LevelParams(conv(lv.conv_down), conv(lv.conv_up), lin(lv.lin_a), lin(lv.lin_b))
                  for lv in self.levels]
        return NetParams(self.depth, levels, conv(self.coarsest))

    def astype(self, dtype) -> "NetParams":
        return self.map(lambda t: np.array(t, dtype=dtype))

    def copy(self) -> "NetParams":
        return self.map(np.copy)

    def zeros_like(self) -> "NetParams":
        return self.map(np.zeros_like)

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors()])

    def set_flat(self, vec):
        vec = np.asarray(vec)
        if vec.size != self.n_params:
            raise DimensionError(f"expected {self.n_params} values, got {vec.size}")
        pos = 0
        for t in self.tensors():
            t[...] = vec[pos:pos + t.size].reshape(t.shape)
            pos += t.size

    @classmethod
    def zeros(cls, depth: int, dtype=np.float32) -> "NetParams":
        if depth < 1:
            raise ValueError("depth must be >= 1")

        def conv():
            return ConvBlockParams(np.zeros((9, 3, 3, 3), dtype), np.zeros(9, dtype))

        def lin():
            return LinearBlockParams(np.zeros((3, 3, 3), dtype), np.zeros((), dtype))

        levels = [LevelParams(conv(), conv(), lin(), lin()) for _ in range(depth - 1)]
        return cls(depth, levels, conv())


def expected_param_count(depth: int) -> int:
    return (depth - 1) * (2 * CONV_SIZE + 2 * LINEAR_SIZE) + CONV_SIZE


def init_params(depth: int, seed: int = 0, dtype=np.float32) -> NetParams:
    """Uniform in [-s, s] with s = 1/sqrt(27), the fan-in of every block."""
    rng = np.random.default_rng(seed)
    s = 1.0 / np.sqrt(27.0)
    p = NetParams.zeros(depth, np.float64)
    for t in p.tensors():
        t[...] = rng.uniform(-s, s, size=t.shape)
    return p.astype(dtype)


def save_npm(path, params: NetParams):
    with open(path, "wb") as fh:
        fh.write(NPM_MAGIC)
        fh.write(struct.pack("<III", NPM_VERSION, 2, params.depth))
        for t in params.tensors():
            fh.write(np.asarray(t, dtype="<f4").tobytes(order="C"))


def load_npm(path) -> NetParams:
    raw = Path(path).read_bytes()
    if raw[:4] != NPM_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, dim, depth = struct.unpack_from("<III", raw, 4)
    if version != NPM_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dim != 2:
        raise FormatError(f"{path}: only 2D models are supported (file has dim={dim})")
    p = NetParams.zeros(depth, np.float32)
    n = p.n_params
    if len(raw) - 16 != 4 * n:
        raise FormatError(f"{path}: payload has {len(raw) - 16} bytes, expected {4 * n}")
    p.set_flat(np.frombuffer(raw, dtype="<f4", count=n, offset=16))
    return p


# --------------------------------------------------------------------------
# elementary blocks


def image_windows(I: IndicatorImage | np.ndarray, dtype=np.float32) -> np.ndarray:
    """(27, Nx, Ny) stack of the solid-padded 3x3 windows; row c*9 + 3*l + m."""
    data = I.data if isinstance(I, IndicatorImage) else np.asarray(I)
    padded = pad_image(IndicatorImage(data), 1).data.astype(dtype)
    nx, ny = data.shape[1:]
    win = np.empty((3, 3, 3, nx, ny), dtype=dtype)
    for l in range(3):
        for m in range(3):
            win[:, l, m] = padded[:, l:l + nx, m:m + ny]
    return win.reshape(27, nx, ny)


def conv_kernels(p: ConvBlockParams, windows: np.ndarray) -> np.ndarray:
    """Per-pixel kernels K[s, i, j] (affine in the image window)."""
    n = windows.shape[1:]
    K = p.W.reshape(9, 27).astype(windows.dtype) @ windows.reshape(27, -1)
    K += p.B.astype(windows.dtype)[:, None]
    return K.reshape((9,) + n)


def _shifted(xpad: np.ndarray, a: int, b: int, nx: int, ny: int) -> np.ndarray:
    return xpad[..., 1 + a:1 + a + nx, 1 + b:1 + b + ny]


def apply_kernels(K: np.ndarray, x: np.ndarray) -> np.ndarray:
    """y[i, j] = sum_s K[s, i, j] * x[i + a_s, j + b_s] with zero padding."""
    nx, ny = K.shape[1:]
    if x.shape[-2:] != (nx, ny):
        raise DimensionError(f"field {x.shape[-2:]} does not match kernels {(nx, ny)}")
    pad = [(0, 0)] * (x.ndim - 2) + [(1, 1), (1, 1)]
    xpad = np.pad(x, pad)
    y = np.zeros(np.broadcast_shapes(x.shape, (nx, ny)), dtype=np.result_type(K, x))
    for s, (a, b) in enumerate(OFFSETS):
        y += K[s] * _shifted(xpad, a, b, nx, ny)
    return y


def apply_kernels_transpose(K: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Adjoint of ``apply_kernels`` with respect to x."""
    nx, ny = K.shape[1:]
    pad = [(0, 0)] * (g.ndim - 2) + [(1, 1), (1, 1)]
    gpad = np.zeros(np.pad(g, pad).shape, dtype=g.dtype)
    for s, (a, b) in enumerate(OFFSETS):
        gpad[..., 1 + a:1 + a + nx, 1 + b:1 + b + ny] += K[s] * g
    return gpad[..., 1:-1, 1:-1]


def kernel_grad(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    """dL/dK[s, i, j] summed over any leading batch axis."""
    nx, ny = g.shape[-2:]
    pad = [(0, 0)] * (x.ndim - 2) + [(1, 1), (1, 1)]
    xpad = np.pad(x, pad)
    out = np.empty((9, nx, ny), dtype=g.dtype)
    for s, (a, b) in enumerate(OFFSETS):
        prod = g * _shifted(xpad, a, b, nx, ny)
        out[s] = prod.reshape(-1, nx, ny).sum(axis=0)
    return out


def conv_block_apply(p: ConvBlockParams, I: IndicatorImage, x) -> np.ndarray:
    """Spatially varying 3x3 convolution of ``x`` driven by image ``I``."""
    x = np.asarray(x)
    dtype = np.result_type(p.W.dtype, x.dtype)
    if I.ndim != 2 or x.shape[-2:] != I.dims:
        raise DimensionError(f"field {x.shape} does not match image {I.dims}")
    K = conv_kernels(p, image_windows(I, dtype))
    return apply_kernels(K, x.astype(dtype, copy=False))


def window_sums(windows: np.ndarray) -> np.ndarray:
    """(3, 3, 3) sums of the padded image over every shifted window."""
    return windows.reshape(27, -1).sum(axis=1).reshape(3, 3, 3)


def linear_block_value(p: LinearBlockParams, sums: np.ndarray, n_cells: int):
    return p.B + np.sum(p.K.astype(sums.dtype) * sums) / (9.0 * n_cells)


def linear_block_apply(p: LinearBlockParams, I: IndicatorImage) -> float:
    """Scalar B + (1 / (9 n_c)) sum_{i,j,c,l,m} K[c,l,m] I[c, i+l, j+m]."""
    dtype = np.result_type(p.K.dtype, np.float32)
    return linear_block_value(p, window_sums(image_windows(I, dtype)), I.n_cells)


def avg_pool2(x) -> np.ndarray:
    """Mean over 2x2 blocks of the last two axes."""
    x = np.asarray(x)
    nx, ny = x.shape[-2:]
    if nx % 2 or ny % 2:
        raise DimensionError(f"avg_pool2 needs even dims, got {(nx, ny)}")
    r = x.reshape(x.shape[:-2] + (nx // 2, 2, ny // 2, 2))
    return r.mean(axis=(-3, -1), dtype=x.dtype if x.dtype.kind == "f" else np.float64)


def avg_pool2_image(I: IndicatorImage) -> IndicatorImage:
    return IndicatorImage(avg_pool2(I.data))


def upsample2(x) -> np.ndarray:
    """Nearest-neighbour replication into 2x2 blocks (last two axes)."""
    x = np.asarray(x)
    return np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)


# --------------------------------------------------------------------------
# full network


class ImagePyramid:
    """Pooled images, padded windows and window sums for every level."""

    def __init__(self, I: IndicatorImage, depth: int, dtype=np.float32):
        if I.ndim != 2:
            raise DimensionError("the network is 2D only")
        check_divisible(I.dims, depth)
        self.depth = depth
        self.dtype = np.dtype(dtype)
        self.images = [I]
        for _ in range(depth - 1):
            self.images.append(avg_pool2_image(self.images[-1]))
        self.windows = [image_windows(img, self.dtype) for img in self.images]
        self.sums = [window_sums(w) for w in self.windows]
        self.n_cells = [img.n_cells for img in self.images]

    @property
    def dims(self):
        return self.images[0].dims


@dataclass
class LevelState:
    """Kernels and blend scalars of one level for fixed params and image."""

    K_down: np.ndarray
    K_up: np.ndarray | None = None
    z_a: float = 0.0
    z_b: float = 0.0


def level_states(params: NetParams, pyr: ImagePyramid) -> list[LevelState]:
    if params.depth != pyr.depth:
        raise DimensionError(f"params depth {params.depth} != pyramid depth {pyr.depth}")
    states = []
    for l, lv in enumerate(params.levels):
        w, s, n = pyr.windows[l], pyr.sums[l], pyr.n_cells[l]
        states.append(LevelState(conv_kernels(lv.conv_down, w), conv_kernels(lv.conv_up, w),
                                 linear_block_value(lv.lin_a, s, n),
                                 linear_block_value(lv.lin_b, s, n)))
    states.append(LevelState(conv_kernels(params.coarsest, pyr.windows[-1])))
    return states


def _forward(states, r, cache=None):
    """Iterative form of the recursion; ``cache`` collects backward inputs."""
    depth = len(states)
    inputs, ys = [], []
    x = r
    for l in range(depth):
        y = apply_kernels(states[l].K_down, x)
        inputs.append(x)
        ys.append(y)
        if l < depth - 1:
            x = avg_pool2(y)
    out = ys[-1]
    ups, us = [None] * depth, [None] * depth
    for l in range(depth - 2, -1, -1):
        up = upsample2(out)
        u = apply_kernels(states[l].K_up, up)
        ups[l], us[l] = up, u
        out = states[l].z_a * ys[l] + states[l].z_b * u
    if cache is not None:
        cache.update(inputs=inputs, ys=ys, ups=ups, us=us)
    return out


def forward(params: NetParams, I: IndicatorImage | ImagePyramid, r) -> np.ndarray:
    """Network output for residual field(s) ``r`` of shape (Nx, Ny) or (B, Nx, Ny).

    Arithmetic runs in the parameter dtype (float32 normally).
    """
    dtype = params.dtype
    pyr = I if isinstance(I, ImagePyramid) else ImagePyramid(I, params.depth, dtype)
    r = np.asarray(r)
    if r.shape[-2:] != pyr.dims:
        raise DimensionError(f"residual {r.shape} does not match image {pyr.dims}")
    return _forward(level_states(params, pyr), r.astype(dtype, copy=False))


def forward_backward(params: NetParams, pyr: ImagePyramid, r: np.ndarray, grad_out_fn):
    """Run forward, call ``grad_out_fn(out) -> (value, dL/dout)``, backpropagate.

    Returns ``(value, out, grads)`` where ``grads`` is a NetParams of
    parameter gradients summed over the batch axis of ``r``.
    """
    states = level_states(params, pyr)
    cache = {}
    out = _forward(states, r.astype(params.dtype, copy=False), cache)
    value, g_out = grad_out_fn(out)
    g_out = np.asarray(g_out, dtype=params.dtype)
    grads = params.zeros_like()
    depth = params.depth
    ys, ups, us, inputs = cache["ys"], cache["ups"], cache["us"], cache["inputs"]
    g_y = [None] * depth
    g = g_out
    # fine-to-coarse sweep mirroring the upward pass of _forward
    for l in range(depth - 1):
        st, lv, gl = states[l], params.levels[l], grads.levels[l]
        w, s, n = pyr.windows[l], pyr.sums[l], pyr.n_cells[l]
        g_za = np.sum(g * ys[l])
        g_zb = np.sum(g * us[l])
        g_y[l] = st.z_a * g
        g_u = st.z_b * g
        _conv_param_grad(gl.conv_up, kernel_grad(g_u, ups[l]), w)
        g_up = apply_kernels_transpose(st.K_up, g_u)
        g = 4.0 * avg_pool2(g_up)  # adjoint of upsample2
        gl.lin_a.K[...] = g_za * s / (9.0 * n)
        gl.lin_a.B[...] = g_za
        gl.lin_b.K[...] = g_zb * s / (9.0 * n)
        gl.lin_b.B[...] = g_zb
    g_y[depth - 1] = g
    # coarse-to-fine sweep through the downward convolutions
    g_in = None
    for l in range(depth - 1, -1, -1):
        gy = g_y[l] if g_in is None else g_y[l] + upsample2(g_in) / 4.0  # adjoint of avg_pool2
        block = params.coarsest if l == depth - 1 else params.levels[l].conv_down
        gblock = grads.coarsest if l == depth - 1 else grads.levels[l].conv_down
        _conv_param_grad(gblock, kernel_grad(gy, inputs[l]), pyr.windows[l])
        if l > 0:
            g_in = apply_kernels_transpose(states[l].K_down, gy)
    return value, out, grads


def _conv_param_grad(gp: ConvBlockParams, gK: np.ndarray, windows: np.ndarray):
    gp.W[...] = (gK.reshape(9, -1) @ windows.reshape(27, -1).T).reshape(9, 3, 3, 3)
    gp.B[...] = gK.reshape(9, -1).sum(axis=1)


class NeuralPreconditioner(Preconditioner):
    """apply(r) = restrict(forward(I, pad(r))) in float32; kernels are
    computed once at construction."""

    name = "neural"
    is_linear = True
    is_symmetric = False

    def __init__(self, params: NetParams, I: IndicatorImage, rmap: ReductionMap | None = None):
        self.params = params
        self.image = I
        self.rmap = rmap or ReductionMap.from_image(I)
        if self.rmap.n_c != I.n_cells:
            raise DimensionError("reduction map does not match image")
        self.pyramid = ImagePyramid(I, params.depth, params.dtype)
        self.states = level_states(params, self.pyramid)

    def apply(self, r):
        r = np.asarray(r)
        if r.shape[-1] != self.rmap.n_f:
            raise DimensionError(f"residual has {r.shape[-1]} entries, expected {self.rmap.n_f}")
        full = pad_vector(r.astype(self.params.dtype), self.rmap)
        field_ = full.reshape(full.shape[:-1] + self.image.dims)
        out = _forward(self.states, field_)
        return restrict_vector(out.reshape(full.shape), self.rmap).astype(np.float64)


def neural_precond(params: NetParams, I: IndicatorImage, rmap: ReductionMap | None = None):
    return NeuralPreconditioner(params, I, rmap)
