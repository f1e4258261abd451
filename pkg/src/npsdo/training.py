"""Right-hand-side datasets, the residual-norm loss, gradients and training."""
from __future__ import annotations

import csv
import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .discretization import ReductionMap, floating_components, pad_vector, read_triplets, \
    restrict_vector, write_triplets
from .errors import DimensionError, FormatError, TrainingDivergedError
from .linalg import SparseMatrix, lanczos_ritz
from .network import ImagePyramid, NetParams, forward, forward_backward, init_params
from .scene import FLUID, IndicatorImage, read_scn, write_scn

GRAD_NORM_FLOOR = 1e-30
DATASET_MODES = ("ritz", "random", "eigenmodes")


# --------------------------------------------------------------------------
# right-hand sides


def _normalize_rows(X: np.ndarray) -> np.ndarray:
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def generate_rhs(A: SparseMatrix, n_ritz: int, n_rhs: int, seed=0, mode: str = "ritz",
                 image: IndicatorImage | None = None, project_constant: bool = False) -> np.ndarray:
    """``(n_rhs, n)`` array of unit-norm right-hand sides.

    ``ritz``: random standard-normal combinations of ``n_ritz`` Lanczos Ritz
    vectors. ``random``: normalized Gaussian vectors. ``eigenmodes``: random
    combinations of the ``n_ritz`` smoothest cosine modes of the full box,
    masked to fluid cells (needs ``image``).
    """
    if mode not in DATASET_MODES:
        raise ValueError(f"unknown dataset mode {mode!r}")
    n = A.shape[0]
    if n_rhs == 0:
        return np.zeros((0, n))
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    basis_seed, coef_seed = ss.spawn(2)
    rng = np.random.default_rng(coef_seed)
    if mode == "random":
        X = rng.standard_normal((n_rhs, n))
    else:
        if mode == "ritz":
            if n_ritz > n:
                raise DimensionError(f"n_ritz={n_ritz} exceeds system size {n}")
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                pairs = lanczos_ritz(A, n_ritz, seed=basis_seed, project_constant=project_constant)
            for w in caught:
                warnings.warn(f"generate_rhs: {w.message}; using {len(pairs)} Ritz vectors",
                              RuntimeWarning, stacklevel=2)
            V = np.stack([p.vector for p in pairs], axis=1)
        else:
            if image is None:
                raise ValueError("eigenmodes mode needs the indicator image")
            V = masked_box_modes(image, n_ritz)
        X = rng.standard_normal((n_rhs, V.shape[1])) @ V.T
    if project_constant:
        X -= X.mean(axis=1, keepdims=True)
    return _normalize_rows(X)


def masked_box_modes(image: IndicatorImage, count: int) -> np.ndarray:
    """Lowest-frequency Neumann eigenmodes of the full box, restricted to fluid."""
    nx, ny = image.dims
    kx, ky = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    freq = (kx / nx) ** 2 + (ky / ny) ** 2
    order = np.argsort(freq.ravel(), kind="stable")[:count]
    xi = (np.arange(nx) + 0.5) / nx
    yj = (np.arange(ny) + 0.5) / ny
    fluid = (image.labels() == FLUID).ravel()
    cols = []
    for idx in order:
        a, b = divmod(int(idx), ny)
        mode = np.outer(np.cos(np.pi * a * xi), np.cos(np.pi * b * yj)).ravel()
        cols.append(mode[fluid])
    return np.stack(cols, axis=1)


# --------------------------------------------------------------------------
# datasets


@dataclass
class DatasetEntry:
    scene_id: str
    frame_id: int
    image: IndicatorImage
    A: SparseMatrix
    rhs: np.ndarray  # (n_rhs, n_f)

    @property
    def rmap(self) -> ReductionMap:
        return ReductionMap.from_image(self.image)


@dataclass
class RhsDataset:
    entries: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def split_validation(self):
        """Hold out the last frame of every scene. Returns (train, val)."""
        last = {}
        for i, e in enumerate(self.entries):
            last[e.scene_id] = i
        val_idx = set(last.values())
        if len(val_idx) == len(self.entries):
            return self, RhsDataset([], self.manifest)
        train = [e for i, e in enumerate(self.entries) if i not in val_idx]
        val = [e for i, e in enumerate(self.entries) if i in val_idx]
        return RhsDataset(train, self.manifest), RhsDataset(val, self.manifest)


def build_dataset(frames, n_ritz: int, n_rhs: int, seed: int = 0, mode: str = "ritz") -> RhsDataset:
    """``frames`` yields (scene_id, frame_id, image, A_reduced). Each matrix
    gets its own child seed of ``seed``."""
    frames = list(frames)
    children = np.random.SeedSequence(seed).spawn(len(frames))
    entries = []
    for (scene_id, frame_id, image, A), child in zip(frames, children):
        singular = bool(np.any(floating_components(image) >= 0))
        k = min(n_ritz, A.shape[0])
        rhs = generate_rhs(A, k, n_rhs, seed=child, mode=mode, image=image,
                           project_constant=singular)
        entries.append(DatasetEntry(str(scene_id), int(frame_id), image, A, rhs))
    manifest = {"seed": seed, "n_ritz": n_ritz, "n_rhs": n_rhs, "mode": mode}
    return RhsDataset(entries, manifest)


def save_dataset(path, ds: RhsDataset):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    items = []
    for i, e in enumerate(ds.entries):
        stem = f"entry_{i:04d}"
        write_scn(path / f"{stem}.scn", e.image)
        write_triplets(path / f"{stem}.mtx", e.A)
        np.ascontiguousarray(e.rhs, dtype="<f8").tofile(path / f"{stem}.rhs")
        items.append({"scene_id": e.scene_id, "frame_id": e.frame_id, "n_f": int(e.A.shape[0]),
                      "n_rhs": int(e.rhs.shape[0]), "image": f"{stem}.scn",
                      "matrix": f"{stem}.mtx", "rhs": f"{stem}.rhs"})
    manifest = dict(ds.manifest, entries=items)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_dataset(path) -> RhsDataset:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}/manifest.json is not valid JSON") from exc
    entries = []
    for item in manifest.get("entries", []):
        image = read_scn(path / item["image"])
        A = read_triplets(path / item["matrix"])
        rhs = np.fromfile(path / item["rhs"], dtype="<f8")
        if rhs.size != item["n_rhs"] * item["n_f"]:
            raise FormatError(f"{item['rhs']}: wrong size")
        entries.append(DatasetEntry(item["scene_id"], item["frame_id"], image, A,
                                    rhs.reshape(item["n_rhs"], item["n_f"])))
    meta = {k: v for k, v in manifest.items() if k != "entries"}
    return RhsDataset(entries, meta)


# --------------------------------------------------------------------------
# loss and gradients


def _as_fields(batch: np.ndarray, rmap: ReductionMap, dims, dtype):
    full = pad_vector(np.asarray(batch, dtype=dtype), rmap)
    return full.reshape(full.shape[:-1] + tuple(dims))


def apply_network(params: NetParams, I, rmap: ReductionMap, batch, pyramid=None) -> np.ndarray:
    """Network applied to reduced vectors (single or batched), float64 result."""
    pyr = pyramid or ImagePyramid(I, params.depth, params.dtype)
    out = forward(params, pyr, _as_fields(batch, rmap, pyr.dims, params.dtype))
    flat = out.reshape(out.shape[:-2] + (rmap.n_c,))
    return restrict_vector(flat, rmap).astype(np.float64)


def loss(params: NetParams, I: IndicatorImage, A: SparseMatrix, rmap: ReductionMap, b,
         pyramid=None) -> float:
    """||b - A P(b)||_2 with the network in its own precision and the rest in float64."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (A.shape[0],) or rmap.n_f != A.shape[0]:
        raise DimensionError("rhs, matrix and reduction map sizes disagree")
    d = apply_network(params, I, rmap, b, pyramid)
    return float(np.linalg.norm(b - A @ d))


def backward(params: NetParams, I: IndicatorImage, A: SparseMatrix, rmap: ReductionMap, batch,
             pyramid=None):
    """Mean residual-norm loss over ``batch`` (shape (B, n_f)) and its gradient."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    n_b = batch.shape[0]
    if n_b == 0:
        raise ValueError("empty batch")
    if batch.shape[1] != A.shape[0] or rmap.n_f != A.shape[0]:
        raise DimensionError("batch, matrix and reduction map sizes disagree")
    pyr = pyramid or ImagePyramid(I, params.depth, params.dtype)
    fields = _as_fields(batch, rmap, pyr.dims, params.dtype)
    At = A._csr.T

    def grad_out(out):
        d = restrict_vector(out.reshape(n_b, rmap.n_c), rmap).astype(np.float64)
        v = batch - (A @ d.T).T
        norms = np.linalg.norm(v, axis=1)
        if not np.all(np.isfinite(norms)):
            bad = int(np.flatnonzero(~np.isfinite(norms))[0])
            raise FloatingPointError(f"non-finite loss at batch index {bad}")
        unit = np.where(norms[:, None] >= GRAD_NORM_FLOOR, v / np.maximum(norms, GRAD_NORM_FLOOR)[:, None], 0.0)
        g_d = -(At @ unit.T).T / n_b
        g_full = pad_vector(g_d, rmap).reshape(out.shape)
        return float(norms.mean()), g_full

    value, _, grads = forward_backward(params, pyr, fields, grad_out)
    return value, grads


# --------------------------------------------------------------------------
# optimizer and training loop


class Adam:
    """Adaptive moment estimation; moments kept in float64."""

    def __init__(self, params: NetParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros(t.shape) for t in params.tensors()]
        self.v = [np.zeros(t.shape) for t in params.tensors()]

    def step(self, params: NetParams, grads: NetParams):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params.tensors(), grads.tensors(), self.m, self.v):
            g = g.astype(np.float64)
            if self.weight_decay:
                g = g + self.weight_decay * p
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            upd = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p[...] = (p.astype(np.float64) - upd).astype(p.dtype)


@dataclass
class TrainConfig:
    n_ritz: int = 128
    n_rhs: int = 64
    batch_size: int = 128
    repeats_per_matrix: int = 5
    max_epochs: int = 50
    depth: int = 4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    validate_every: int = 5
    divergence_factor: float = 1e6

    def __post_init__(self):
        for name in ("n_ritz", "batch_size", "repeats_per_matrix", "depth", "validate_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_epochs < 0 or self.n_rhs < 0:
            raise ValueError("max_epochs and n_rhs must be >= 0")


@dataclass
class _Prepared:
    entry: DatasetEntry
    rmap: ReductionMap
    pyramid: ImagePyramid


def _prepare(ds: RhsDataset, depth: int, dtype) -> list[_Prepared]:
    return [_Prepared(e, e.rmap, ImagePyramid(e.image, depth, dtype)) for e in ds.entries]


def dataset_loss(params: NetParams, prepared: list[_Prepared], chunk: int = 128) -> float:
    """Mean loss over every rhs of every matrix."""
    total, count = 0.0, 0
    for p in prepared:
        A, rhs = p.entry.A, p.entry.rhs
        for s in range(0, rhs.shape[0], chunk):
            b = rhs[s:s + chunk]
            d = apply_network(params, p.entry.image, p.rmap, b, p.pyramid)
            total += float(np.linalg.norm(b - (A @ d.T).T, axis=1).sum())
            count += b.shape[0]
    return total / max(count, 1)


def train(cfg: TrainConfig, dataset: RhsDataset, val_dataset: RhsDataset | None = None,
          params: NetParams | None = None, progress=None):
    """Train and return (best-validation params, log rows).

    Each epoch visits the matrices in a seeded shuffled order; each matrix
    contributes ``repeats_per_matrix`` passes over its rhs in batches of
    ``batch_size`` with one Adam step per batch. Validation runs every
    ``validate_every`` epochs and after the last epoch.
    """
    if len(dataset) == 0:
        raise ValueError("empty training set")
    if val_dataset is None:
        dataset, val_dataset = dataset.split_validation()
    params = init_params(cfg.depth, cfg.seed) if params is None else params.copy()
    if params.depth != cfg.depth:
        raise ValueError("initial params depth does not match config")
    log = []
    if cfg.max_epochs == 0:
        return params, log
    train_set = _prepare(dataset, cfg.depth, params.dtype)
    val_set = _prepare(val_dataset, cfg.depth, params.dtype) if len(val_dataset) else []
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    best, best_val = params.copy(), np.inf
    initial = None
    t0 = time.perf_counter()
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for mi in rng.permutation(len(train_set)):
            p = train_set[mi]
            rhs = p.entry.rhs
            for _ in range(cfg.repeats_per_matrix):
                for s in range(0, rhs.shape[0], cfg.batch_size):
                    value, grads = backward(params, p.entry.image, p.entry.A, p.rmap,
                                            rhs[s:s + cfg.batch_size], p.pyramid)
                    if initial is None:
                        initial = value
                    if not np.isfinite(value) or value > cfg.divergence_factor * initial:
                        raise TrainingDivergedError(
                            f"loss {value:.3e} exceeded {cfg.divergence_factor:g}x initial "
                            f"{initial:.3e} in epoch {epoch}", log=log)
                    opt.step(params, grads)
                    losses.append(value)
        row = {"epoch": epoch, "mean_train_loss": float(np.mean(losses)), "val_loss": None,
               "wall_seconds": time.perf_counter() - t0}
        if val_set and (epoch % cfg.validate_every == 0 or epoch == cfg.max_epochs):
            row["val_loss"] = dataset_loss(params, val_set)
            if row["val_loss"] < best_val:
                best_val, best = row["val_loss"], params.copy()
        elif not val_set:
            best = params.copy()
        log.append(row)
        if progress is not None:
            progress(row)
    return best, log


def write_training_log(path, log, cfg: TrainConfig | None = None, notes=()):
    """CSV columns epoch, mean_train_loss, val_loss, wall_seconds; '#' header lines."""
    with open(path, "w", newline="") as fh:
        if cfg is not None:
            fh.write(f"# config: {json.dumps(asdict(cfg), sort_keys=True)}\n")
        for line in notes:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_train_loss", "val_loss", "wall_seconds"])
        for row in log:
            val = "" if row["val_loss"] is None else repr(row["val_loss"])
            w.writerow([row["epoch"], repr(row["mean_train_loss"]), val, f"{row['wall_seconds']:.3f}"])
