"""Dense tensor ops, parameter store, optimizer and checkpoint I/O.

Forward ops are thin, shape-checked wrappers around torch; the autograd
tape records them and :func:`backward` turns a scalar loss into a
name -> gradient map. :func:`grad_check` is the independent central
finite-difference check used to validate every backward pass.

Random initialization draws from numpy's PCG64 generator seeded through
``SeedSequence([seed, domain])`` so that initialization and data shuffling
use separate, reproducible streams.
"""
from __future__ import annotations

import json
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
import torch

from numnet.exceptions import (
    CheckpointError,
    ContractError,
    DimensionError,
    OptimizerError,
    StateError,
)

DEFAULT_SEED = 42
INIT_STREAM = 0
SHUFFLE_STREAM = 1
GRADCHECK_STREAM = 2

MAGIC = b"NUMNET01"


def rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    """PCG64 generator for the ``stream`` sub-sequence of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([seed, stream, *extra]))


def _dim_error(op: str, *tensors) -> DimensionError:
    shapes = ", ".join(str(tuple(t.shape)) for t in tensors)
    return DimensionError(f"{op}: incompatible shapes {shapes}")


# ---------------------------------------------------------------------------
# forward ops

def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() != 2 or b.dim() not in (1, 2) or a.shape[1] != b.shape[0]:
        raise _dim_error("matmul", a, b)
    return a @ b


def add_bias(x: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Add a length-d bias to every column of a d x n matrix."""
    if x.dim() != 2 or bias.dim() != 1 or x.shape[0] != bias.shape[0]:
        raise _dim_error("add_bias", x, bias)
    return x + bias[:, None]


def concat_rows(*xs: torch.Tensor) -> torch.Tensor:
    if any(x.dim() != xs[0].dim() for x in xs) or (
        xs[0].dim() == 2 and any(x.shape[1] != xs[0].shape[1] for x in xs)
    ):
        raise _dim_error("concat_rows", *xs)
    return torch.cat(xs, dim=0)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.relu(x)


def _masked(x: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    if mask is None:
        return x
    if mask.shape != x.shape:
        raise _dim_error("softmax mask", x, mask)
    return x.masked_fill(~mask, float("-inf"))


def row_log_softmax(x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Log-softmax along the last axis; masked entries get ``-inf``.

    A row with every entry masked stays at ``-inf`` (probability zero).
    """
    z = _masked(x, mask)
    lse = torch.logsumexp(z, dim=-1, keepdim=True)
    out = z - torch.where(torch.isinf(lse), torch.zeros_like(lse), lse)
    return out


def row_softmax(x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    return torch.exp(row_log_softmax(x, mask))


def log_sum_exp(x: torch.Tensor) -> torch.Tensor:
    """``log(sum(exp(x)))`` over the last axis."""
    if x.shape[-1] == 0:
        raise _dim_error("log_sum_exp", x)
    return torch.logsumexp(x, dim=-1)


def mean_rows(x: torch.Tensor, subset: Iterable[int] | None = None) -> torch.Tensor:
    """Mean of the selected rows of ``x``; an empty selection gives zeros."""
    if x.dim() != 2:
        raise _dim_error("mean_rows", x)
    idx = list(range(x.shape[0])) if subset is None else list(subset)
    if not idx:
        return x.new_zeros(x.shape[1])
    return x[idx].mean(dim=0)


def embedding_lookup(table: torch.Tensor, ids: Iterable[int]) -> torch.Tensor:
    ids = torch.as_tensor(list(ids), dtype=torch.long)
    if table.dim() != 2 or (len(ids) and (ids.min() < 0 or ids.max() >= table.shape[0])):
        raise DimensionError(f"embedding_lookup: ids out of range for table {tuple(table.shape)}")
    return table[ids]


def scale(x: torch.Tensor, c: float) -> torch.Tensor:
    return x * c


def shift_cols(x: torch.Tensor, k: int) -> torch.Tensor:
    """Column ``j`` of the result is column ``j - k`` of ``x`` (zero outside)."""
    if x.dim() != 2:
        raise _dim_error("shift_cols", x)
    n = x.shape[1]
    if k == 0:
        return x
    if abs(k) >= n:
        return torch.zeros_like(x)
    pad = x.new_zeros((x.shape[0], abs(k)))
    if k > 0:
        return torch.cat([pad, x[:, : n - k]], dim=1)
    return torch.cat([x[:, -k:], pad], dim=1)


def layer_norm_cols(x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Normalize every column of a d x n matrix to zero mean, unit variance."""
    mu = x.mean(dim=0, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=0, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps)


# ---------------------------------------------------------------------------
# parameters

@dataclass
class ParamStore:
    """Ordered named parameters plus Adam moments and EMA shadows."""

    dtype: torch.dtype = torch.float32
    params: "OrderedDict[str, torch.Tensor]" = field(default_factory=OrderedDict)
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    step: int = 0
    shadow: dict = field(default_factory=dict)
    _stash: dict | None = None

    def add(self, name: str, value) -> torch.Tensor:
        if name in self.params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = torch.as_tensor(np.asarray(value), dtype=self.dtype).clone().requires_grad_(True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def items(self):
        return self.params.items()

    def num_values(self) -> int:
        return sum(p.numel() for p in self.params.values())

    def to(self, dtype: torch.dtype) -> "ParamStore":
        """Copy of this store (values and optimizer state) in ``dtype``."""
        def conv(d):
            return {k: v.detach().to(dtype).clone() for k, v in d.items()}

        out = ParamStore(dtype=dtype)
        for k, v in self.params.items():
            out.params[k] = v.detach().to(dtype).clone().requires_grad_(True)
        out.first_moment = conv(self.first_moment)
        out.second_moment = conv(self.second_moment)
        out.shadow = conv(self.shadow)
        out.step = self.step
        return out


def init_matrix(gen: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Uniform(-1/sqrt(cols), 1/sqrt(cols)) fan-in initialization."""
    bound = 1.0 / math.sqrt(cols)
    return gen.uniform(-bound, bound, size=(rows, cols))


# ---------------------------------------------------------------------------
# gradients

def backward(loss: torch.Tensor, params: ParamStore) -> dict[str, torch.Tensor]:
    """Gradients of a scalar ``loss`` for every parameter (zeros if unreached)."""
    if loss.numel() != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    names = params.names()
    tensors = [params[n] for n in names]
    if not loss.requires_grad:
        return {n: torch.zeros_like(t) for n, t in zip(names, tensors)}
    grads = torch.autograd.grad(loss.reshape(()), tensors, allow_unused=True)
    return {
        n: (g.detach() if g is not None else torch.zeros_like(t.detach()))
        for n, t, g in zip(names, tensors, grads)
    }


@dataclass
class GradCheckReport:
    tol: float
    max_rel_error: dict[str, float]
    entries_checked: dict[str, int]

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.max_rel_error.values())

    @property
    def failing(self) -> list[str]:
        return [n for n, e in self.max_rel_error.items() if not e <= self.tol]

    def format(self) -> str:
        lines = [f"{'parameter':40s} {'entries':>7s} {'max rel err':>12s}  status"]
        for name, err in self.max_rel_error.items():
            status = "ok" if err <= self.tol else "FAIL"
            lines.append(f"{name:40s} {self.entries_checked[name]:7d} {err:12.3e}  {status}")
        lines.append(f"{'PASS' if self.passed else 'FAIL'} (tol={self.tol:g})")
        return "\n".join(lines)


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero gradients
    from producing spurious blow-ups."""
    if not (math.isfinite(analytic) and math.isfinite(numeric)):
        return math.inf
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    f: Callable[[ParamStore], torch.Tensor],
    params: ParamStore,
    h: float = 1e-4,
    tol: float = 1e-3,
    max_entries: int = 200,
    seed: int = DEFAULT_SEED,
    names: Iterable[str] | None = None,
) -> GradCheckReport:
    """Compare :func:`backward` against central differences ``(f(x+h)-f(x-h))/2h``."""
    if params.dtype != torch.float64:
        raise ContractError("grad_check requires a float64 ParamStore")
    analytic = backward(f(params), params)
    gen = rng(seed, GRADCHECK_STREAM)
    errors: dict[str, float] = {}
    counts: dict[str, int] = {}
    for name in (names if names is not None else params.names()):
        p = params[name]
        flat_grad = analytic[name].reshape(-1)
        n = p.numel()
        idx = np.arange(n) if n <= max_entries else np.sort(gen.choice(n, max_entries, replace=False))
        worst = 0.0
        with torch.no_grad():
            flat = p.view(-1)
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + h
                f_plus = f(params).item()
                flat[i] = orig - h
                f_minus = f(params).item()
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2 * h)
                worst = max(worst, relative_error(flat_grad[i].item(), numeric))
        errors[name] = worst
        counts[name] = len(idx)
    return GradCheckReport(tol, errors, counts)


def global_norm(grads: Mapping[str, torch.Tensor]) -> float:
    return math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values()))


def clip_gradients(grads: Mapping[str, torch.Tensor], max_norm: float) -> dict[str, torch.Tensor]:
    if max_norm <= 0:
        raise ContractError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    factor = max_norm / norm
    return {n: g * factor for n, g in grads.items()}


def adam_step(
    params: ParamStore,
    grads: Mapping[str, torch.Tensor],
    lr: float = 5e-4,
    beta1: float = 0.8,
    beta2: float = 0.999,
    eps: float = 1e-7,
    weight_decay: float = 1e-7,
) -> None:
    """One bias-corrected Adam update with L2 decay folded into the gradient."""
    missing = [n for n in params.names() if n not in grads]
    if missing:
        raise ContractError(f"adam_step: no gradient for {missing[0]!r}")
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise OptimizerError(f"non-finite gradient for parameter {name!r}")
    params.step += 1
    t = params.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name].to(p.dtype) + weight_decay * p
            m = params.first_moment.get(name)
            v = params.second_moment.get(name)
            if m is None:
                m = torch.zeros_like(p)
                v = torch.zeros_like(p)
            m = beta1 * m + (1.0 - beta1) * g
            v = beta2 * v + (1.0 - beta2) * g * g
            params.first_moment[name] = m
            params.second_moment[name] = v
            p -= lr * (m / c1) / (torch.sqrt(v / c2) + eps)


def ema_update(params: ParamStore, decay: float = 0.9999) -> None:
    if params._stash is not None:
        raise StateError("ema_update while EMA weights are swapped in")
    with torch.no_grad():
        for name, p in params.items():
            s = params.shadow.get(name)
            if s is None:
                params.shadow[name] = p.detach().clone()
            else:
                params.shadow[name] = decay * s + (1.0 - decay) * p.detach()


def ema_swap_in(params: ParamStore) -> None:
    if params._stash is not None:
        raise StateError("EMA weights are already swapped in")
    if not params.shadow:
        raise StateError("no EMA shadow values to swap in")
    params._stash = {}
    with torch.no_grad():
        for name, p in params.items():
            params._stash[name] = p.detach().clone()
            p.copy_(params.shadow.get(name, p))


def ema_swap_out(params: ParamStore) -> None:
    if params._stash is None:
        raise StateError("EMA weights are not swapped in")
    with torch.no_grad():
        for name, p in params.items():
            p.copy_(params._stash[name])
    params._stash = None


# ---------------------------------------------------------------------------
# checkpoints

_DTYPES = {"float32": (torch.float32, "<f4"), "float64": (torch.float64, "<f8")}


def save_checkpoint(path, params: ParamStore, meta: dict | None = None, dtype: str = "float32") -> None:
    """Write ``params`` (plus optimizer state and EMA shadows) to ``path``.

    Layout: the 8-byte magic ``NUMNET01``, a little-endian uint64 manifest
    length, the UTF-8 JSON manifest, then raw little-endian values in
    row-major order. Shadows are stored as ``<name>#ema``, Adam moments as
    ``<name>#adam_m`` / ``<name>#adam_v``.
    """
    if params._stash is not None:
        raise StateError("cannot checkpoint while EMA weights are swapped in")
    torch_dtype, np_dtype = _DTYPES[dtype]
    blobs = []
    entries = []
    offset = 0

    def put(name, t):
        nonlocal offset
        arr = t.detach().to(torch.float64).numpy().astype(np_dtype)
        raw = arr.tobytes(order="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)

    for name, p in params.items():
        put(name, p)
    for name in params.names():
        if name in params.shadow:
            put(f"{name}#ema", params.shadow[name])
        if name in params.first_moment:
            put(f"{name}#adam_m", params.first_moment[name])
            put(f"{name}#adam_v", params.second_moment[name])
    manifest = {
        "dtype": dtype,
        "adam_step": params.step,
        "tensors": entries,
        "meta": meta or {},
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path, dtype: torch.dtype | None = None) -> tuple[ParamStore, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", data[8:16])
    try:
        manifest = json.loads(data[16:16 + n].decode("utf-8"))
        file_dtype, np_dtype = _DTYPES[manifest["dtype"]]
    except (ValueError, KeyError) as err:
        raise CheckpointError(f"{path}: unreadable manifest") from err
    body = data[16 + n:]
    store = ParamStore(dtype=dtype or file_dtype)
    store.step = int(manifest["adam_step"])
    width = np.dtype(np_dtype).itemsize
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        if start + count * width > len(body):
            raise CheckpointError(f"{path}: truncated data for {entry['name']}")
        arr = np.frombuffer(body, dtype=np_dtype, count=count, offset=start).reshape(entry["shape"])
        t = torch.as_tensor(arr.astype(np.float64), dtype=store.dtype)
        name, _, kind = entry["name"].partition("#")
        if kind == "":
            store.params[name] = t.clone().requires_grad_(True)
        elif kind == "ema":
            store.shadow[name] = t.clone()
        elif kind == "adam_m":
            store.first_moment[name] = t.clone()
        elif kind == "adam_v":
            store.second_moment[name] = t.clone()
        else:
            raise CheckpointError(f"{path}: unknown tensor kind {kind!r}")
    return store, manifest["meta"]
