"""Dense tensor arithmetic.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 stored in
row-major (C) order, so the last index varies fastest.  The helpers here
add shape validation and a finiteness guarantee on top of numpy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AxisError, NumericError, ShapeError

DenseTensor = np.ndarray


def as_tensor(data) -> DenseTensor:
    """Return ``data`` as a C-contiguous float64 array, validating its shape."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if any(d < 1 for d in arr.shape):
        raise ShapeError(f"all dimensions must be >= 1, got shape {arr.shape}")
    return arr


def _finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what} produced non-finite values")
    return arr


def _normalize_axes(axes: Sequence[int], ndim: int, name: str) -> list[int]:
    out = []
    for ax in axes:
        ax = int(ax)
        if not -ndim <= ax < ndim:
            raise AxisError(f"axis {ax} out of range for {name} of rank {ndim}")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise AxisError(f"repeated axis in {name}: {list(axes)}")
    return out


def contract(
    a: DenseTensor,
    b: DenseTensor,
    axes_a: Sequence[int],
    axes_b: Sequence[int],
) -> DenseTensor:
    """Sum over paired axes of ``a`` and ``b``.

    The result carries the free axes of ``a`` followed by the free axes of
    ``b``, each in their original order.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(axes_a) != len(axes_b):
        raise ShapeError("axes_a and axes_b must have equal length")
    axes_a = _normalize_axes(axes_a, a.ndim, "a")
    axes_b = _normalize_axes(axes_b, b.ndim, "b")
    for i, j in zip(axes_a, axes_b):
        if a.shape[i] != b.shape[j]:
            raise ShapeError(
                f"contracted axes differ in size: a[{i}]={a.shape[i]} vs b[{j}]={b.shape[j]}"
            )
    out = np.tensordot(a, b, axes=(axes_a, axes_b))
    return _finite(np.asarray(out, dtype=np.float64), "contract")


def trace_self(a: DenseTensor, axis1: int, axis2: int) -> DenseTensor:
    a = np.asarray(a, dtype=np.float64)
    ax1, ax2 = _normalize_axes([axis1, axis2], a.ndim, "a")
    if a.shape[ax1] != a.shape[ax2]:
        raise ShapeError(f"cannot trace axes of sizes {a.shape[ax1]} and {a.shape[ax2]}")
    return _finite(np.asarray(np.trace(a, axis1=ax1, axis2=ax2)), "trace_self")


def frobenius_norm(a: DenseTensor) -> float:
    return float(np.sqrt(np.sum(np.square(np.asarray(a, dtype=np.float64)))))


def merge_axes(a: DenseTensor, groups: Sequence[Sequence[int]]) -> DenseTensor:
    """Fuse consecutive axes.

    ``groups`` partitions ``range(a.ndim)`` into runs of consecutive axes,
    e.g. ``[(0, 1), (2,)]`` turns a 2x3x4 tensor into a 6x4 one.  Because the
    storage is row-major, fusing consecutive axes never moves data.
    """
    a = np.asarray(a)
    flat = [ax for g in groups for ax in g]
    if flat != list(range(a.ndim)):
        raise ShapeError(f"axis groups {groups} must cover 0..{a.ndim - 1} in order")
    shape = tuple(int(np.prod([a.shape[ax] for ax in g])) for g in groups)
    return a.reshape(shape)


def split_axis(a: DenseTensor, axis: int, new_dims: Sequence[int]) -> DenseTensor:
    a = np.asarray(a)
    (axis,) = _normalize_axes([axis], a.ndim, "a")
    new_dims = tuple(int(d) for d in new_dims)
    if any(d < 1 for d in new_dims) or int(np.prod(new_dims)) != a.shape[axis]:
        raise ShapeError(f"cannot split axis of size {a.shape[axis]} into {new_dims}")
    return a.reshape(a.shape[:axis] + new_dims + a.shape[axis + 1 :])


@dataclass(frozen=True)
class SvdResult:
    left_factor: DenseTensor
    singular_values: np.ndarray
    right_factor: DenseTensor
    discarded_weight: float

    @property
    def rank(self) -> int:
        return len(self.singular_values)

    def reconstruct(self) -> DenseTensor:
        return (self.left_factor * self.singular_values) @ self.right_factor


def svd_truncated(
    m: DenseTensor, cutoff_fraction: float = 0.0, max_rank: int | None = None
) -> SvdResult:
    """Thin SVD dropping singular values below ``cutoff_fraction * s_max``.

    At least one singular value is always kept.  ``discarded_weight`` is the
    sum of squares of everything dropped, which equals the squared Frobenius
    error of the reconstruction.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"svd_truncated needs a matrix, got rank {m.ndim}")
    if not 0.0 <= cutoff_fraction <= 1.0:
        raise ValueError("cutoff_fraction must lie in [0, 1]")
    _finite(m, "svd input")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge: {exc}") from exc
    keep = int(np.count_nonzero(s >= cutoff_fraction * s[0]))
    if max_rank is not None:
        keep = min(keep, int(max_rank))
    keep = max(keep, 1)
    discarded = float(np.sum(np.square(s[keep:])))
    return SvdResult(
        left_factor=np.ascontiguousarray(u[:, :keep]),
        singular_values=s[:keep].copy(),
        right_factor=np.ascontiguousarray(vt[:keep]),
        discarded_weight=discarded,
    )
