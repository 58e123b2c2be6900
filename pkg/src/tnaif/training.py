"""Two-site sweep training of a :class:`SequenceMPS` on negative log-likelihood.

Each update merges a neighbouring pair of sites into one tensor ``B``, takes
a gradient step on the NLL with respect to ``B`` and splits the result
back with a truncated SVD, which lets the bond dimension between the pair
grow or shrink.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ParseError, ShapeError, SupportError
from .features import ACTION_DIM, OBS_DIM
from .mps import SequenceMPS, Trajectory
from .tensor import SvdResult, merge_axes, split_axis, svd_truncated

log = logging.getLogger(__name__)

PAIRS = (0, 1)
INIT_POWER = 6


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 10
    learning_rate: float = 1e-4
    lr_decay_factor: float = 0.9
    loss_jump_threshold: float = 0.5
    initial_bond_dim: int = 8
    svd_cutoff_fraction: float = 0.1
    rng_seed: int = 0
    # Cap on ||lr * dB|| relative to ||B||; 0 disables the cap.
    max_step_fraction: float = 0.5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.initial_bond_dim < 1:
            raise ValueError("epochs, batch_size and initial_bond_dim must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.lr_decay_factor < 1:
            raise ValueError("lr_decay_factor must lie in (0, 1)")
        if not 0 <= self.svd_cutoff_fraction < 1:
            raise ValueError("svd_cutoff_fraction must lie in [0, 1)")
        if self.max_step_fraction < 0:
            raise ValueError("max_step_fraction must be non-negative")

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        """Parse ``key=value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        casts = {"int": int, "float": float}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in types:
                raise ParseError(f"line {lineno}: expected one of {sorted(types)} as key=value")
            try:
                values[key] = casts[types[key]](value.strip())
            except ValueError:
                raise ParseError(f"line {lineno}: bad value for {key}: {value.strip()!r}") from None
        try:
            return cls(**values)
        except ValueError as exc:
            raise ParseError(str(exc)) from None

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in dataclasses.asdict(self).items())


@dataclass
class TrainReport:
    initial_nll: float = float("nan")
    loss_history: list[float] = field(default_factory=list)
    lr_history: list[float] = field(default_factory=list)
    bond_dims_history: list[tuple[int, int]] = field(default_factory=list)

    @property
    def epochs_run(self) -> int:
        return len(self.loss_history)

    @property
    def final_bond_dims(self) -> tuple[int, int] | None:
        return self.bond_dims_history[-1] if self.bond_dims_history else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "nll", "lr", "bond_dims"])
        for epoch, (loss, lr, dims) in enumerate(
            zip(self.loss_history, self.lr_history, self.bond_dims_history), start=1
        ):
            writer.writerow([epoch, format(loss, ".17g"), format(lr, ".17g"), "x".join(map(str, dims))])
        return buf.getvalue()


# -- likelihood ----------------------------------------------------------


def _index_arrays(dataset: Sequence[Trajectory]) -> tuple[np.ndarray, ...]:
    idx = np.array([t.indices() for t in dataset], dtype=np.intp).reshape(-1, 5)
    return tuple(idx.T)  # o1, a1, o2, a2, o3


def amplitudes(m: SequenceMPS, dataset: Sequence[Trajectory]) -> np.ndarray:
    """Amplitudes of many trajectories at once (one-hot contraction as indexing)."""
    o1, a1, o2, a2, o3 = _index_arrays(dataset)
    s0, s1, s2 = m.sites
    left = s0[o1]  # (n, D1)
    mid = s1[:, o2, a1, :]  # (D1, n, D2)
    right = s2[:, o3, a2]  # (D2, n)
    return np.einsum("nx,xny,yn->n", left, mid, right)


def _check_support(psi: np.ndarray, dataset: Sequence[Trajectory]) -> None:
    bad = np.flatnonzero(psi == 0)
    if bad.size:
        t = dataset[int(bad[0])]
        raise SupportError(f"trajectory {t.indices()} has zero amplitude")


def nll(m: SequenceMPS, dataset: Sequence[Trajectory]) -> float:
    """Mean negative log-likelihood ``-(1/|D|) sum log P(x)``."""
    if not dataset:
        raise ValueError("dataset is empty")
    psi = amplitudes(m, dataset)
    _check_support(psi, dataset)
    return float(np.log(m.partition_function()) - 2.0 * np.mean(np.log(np.abs(psi))))


# -- two-site machinery --------------------------------------------------


def _check_pair(i: int) -> None:
    if i not in PAIRS:
        raise IndexError(f"pair index must be 0 or 1, got {i}")


def merge_pair(m: SequenceMPS, i: int) -> np.ndarray:
    """Contract sites ``i`` and ``i + 1`` over their shared bond.

    Pair 0 gives ``B[o1, o2, a1, b2]``; pair 1 gives ``B[b1, o2, a1, o3, a2]``.
    """
    _check_pair(i)
    s0, s1, s2 = m.sites
    if i == 0:
        return np.tensordot(s0, s1, axes=([1], [0]))
    return np.tensordot(s1, s2, axes=([3], [0]))


def _outer_environment(m: SequenceMPS, i: int) -> np.ndarray:
    """Double layer of the site not in pair ``i``, physical legs summed."""
    s0, _, s2 = m.sites
    if i == 0:
        return np.einsum("yml,Yml->yY", s2, s2)
    return s0.T @ s0


def _pair_amplitudes(B: np.ndarray, m: SequenceMPS, i: int, batch) -> tuple[np.ndarray, np.ndarray]:
    """Amplitudes of ``batch`` through ``B`` plus the outer-site vectors they use."""
    o1, a1, o2, a2, o3 = _index_arrays(batch)
    s0, _, s2 = m.sites
    if i == 0:
        outer = s2[:, o3, a2].T  # (n, D2)
        psi = np.einsum("ny,ny->n", B[o1, o2, a1, :], outer)
    else:
        outer = s0[o1]  # (n, D1)
        psi = np.einsum("nx,xn->n", outer, B[:, o2, a1, o3, a2])
    return psi, outer


def psi_derivative(m: SequenceMPS, i: int, t: Trajectory) -> np.ndarray:
    """Derivative of ``psi(t)`` with respect to the merged tensor of pair ``i``.

    The amplitude is linear in ``B``, so this is the network contracted with
    ``t`` everywhere except at ``B``.
    """
    _check_pair(i)
    s0, _, s2 = m.sites
    o1, a1, o2, a2, o3 = t.indices()
    if i == 0:
        out = np.zeros((OBS_DIM, OBS_DIM, ACTION_DIM, s2.shape[0]))
        out[o1, o2, a1, :] = s2[:, o3, a2]
    else:
        out = np.zeros((s0.shape[1], OBS_DIM, ACTION_DIM, OBS_DIM, ACTION_DIM))
        out[:, o2, a1, o3, a2] = s0[o1]
    return out


def gradient_two_site(m: SequenceMPS, i: int, batch: Sequence[Trajectory]) -> np.ndarray:
    """Gradient of the batch NLL with respect to the merged tensor of pair ``i``.

    ``Z'/Z - (2/|D|) sum psi'(x)/psi(x)``, where ``Z'`` is the derivative of
    the full partition function: twice ``B`` contracted with the double
    layer of the remaining site.
    """
    _check_pair(i)
    if not batch:
        raise ValueError("batch is empty")
    B = merge_pair(m, i)
    env = _outer_environment(m, i)
    if i == 0:
        z_prime = 2.0 * np.tensordot(B, env, axes=([3], [0]))
    else:
        z_prime = 2.0 * np.tensordot(env, B, axes=([1], [0]))
    z = 0.5 * float(np.vdot(B, z_prime))

    psi, outer = _pair_amplitudes(B, m, i, batch)
    _check_support(psi, batch)
    o1, a1, o2, a2, o3 = _index_arrays(batch)
    weights = outer * (2.0 / (len(batch) * psi))[:, None]
    data = np.zeros_like(B)
    # Accumulate in batch order so seeded runs are bit-reproducible.
    if i == 0:
        np.add.at(data, (o1, o2, a1), weights)
    else:
        np.add.at(data.transpose(1, 2, 3, 4, 0), (o2, a1, o3, a2), weights)
    return z_prime / z - data


def step_and_split(
    m: SequenceMPS,
    i: int,
    delta: np.ndarray,
    lr: float,
    cutoff_fraction: float,
    direction: str,
) -> SvdResult:
    """Apply ``B - lr * delta`` and factor the result back into two sites.

    ``direction`` is the sweep's direction of travel ("right" or "left");
    singular values are absorbed into the site the sweep moves toward.
    Mutates ``m`` and returns the truncated SVD that was used.
    """
    _check_pair(i)
    if direction not in ("left", "right"):
        raise ValueError(f"direction must be 'left' or 'right', got {direction!r}")
    B = merge_pair(m, i)
    if delta.shape != B.shape:
        raise ShapeError(f"update shape {delta.shape} does not match merged tensor {B.shape}")
    B_new = B - lr * delta
    row_axes = 1 if i == 0 else 3
    row_dims = B_new.shape[:row_axes]
    col_dims = B_new.shape[row_axes:]
    mat = merge_axes(B_new, [tuple(range(row_axes)), tuple(range(row_axes, B_new.ndim))])
    svd = svd_truncated(mat, cutoff_fraction)
    if direction == "right":
        left, right = svd.left_factor, svd.singular_values[:, None] * svd.right_factor
    else:
        left, right = svd.left_factor * svd.singular_values, svd.right_factor
    left = split_axis(left, 0, row_dims)
    right = split_axis(right, 1, col_dims)
    m.set_sites({i: left, i + 1: right})
    return svd


def clip_step(delta: np.ndarray, lr: float, B: np.ndarray, max_step_fraction: float) -> np.ndarray:
    """Shrink ``delta`` so that ``||lr * delta|| <= max_step_fraction * ||B||``.

    The data term divides by amplitudes, so a trajectory the model nearly
    rules out can produce a step far larger than ``B`` itself.
    """
    if max_step_fraction <= 0 or lr == 0:
        return delta
    limit = max_step_fraction * np.linalg.norm(B)
    size = lr * np.linalg.norm(delta)
    return delta * (limit / size) if size > limit else delta


def sweep(
    m: SequenceMPS,
    batch: Sequence[Trajectory],
    lr: float,
    cutoff_fraction: float,
    max_step_fraction: float = 0.0,
) -> None:
    """One right-to-left then left-to-right pass of two-site updates.

    After every update the site holding the singular values is rescaled so
    that Z = 1.  The NLL does not change, but the step size stays
    meaningful: in this gauge ``||B||`` is 1, whereas unchecked the norm
    drifts upward and the effective learning rate shrinks with it.
    """
    for i, direction in ((1, "left"), (0, "left"), (0, "right"), (1, "right")):
        delta = gradient_two_site(m, i, batch)
        delta = clip_step(delta, lr, merge_pair(m, i), max_step_fraction)
        step_and_split(m, i, delta, lr, cutoff_fraction, direction)
        center = i + 1 if direction == "right" else i
        m.scale_site(center, 1.0 / np.sqrt(m.partition_function()))


def orthonormalize_left(m: SequenceMPS) -> None:
    """Make site 0 an isometry by QR, pushing the remainder into site 1.

    Amplitudes are unchanged.  Afterwards the merged tensor of pair 1 has
    squared norm equal to Z, which is the gauge the sweeps maintain.
    """
    s0, s1, _ = m.sites
    q, r = np.linalg.qr(s0)
    m.set_sites({0: q, 1: np.tensordot(r, s1, axes=([1], [0]))})


def init_model(config: TrainConfig) -> SequenceMPS:
    """Random model with entries ``u**6``, ``u`` uniform on [0, 1), rescaled to Z = 1.

    Every amplitude starts positive.  A plain uniform positive start is
    dominated by its mean direction, and the first truncated split then
    collapses every bond to dimension 1; the heavy skew of ``u**6`` keeps
    the spread large enough that most of the initial bond dimension survives.
    """
    init_seed, _ = np.random.SeedSequence(config.rng_seed).spawn(2)
    m = SequenceMPS.random(config.initial_bond_dim, rng=np.random.default_rng(init_seed), low=0.0, high=1.0)
    m.set_sites({i: site**INIT_POWER for i, site in enumerate(m.sites)})
    m.normalize()
    return m


def train(
    m: SequenceMPS,
    dataset: Sequence[Trajectory],
    config: TrainConfig,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> tuple[SequenceMPS, TrainReport]:
    """Train ``m`` in place.

    Each epoch shuffles the dataset, chunks it into batches and runs one
    full sweep per batch.  After the epoch the learning rate is decayed if
    the full-dataset NLL rose by more than ``loss_jump_threshold``.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    _, shuffle_seed = np.random.SeedSequence(config.rng_seed).spawn(2)
    rng = np.random.default_rng(shuffle_seed)
    data = list(dataset)
    lr = config.learning_rate
    orthonormalize_left(m)
    report = TrainReport(initial_nll=nll(m, data))
    previous = report.initial_nll
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(data))
        for b, start in enumerate(range(0, len(data), config.batch_size)):
            batch = [data[k] for k in order[start : start + config.batch_size]]
            try:
                sweep(m, batch, lr, config.svd_cutoff_fraction, config.max_step_fraction)
            except SupportError as exc:
                raise SupportError(f"epoch {epoch}, batch {b}: {exc}") from None
        try:
            loss = nll(m, data)
        except SupportError as exc:
            raise SupportError(f"epoch {epoch}: {exc}") from None
        if loss - previous > config.loss_jump_threshold:
            lr *= config.lr_decay_factor
            log.info("epoch %d: loss jumped %.3f -> %.3f, lr now %.3g", epoch, previous, loss, lr)
        previous = loss
        report.loss_history.append(loss)
        report.lr_history.append(lr)
        report.bond_dims_history.append(m.bond_dims)
        if on_epoch is not None:
            on_epoch(epoch, loss, lr)
    return m, report
