"""Brute-force reference implementations used by the tests.

Nothing here calls the package's own contraction code: the dense tensor is
built from explicit bond loops and every probability is a slice-and-sum of
that tensor.
"""

import numpy as np

from tnaif.mps import LEGS, SequenceMPS, Trajectory
from tnaif.training import merge_pair, psi_derivative

AXIS = {leg: i for i, leg in enumerate(LEGS)}


def dense_amplitudes(m: SequenceMPS) -> np.ndarray:
    """Amplitude table indexed [o1, a1, o2, a2, o3], summed bond by bond."""
    s0, s1, s2 = m.sites
    psi = np.zeros((24, 4, 24, 4, 24))
    for x in range(s0.shape[1]):
        for y in range(s2.shape[0]):
            psi += np.multiply.outer(
                np.multiply.outer(s0[:, x], s1[x, :, :, y].T), s2[y].T
            )
    return psi


def loop_amplitude(m: SequenceMPS, idx) -> float:
    o1, a1, o2, a2, o3 = idx
    s0, s1, s2 = m.sites
    total = 0.0
    for x in range(s0.shape[1]):
        for y in range(s2.shape[0]):
            total += s0[o1, x] * s1[x, o2, a1, y] * s2[y, o3, a2]
    return total


def joint_table(m: SequenceMPS) -> np.ndarray:
    p = dense_amplitudes(m) ** 2
    return p / p.sum()


def marginal_table(joint: np.ndarray, fixed: dict, free) -> np.ndarray:
    """Slice the fixed legs, sum the rest, order axes as ``free``, normalize."""
    index = tuple(fixed.get(leg, slice(None)) for leg in LEGS)
    sliced = joint[index]
    remaining = [leg for leg in LEGS if leg not in fixed]
    summed = tuple(i for i, leg in enumerate(remaining) if leg not in free)
    table = sliced.sum(axis=summed)
    kept = [leg for leg in remaining if leg in free]
    table = np.transpose(table, [kept.index(leg) for leg in free])
    return table / table.sum()


def event_probability(joint: np.ndarray, fixed: dict) -> float:
    index = tuple(fixed.get(leg, slice(None)) for leg in LEGS)
    return float(joint[index].sum())


def mps_from_dense(psi: np.ndarray, tol: float = 1e-12) -> SequenceMPS:
    """Exact three-site factorization of an amplitude table by successive SVDs."""
    u, s, vt = np.linalg.svd(psi.reshape(24, -1), full_matrices=False)
    r1 = int(np.sum(s > tol * s[0]))
    site0 = u[:, :r1]
    rest = (s[:r1, None] * vt[:r1]).reshape(r1, 4, 24, 4, 24)
    u, s, vt = np.linalg.svd(rest.reshape(r1 * 4 * 24, 4 * 24), full_matrices=False)
    r2 = int(np.sum(s > tol * s[0]))
    site1 = u[:, :r2].reshape(r1, 4, 24, r2).transpose(0, 2, 1, 3)
    site2 = (s[:r2, None] * vt[:r2]).reshape(r2, 4, 24).transpose(0, 2, 1)
    return SequenceMPS([site0, site1, site2])


def indicator_amplitudes(trajectories) -> np.ndarray:
    psi = np.zeros((24, 4, 24, 4, 24))
    for t in trajectories:
        psi[t.indices()] = 1.0
    return psi


def random_batch(rng, n):
    return [Trajectory.from_indices(*(int(rng.integers(d)) for d in (24, 4, 24, 4, 24))) for _ in range(n)]


def dense_from_pair(m, i, B):
    """Amplitude table with pair ``i`` replaced by the merged tensor ``B``."""
    s0, _, s2 = m.sites
    if i == 0:
        return np.einsum("ikjy,yml->ijklm", B, s2)
    return np.einsum("ix,xkjml->ijklm", s0, B)


def pair_nll(m, i, B, batch):
    """Batch NLL as a function of ``B``, from outer-site Gram matrices."""
    s0, _, s2 = m.sites
    if i == 0:
        gram = np.einsum("yml,Yml->yY", s2, s2)
        z = np.einsum("ikjy,yY,ikjY->", B, gram, B)
        psi = [B[t.indices()[0], t.indices()[2], t.indices()[1]] @ s2[:, t.indices()[4], t.indices()[3]] for t in batch]
    else:
        gram = s0.T @ s0
        z = np.einsum("xkjml,xX,Xkjml->", B, gram, B)
        psi = [s0[t.indices()[0]] @ B[:, t.indices()[2], t.indices()[1], t.indices()[4], t.indices()[3]] for t in batch]
    return np.log(z) - np.mean(np.log(np.square(psi)))


def finite_difference(m, i, batch, h=1e-6):
    B = merge_pair(m, i)
    grad = np.zeros_like(B)
    flat_b, flat_g = B.reshape(-1), grad.reshape(-1)
    for k in range(flat_b.size):
        orig = flat_b[k]
        flat_b[k] = orig + h
        up = pair_nll(m, i, B, batch)
        flat_b[k] = orig - h
        down = pair_nll(m, i, B, batch)
        flat_b[k] = orig
        flat_g[k] = (up - down) / (2 * h)
    return grad


def gradient_matches(got, want):
    return np.all(np.abs(got - want) <= np.maximum(1e-5 * np.abs(want), 1e-8))


def restricted_z_gradient(m, i, batch):
    """The alternative reading with Z' summed over the batch only."""
    B = merge_pair(m, i)
    psi = np.array([np.vdot(psi_derivative(m, i, t), B) for t in batch])
    derivs = [psi_derivative(m, i, t) for t in batch]
    z_prime = 2 * sum(p * d for p, d in zip(psi, derivs))
    data = (2 / len(batch)) * sum(d / p for p, d in zip(psi, derivs))
    return z_prime / m.partition_function() - data
