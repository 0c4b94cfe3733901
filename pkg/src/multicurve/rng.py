"""Counter-based random number streams.

Every path in a simulation owns a Philox stream keyed by ``(seed, path index,
stream id)``, packed into the 128-bit Philox key as ``seed << 64 | path << 1 |
stream``.  A path's variates therefore depend only on the seed and its own
index, never on how paths are batched or ordered, so results are bit-identical
under any execution decomposition.

Draw layout per path (stream 0, the curve driver): one block of standard
normals of shape (n_steps, d), then one block of Poisson jump counts of shape
(n_steps, n_atoms).  Stream 1 is reserved for orthogonal-jump-part event
sampling, which draws sequentially (counts, then atom choices, per step).
"""

from __future__ import annotations

import numpy as np

DRIVER_STREAM = 0
YPERP_STREAM = 1


def path_key(seed: int, path_index: int, stream: int = DRIVER_STREAM) -> int:
    if seed < 0 or path_index < 0:
        raise ValueError("seed and path_index must be nonnegative")
    return (int(seed) << 64) | (int(path_index) << 1) | int(stream)


def path_generator(seed: int, path_index: int, stream: int = DRIVER_STREAM) -> np.random.Generator:
    """Generator for one path's private stream."""
    return np.random.Generator(np.random.Philox(key=path_key(seed, path_index, stream)))


def driver_increment_block(
    seed: int,
    path_lo: int,
    path_hi: int,
    n_steps: int,
    n_normals: int,
    jump_means: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Normals and jump counts for paths [path_lo, path_hi).

    Returns ``(normals, counts)`` with shapes (n_paths, n_steps, n_normals)
    and (n_paths, n_steps, n_atoms); ``counts`` is None when ``jump_means``
    is None or empty.  ``jump_means`` holds lambda_j * dt per atom.
    """
    n_paths = path_hi - path_lo
    normals = np.empty((n_paths, n_steps, n_normals))
    counts = None
    if jump_means is not None and len(jump_means) > 0:
        counts = np.empty((n_paths, n_steps, len(jump_means)), dtype=np.int64)
    for i in range(n_paths):
        gen = path_generator(seed, path_lo + i)
        normals[i] = gen.standard_normal((n_steps, n_normals))
        if counts is not None:
            counts[i] = gen.poisson(lam=jump_means, size=(n_steps, len(jump_means)))
    return normals, counts
