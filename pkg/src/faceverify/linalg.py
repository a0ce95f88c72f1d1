"""Dense linear-algebra and deterministic-randomness substrate.

Arrays everywhere in this package are C-contiguous (row-major) numpy
arrays, float64 for all in-memory computation; features are narrowed to
float32 only when written to disk.  Randomness always flows through
:func:`make_rng`, which pins a single named generator (PCG64) so that a
seed produces the same stream on every platform.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "make_rng",
    "derive_seed",
    "matmul",
    "outer",
    "gaussian_matrix",
    "l2_normalize",
]


def make_rng(seed: int) -> np.random.Generator:
    """Return the package-wide deterministic generator.

    Algorithm is fixed as PCG64 (O'Neill's permuted congruential
    generator, 128-bit state / 64-bit output) and must never change:
    frozen expected values in the test suite depend on its stream.
    Normal variates drawn from it use numpy's ziggurat transform, which
    is likewise a fixed choice.
    """
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(root_seed: int, stream: int) -> int:
    """Derive an independent child seed from a root seed.

    Pipeline stages each get their own stream index so that a stage can
    be re-run in isolation and still see the stream it saw inside the
    full pipeline run.
    """
    ss = np.random.SeedSequence(entropy=root_seed, spawn_key=(stream,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def outer(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Outer product u v^T of two equal-length vectors."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape[0]} vs {v.shape[0]}")
    return np.outer(u, v)


def gaussian_matrix(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Matrix of i.i.d. standard-normal entries, row-major draw order."""
    if rows < 1 or cols < 1:
        raise ValueError(f"dimensions must be >= 1, got ({rows}, {cols})")
    return rng.standard_normal((rows, cols))


def l2_normalize(x: np.ndarray) -> np.ndarray:
    """Scale a vector (or each row of a matrix) to unit Euclidean norm.

    Raises ValueError on a zero vector: a zero feature is degenerate and
    must not silently enter scoring.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        n = np.linalg.norm(x)
        if n == 0.0:
            raise ValueError("cannot normalize a zero vector")
        return x / n
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize rows with zero norm")
    return x / norms
