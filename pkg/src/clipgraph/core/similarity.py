from __future__ import annotations

from typing import Sequence

import numpy as np

EMBEDDING_SIG_DIGITS = 7
# Stored vectors carry 7 significant digits, so threshold tests are only
# meaningful to about this resolution.
SIM_TOLERANCE = 1e-6


def exceeds(sim: float, threshold: float) -> bool:
    """Strict ``sim > threshold`` at stored-vector resolution."""
    return sim > threshold + SIM_TOLERANCE


def reaches(sim: float, threshold: float) -> bool:
    """``sim >= threshold`` at stored-vector resolution."""
    return sim >= threshold - SIM_TOLERANCE


def cosine_similarity(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    """Cosine of the angle between two non-zero vectors of equal dimension."""
    va = np.asarray(a, dtype=np.float64).ravel()
    vb = np.asarray(b, dtype=np.float64).ravel()
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    if va.size == 0:
        raise ValueError("cannot compare empty vectors")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for the zero vector")
    sim = float(np.dot(va, vb)) / (na * nb)
    # rounding can push identical directions a hair past 1
    return max(-1.0, min(1.0, sim))


def cosine_matrix(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Pairwise cosine between the rows of two 2-D arrays."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    cols = np.atleast_2d(np.asarray(cols, dtype=np.float64))
    if rows.shape[1] != cols.shape[1]:
        raise ValueError(f"dimension mismatch: {rows.shape[1]} vs {cols.shape[1]}")
    rn = np.linalg.norm(rows, axis=1)
    cn = np.linalg.norm(cols, axis=1)
    if np.any(rn == 0) or np.any(cn == 0):
        raise ValueError("cosine similarity is undefined for the zero vector")
    out = (rows @ cols.T) / np.outer(rn, cn)
    return np.clip(out, -1.0, 1.0)


def quantize_embedding(vec: Sequence[float] | np.ndarray) -> np.ndarray:
    """Round every component to the precision used in graph files.

    Stored prototype vectors are kept at this precision in memory too, so a
    save/load round trip reproduces them exactly.
    """
    arr = np.asarray(vec, dtype=np.float64).ravel()
    return np.array([float(f"{x:.{EMBEDDING_SIG_DIGITS}g}") for x in arr], dtype=np.float64)
