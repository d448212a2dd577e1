"""Hot numeric kernels: segment reductions and pairwise distances.

Two interchangeable backends:

* ``numba`` -- ``@njit``-compiled loops (default when numba imports).
* ``numpy`` -- pure-numpy fallback built on ``np.add.at`` / ``np.maximum.at``.

Selection happens once at import time from the ``FRAUDGRAPH_BACKEND``
environment variable (``auto`` | ``numba`` | ``numpy``).  The segment
reductions accumulate in edge order on both backends, so their outputs are
bit-identical; the distance kernels agree to rounding error only (different
summation order), which matters solely for distance ties.

``benchmarks/kernel_bench.py`` times both backends on large inputs.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

_ENV_VAR = "FRAUDGRAPH_BACKEND"


# -- pure-numpy implementations ----------------------------------------------

def _np_segment_sum_rows(values: np.ndarray, segments: np.ndarray, n_segments: int) -> np.ndarray:
    out = np.zeros((n_segments, values.shape[1]), dtype=np.float64)
    np.add.at(out, segments, values)
    return out


def _np_segment_sum_1d(values: np.ndarray, segments: np.ndarray, n_segments: int) -> np.ndarray:
    out = np.zeros(n_segments, dtype=np.float64)
    np.add.at(out, segments, values)
    return out


def _np_segment_max_1d(values: np.ndarray, segments: np.ndarray, n_segments: int) -> np.ndarray:
    out = np.full(n_segments, -np.inf, dtype=np.float64)
    np.maximum.at(out, segments, values)
    return out


def _np_scatter_add_rows(out: np.ndarray, indices: np.ndarray, rows: np.ndarray) -> None:
    np.add.at(out, indices, rows)


def _np_pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _np_masked_sq_dists(x: np.ndarray, observed: np.ndarray, refs: np.ndarray) -> np.ndarray:
    diff = (refs[:, observed] - x[observed]) ** 2
    return diff.sum(axis=1)


_NUMPY_IMPLS = {
    "segment_sum_rows": _np_segment_sum_rows,
    "segment_sum_1d": _np_segment_sum_1d,
    "segment_max_1d": _np_segment_max_1d,
    "scatter_add_rows": _np_scatter_add_rows,
    "pairwise_sq_dists": _np_pairwise_sq_dists,
    "masked_sq_dists": _np_masked_sq_dists,
}


# -- numba implementations ----------------------------------------------------

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _nb_segment_sum_rows(values, segments, n_segments):
        out = np.zeros((n_segments, values.shape[1]), dtype=np.float64)
        for e in range(values.shape[0]):
            s = segments[e]
            for j in range(values.shape[1]):
                out[s, j] += values[e, j]
        return out

    @numba.njit(cache=True)
    def _nb_segment_sum_1d(values, segments, n_segments):
        out = np.zeros(n_segments, dtype=np.float64)
        for e in range(values.shape[0]):
            out[segments[e]] += values[e]
        return out

    @numba.njit(cache=True)
    def _nb_segment_max_1d(values, segments, n_segments):
        out = np.full(n_segments, -np.inf, dtype=np.float64)
        for e in range(values.shape[0]):
            s = segments[e]
            if values[e] > out[s]:
                out[s] = values[e]
        return out

    @numba.njit(cache=True)
    def _nb_scatter_add_rows(out, indices, rows):
        for e in range(indices.shape[0]):
            i = indices[e]
            for j in range(rows.shape[1]):
                out[i, j] += rows[e, j]

    @numba.njit(cache=True)
    def _nb_pairwise_sq_dists(a, b):
        out = np.empty((a.shape[0], b.shape[0]), dtype=np.float64)
        for i in range(a.shape[0]):
            for j in range(b.shape[0]):
                acc = 0.0
                for k in range(a.shape[1]):
                    d = a[i, k] - b[j, k]
                    acc += d * d
                out[i, j] = acc
        return out

    @numba.njit(cache=True)
    def _nb_masked_sq_dists(x, observed, refs):
        out = np.zeros(refs.shape[0], dtype=np.float64)
        for i in range(refs.shape[0]):
            acc = 0.0
            for k in range(x.shape[0]):
                if observed[k]:
                    d = refs[i, k] - x[k]
                    acc += d * d
            out[i] = acc
        return out

    _NUMBA_IMPLS = {
        "segment_sum_rows": _nb_segment_sum_rows,
        "segment_sum_1d": _nb_segment_sum_1d,
        "segment_max_1d": _nb_segment_max_1d,
        "scatter_add_rows": _nb_scatter_add_rows,
        "pairwise_sq_dists": _nb_pairwise_sq_dists,
        "masked_sq_dists": _nb_masked_sq_dists,
    }
else:
    _NUMBA_IMPLS = {}


def _resolve_backend() -> str:
    requested = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if requested not in ("auto", "numba", "numpy"):
        raise ConfigError(f"{_ENV_VAR} must be auto|numba|numpy, got {requested!r}")
    if requested == "numba" and not HAVE_NUMBA:
        raise ConfigError(f"{_ENV_VAR}=numba but numba is not importable")
    if requested == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    return requested


BACKEND = _resolve_backend()

_ACTIVE = _NUMBA_IMPLS if BACKEND == "numba" else _NUMPY_IMPLS

segment_sum_rows = _ACTIVE["segment_sum_rows"]
segment_sum_1d = _ACTIVE["segment_sum_1d"]
segment_max_1d = _ACTIVE["segment_max_1d"]
scatter_add_rows = _ACTIVE["scatter_add_rows"]
pairwise_sq_dists = _ACTIVE["pairwise_sq_dists"]
masked_sq_dists = _ACTIVE["masked_sq_dists"]


def warmup() -> None:
    """Trigger JIT compilation of every kernel on tiny inputs.

    No-op on the numpy backend.  Call before timing anything.
    """
    v = np.ones((2, 2))
    seg = np.array([0, 1], dtype=np.int64)
    segment_sum_rows(v, seg, 2)
    segment_sum_1d(v[:, 0], seg, 2)
    segment_max_1d(v[:, 0], seg, 2)
    scatter_add_rows(np.zeros((2, 2)), seg, v)
    pairwise_sq_dists(v, v)
    masked_sq_dists(v[0], np.array([True, False]), v)
