"""numpy fallback for the compiled kernels in ``_kernels.pyx``.

Same signatures, same bits: the mask stream is SplitMix64 over a counter,
and squared distances are accumulated sequentially in long double.
"""
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * MIX1
    z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


def splitmix_stream(seed: int, dim: int) -> np.ndarray:
    counter = np.arange(1, dim + 1, dtype=np.uint64)
    return _mix(np.uint64(seed) + counter * GOLDEN)


def expand_mask(seeds, signs, dim: int) -> np.ndarray:
    out = np.zeros(dim, dtype=np.uint64)
    counter = np.arange(1, dim + 1, dtype=np.uint64) * GOLDEN
    for s, sign in zip(np.asarray(seeds, dtype=np.uint64), np.asarray(signs)):
        stream = _mix(s + counter)
        if sign > 0:
            out += stream
        else:
            out -= stream
    return out


def sq_dist_rows(X, rows, cols) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    out = np.empty((rows.shape[0], cols.shape[0]), dtype=np.float64)
    if X.shape[1] == 0:
        out.fill(0.0)
        return out
    for a, ra in enumerate(rows):
        diff = X[ra][None, :] - X[cols]
        sq = diff * diff
        # cumsum accumulates left to right, matching the compiled loop
        out[a] = np.cumsum(sq, axis=1, dtype=np.longdouble)[:, -1].astype(np.float64)
    return out
