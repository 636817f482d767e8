"""NumPy/SciPy implementation of the hot loop, used when the compiled
extension is unavailable (same signatures as the compiled module)."""
import numpy as np
import scipy.sparse as sp


def bellman_max(Q):
    Q = np.ascontiguousarray(Q, dtype=float)
    act = np.argmax(Q, axis=0)            # first maximum -> lowest control index
    return Q[act, np.arange(Q.shape[1])], act.astype(np.int64)


def relax(indptr, indices, data, mass, b, uprev, u, dt, eps, tol, max_iter, m):
    n = len(uprev)
    S = sp.csr_matrix((data, indices, indptr), shape=(m * n, n))
    hist = []
    for it in range(max_iter + 1):
        Q = (b - S @ u + mass * np.tile(u, m)).reshape(m, n)
        best, act = bellman_max(Q)
        R = u - uprev + dt * best
        res = float(np.abs(R).max()) if n else 0.0
        hist.append(res)
        if res <= tol:
            return act, it, np.array(hist), True
        if it == max_iter:
            break
        u -= eps * R
    return act, max_iter, np.array(hist), False
