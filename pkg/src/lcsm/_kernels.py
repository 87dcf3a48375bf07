"""Compiled loops for the common scan case: real states, psi="odot", one batch axis.

The numpy path in ``lcsm.scan`` allocates a (B, k, d) temporary per step; these
loops fuse the update, the readout and the finiteness check. Set LCSM_NO_JIT=1
to force the numpy path.
"""

import os

import numpy as np

try:
    if os.environ.get("LCSM_NO_JIT"):
        raise ImportError("disabled by LCSM_NO_JIT")
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None

AVAILABLE = njit is not None

if AVAILABLE:

    @njit(cache=True, fastmath=False)
    def odot_forward(e, o, s, i, m, y):
        """Fill ``m`` (B, n+1, k, d) and ``y`` (B, n, d); return the first bad step or -1."""
        nb, n, k = e.shape
        d = i.shape[2]
        bad = -1
        for b in range(nb):
            for t in range(n):
                for j in range(d):
                    y[b, t, j] = 0.0
                for a in range(k):
                    ea = e[b, t, a]
                    sa = s[b, t, a]
                    for j in range(d):
                        v = o[b, t, a, j] * m[b, t, a, j] + ea * i[b, t, j]
                        m[b, t + 1, a, j] = v
                        y[b, t, j] += sa * v
                if bad < 0:
                    tot = 0.0
                    for j in range(d):
                        tot += y[b, t, j]
                    # s * inf and s * nan stay non-finite even for s = 0, so y flags any bad m entry
                    if not np.isfinite(tot):
                        bad = t
        return bad

    @njit(cache=True, fastmath=False)
    def odot_backward(e, o, s, i, m, dy, de, do, ds, di):
        nb, n, k = e.shape
        d = i.shape[2]
        g = np.zeros((k, d))
        for b in range(nb):
            g[:, :] = 0.0
            for t in range(n - 1, -1, -1):
                for j in range(d):
                    di[b, t, j] = 0.0
                for a in range(k):
                    sa = s[b, t, a]
                    ea = e[b, t, a]
                    acc_e = 0.0
                    acc_s = 0.0
                    for j in range(d):
                        gv = g[a, j] + sa * dy[b, t, j]
                        acc_e += gv * i[b, t, j]
                        acc_s += m[b, t + 1, a, j] * dy[b, t, j]
                        di[b, t, j] += ea * gv
                        do[b, t, a, j] = gv * m[b, t, a, j]
                        g[a, j] = gv * o[b, t, a, j]
                    de[b, t, a] = acc_e
                    ds[b, t, a] = acc_s


def usable(inputs):
    """True when the compiled loops cover ``inputs``."""
    return (AVAILABLE and inputs.psi == "odot" and not inputs.is_complex and len(inputs.batch_shape) == 1)


def _batched(inputs):
    nb = inputs.batch_shape[0]
    n, k, d = inputs.n, inputs.k, inputs.d
    return tuple(np.ascontiguousarray(np.broadcast_to(a, shape)) for a, shape in (
        (inputs.e, (nb, n, k)), (inputs.o, (nb, n, k, d)), (inputs.s, (nb, n, k)), (inputs.i, (nb, n, d))))


def forward(inputs):
    e, o, s, i = _batched(inputs)
    nb, n, k = e.shape
    m = np.empty((nb, n + 1, k, inputs.d))
    m[:, 0] = 0.0
    y = np.empty((nb, n, inputs.d))
    bad = odot_forward(e, o, s, i, m, y)
    return y, m, (None if bad < 0 else bad)


def backward(inputs, m, dy):
    e, o, s, i = _batched(inputs)
    nb, n, k = e.shape
    d = inputs.d
    dy = np.ascontiguousarray(np.broadcast_to(dy, (nb, n, d)))
    de, ds = np.empty((nb, n, k)), np.empty((nb, n, k))
    di, do = np.empty((nb, n, d)), np.empty((nb, n, k, d))
    odot_backward(e, o, s, i, m, dy, de, do, ds, di)
    return de, do, ds, di
