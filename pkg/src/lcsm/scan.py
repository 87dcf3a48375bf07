"""The LCSM scan: forward recurrence, its reverse-mode sweep, and an unrolled oracle.

Shapes (leading batch dims ``...`` broadcast across the four state arrays)::

    e  (..., n, k)      expand states
    o  (..., n, k, p)   oscillation states; p = d for psi="odot", p = k for psi="times"
    s  (..., n, k)      shrink states
    i  (..., n, d)      input states

Memory follows ``m_t = g_psi(o_t, m_{t-1}) + e_t i_t^T`` from ``m_0 = 0`` and the
output is ``y_t = Re(m_t)^T s_t``. A complex ``o`` makes the memory complex.
"""

from dataclasses import dataclass

import numpy as np

from lcsm import _kernels, tensor

ORACLE_MAX_LEN = 64


@dataclass
class ScanInputs:
    e: np.ndarray
    o: np.ndarray
    s: np.ndarray
    i: np.ndarray
    psi: str = "odot"

    def __post_init__(self):
        self.e = np.asarray(self.e, dtype=np.float64)
        self.s = np.asarray(self.s, dtype=np.float64)
        self.i = np.asarray(self.i, dtype=np.float64)
        o = np.asarray(self.o)
        self.o = o.astype(np.complex128 if np.iscomplexobj(o) else np.float64, copy=False)
        if self.psi not in ("odot", "times"):
            raise ValueError("psi must be 'odot' or 'times', got %r" % (self.psi,))
        e, o, s, i = self.e, self.o, self.s, self.i
        if e.ndim < 2 or s.ndim < 2 or i.ndim < 2 or o.ndim < 3:
            raise ValueError(
                "state arrays need a time axis: e %s, o %s, s %s, i %s" % (e.shape, o.shape, s.shape, i.shape)
            )
        n, k = e.shape[-2:]
        d = i.shape[-1]
        p = d if self.psi == "odot" else k
        if n < 1:
            raise ValueError("sequence length must be >= 1")
        if s.shape[-2:] != (n, k):
            raise ValueError("shrink shape %s does not match expand shape %s" % (s.shape, e.shape))
        if i.shape[-2] != n:
            raise ValueError("input shape %s does not match sequence length %d" % (i.shape, n))
        if o.shape[-3:] != (n, k, p):
            raise ValueError(
                "oscillation shape %s, expected (..., %d, %d, %d) for psi=%s" % (o.shape, n, k, p, self.psi)
            )
        self.batch_shape = np.broadcast_shapes(e.shape[:-2], o.shape[:-3], s.shape[:-2], i.shape[:-2])

    @property
    def n(self):
        return self.e.shape[-2]

    @property
    def k(self):
        return self.e.shape[-1]

    @property
    def d(self):
        return self.i.shape[-1]

    @property
    def is_complex(self):
        return np.iscomplexobj(self.o)


@dataclass
class StepGrads:
    """Cotangents for every timestep, stacked along the time axis.

    ``do`` always carries the full batch shape even when ``o`` was broadcast;
    callers sum over whatever axes they broadcast. ``dm`` is ``None`` unless
    requested, and holds the total cotangent of each ``m_t``.
    """

    de: np.ndarray
    do: np.ndarray
    ds: np.ndarray
    di: np.ndarray
    dm: np.ndarray = None


def _first_bad_step(m):
    bad = ~np.isfinite(m).all(axis=(-1, -2))
    bad = bad.reshape(-1, bad.shape[-1]).any(axis=0)
    return int(np.argmax(bad)) if bad.any() else None


def forward_scan(inputs, check_finite=True, jit=True):
    """Run the recurrence; return ``(y, m)`` where ``m[..., t]`` is m_t for t = 0..n.

    ``jit=False`` forces the numpy loop even where the compiled one applies.
    """
    if jit and _kernels.usable(inputs):
        y, m, bad = _kernels.forward(inputs)
        if check_finite and bad is not None:
            raise FloatingPointError("non-finite memory state at timestep %d" % (bad + 1,))
        return y, m
    e, o, s, i = inputs.e, inputs.o, inputs.s, inputs.i
    n, k, d = inputs.n, inputs.k, inputs.d
    batch = inputs.batch_shape
    m = np.zeros(batch + (n + 1, k, d), dtype=o.dtype)
    for t in range(n):
        if inputs.psi == "odot":
            np.multiply(o[..., t, :, :], m[..., t, :, :], out=m[..., t + 1, :, :])
        else:
            np.matmul(o[..., t, :, :], m[..., t, :, :], out=m[..., t + 1, :, :])
        m[..., t + 1, :, :] += e[..., t, :, None] * i[..., t, None, :]
    if check_finite:
        bad = _first_bad_step(m[..., 1:, :, :])
        if bad is not None:
            raise FloatingPointError("non-finite memory state at timestep %d" % (bad + 1,))
    mr = m[..., 1:, :, :].real
    y = np.matmul(s[..., :, None, :], mr)[..., 0, :]
    return y, m


def backward_scan(inputs, cache, dy, keep_dm=False, jit=True):
    """Reverse sweep through the recurrence given output cotangents ``dy``.

    ``cache`` is the memory stack returned by :func:`forward_scan`. The
    oscillation cotangent pairs the memory cotangent with m_{t-1}, the state the
    oscillation actually multiplied.
    """
    e, o, s, i = inputs.e, inputs.o, inputs.s, inputs.i
    n, k, d = inputs.n, inputs.k, inputs.d
    m = cache
    dy = np.asarray(dy, dtype=np.float64)
    if m.shape[-3] != n + 1:
        raise ValueError("cache holds %d steps, inputs have %d" % (m.shape[-3] - 1, n))
    if dy.shape[-2:] != (n, d):
        raise ValueError("dy shape %s does not match outputs (..., %d, %d)" % (dy.shape, n, d))
    batch = np.broadcast_shapes(inputs.batch_shape, dy.shape[:-2])
    if jit and not keep_dm and batch == inputs.batch_shape and _kernels.usable(inputs):
        de, do, ds, di = _kernels.backward(inputs, m, dy)
        return StepGrads(de=de, do=do, ds=ds, di=di)
    p = o.shape[-1]
    de = np.empty(batch + (n, k))
    di = np.empty(batch + (n, d))
    do = np.empty(batch + (n, k, p), dtype=o.dtype)
    dm = np.empty(batch + (n, k, d), dtype=o.dtype) if keep_dm else None
    g = np.zeros(batch + (k, d), dtype=o.dtype)
    cplx = np.iscomplexobj(o)
    for t in range(n - 1, -1, -1):
        g += s[..., t, :, None] * dy[..., t, None, :]
        if keep_dm:
            dm[..., t, :, :] = g
        gr = g.real if cplx else g
        de[..., t, :] = np.matmul(gr, i[..., t, :, None])[..., 0]
        di[..., t, :] = np.matmul(e[..., t, None, :], gr)[..., 0, :]
        prev = m[..., t, :, :]
        ot = o[..., t, :, :]
        if cplx:
            prev = prev.conj()
            ot = ot.conj()
        if inputs.psi == "odot":
            np.multiply(g, prev, out=do[..., t, :, :])
            if g.shape == np.broadcast_shapes(g.shape, ot.shape):
                g *= ot
            else:
                g = ot * g
        else:
            np.matmul(g, np.swapaxes(prev, -1, -2), out=do[..., t, :, :])
            g = np.matmul(np.swapaxes(ot, -1, -2), g)
    mr = m[..., 1:, :, :].real
    ds = np.matmul(mr, dy[..., :, :, None])[..., 0]
    return StepGrads(de=de, do=do, ds=ds, di=di, dm=dm)


def oracle_forward(inputs):
    """Evaluate every output from the unrolled sum, one product chain per (s, t) pair.

    O(n^2) chains for a single unbatched sequence; independent of the scan.
    """
    if inputs.batch_shape != ():
        raise ValueError("oracle_forward takes a single sequence, got batch shape %s" % (inputs.batch_shape,))
    n = inputs.n
    if n > ORACLE_MAX_LEN:
        raise ValueError("oracle_forward is O(n^2); n=%d exceeds %d" % (n, ORACLE_MAX_LEN))
    apply = tensor.hadamard if inputs.psi == "odot" else tensor.matmul
    ys = []
    for t in range(n):
        acc = np.zeros((inputs.k, inputs.d), dtype=inputs.o.dtype)
        for src in range(t + 1):
            chain = tensor.outer(inputs.e[src], inputs.i[src]).astype(inputs.o.dtype)
            for r in range(src + 1, t + 1):
                chain = apply(inputs.o[r], chain)
            acc = acc + chain
        ys.append(tensor.matvec(tensor.real_part(acc), inputs.s[t]))
    return np.stack(ys)
