"""Per-timestep EOS states from a layer input, and the matching backward pass.

Every oscillation code except 0 builds ``o_t`` as an outer product ``u_t v_t^T``
of a k-side vector and a p-side vector, each a product of factors:

* ``gate``  - data dependent, ``sigmoid(x W + b) ** (1 / tau)``
* ``lam``   - data independent, ``sigmoid(lambda)`` with Alibi-initialized logits
* ``phase`` - data independent, ``exp(i theta)``

Missing factors are ones, so code 10 is the all-ones matrix. Code 0 is a free
k x p matrix squashed through a sigmoid. p is d for psi="odot" and k for
psi="times". Parameters live in a flat ``dict`` of float64 arrays.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_expit

from lcsm.codes import apply_activation, d_activation, sigmoid

SSM_DELTA = 1.0

K_SIDE = {
    1: ("gate",),
    3: ("gate",),
    4: ("lam",),
    6: ("lam", "gate"),
    8: ("lam",),
    9: ("gate",),
    11: ("phase",),
}
P_SIDE = {
    1: ("gate",),
    2: ("gate",),
    5: ("lam",),
    7: ("lam", "gate"),
    8: ("gate",),
    9: ("lam",),
}

_PARAM_NAMES = {
    ("k", "gate"): ("w_g", "b_g"),
    ("p", "gate"): ("w_gbar", "b_gbar"),
    ("k", "lam"): ("lam_k",),
    ("p", "lam"): ("lam_p",),
    ("k", "phase"): ("theta",),
}


def log_sigmoid(z):
    return log_expit(np.asarray(z, dtype=np.float64))


def gate(z, tau):
    """``sigmoid(z) ** (1 / tau)``, evaluated in log space so it never underflows to 0 early."""
    if not tau > 0:
        raise ValueError("tau must be positive, got %r" % (tau,))
    return np.exp(log_sigmoid(z) / tau)


def gate_backward(z, tau):
    """Elementwise derivative of :func:`gate` with respect to ``z``."""
    return gate(z, tau) * (1.0 - sigmoid(z)) / tau


def alibi_decay(k):
    """Geometric ladder of per-channel decays ``2 ** (-8 (j + 1) / k)``."""
    if k < 1:
        raise ValueError("k must be >= 1, got %r" % (k,))
    return 2.0 ** (-8.0 * np.arange(1, k + 1) / k)


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def ssm_parameterize(a_cont, b, c, delta=SSM_DELTA):
    """Discretize a diagonal continuous SSM into static (expand, oscillation, shrink) states."""
    a_cont = np.asarray(a_cont, dtype=np.float64)
    if not np.all(a_cont < 0):
        raise ValueError("continuous SSM poles must be strictly negative, got %s" % (a_cont,))
    if not delta > 0:
        raise ValueError("step size delta must be positive, got %r" % (delta,))
    return np.asarray(b, dtype=np.float64), np.exp(delta * a_cont), np.asarray(c, dtype=np.float64)


def osc_width(code, k, d):
    return d if code.psi == "odot" else k


def init_layer_params(code, d_model, k, d, rng):
    """Fresh parameters for one LCSM mixer under ``code``."""
    p = osc_width(code, k, d)
    normal = rng.standard_normal
    params = {"w_i": normal((d_model, d)) / np.sqrt(d_model)}
    if code.is_ssm:
        a_cont = np.log(alibi_decay(k)) / SSM_DELTA
        params["a_log"] = np.log(-a_cont)
        params["ssm_b"] = normal(k) / np.sqrt(k)
        params["ssm_c"] = normal(k) / np.sqrt(k)
        return params
    for side, dep in (("e", code.e_dep), ("s", code.s_dep)):
        if dep:
            params["w_" + side] = normal((d_model, k)) / np.sqrt(d_model)
        else:
            params[side + "_static"] = normal(k) / np.sqrt(k)
    if code.o_code == 0:
        params["o_logit"] = np.repeat(logit(alibi_decay(k))[:, None], p, axis=1)
    for side, width, table in (("k", k, K_SIDE), ("p", p, P_SIDE)):
        for factor in table.get(code.o_code, ()):
            if factor == "gate":
                w, b = _PARAM_NAMES[(side, "gate")]
                params[w] = normal((d_model, width)) / np.sqrt(d_model)
                params[b] = np.zeros(width)
            elif factor == "lam":
                params[_PARAM_NAMES[(side, "lam")][0]] = logit(alibi_decay(width))
            else:
                params["theta"] = 10000.0 ** (-np.arange(width) / width)
    return params


@dataclass
class EosStates:
    e: np.ndarray
    o: np.ndarray
    s: np.ndarray
    i: np.ndarray
    is_complex: bool = False
    cache: dict = field(default_factory=dict, repr=False)


def _flat(a):
    return a.reshape(-1, a.shape[-1])


def _side_factors(params, code, h, side, tau):
    table = K_SIDE if side == "k" else P_SIDE
    factors = []
    for factor in table.get(code.o_code, ()):
        names = _PARAM_NAMES[(side, factor)]
        if factor == "gate":
            z = h @ params[names[0]] + params[names[1]]
            factors.append((factor, names, gate(z, tau), z))
        elif factor == "lam":
            factors.append((factor, names, sigmoid(params[names[0]]), None))
        else:
            factors.append((factor, names, np.exp(1j * params[names[0]]), None))
    return factors


def _product(factors, width):
    out = np.ones(width)
    for f in factors:
        out = out * f[2]
    return out


def compute_eos(params, code, h):
    """States for inputs ``h`` of shape ``(..., d_model)``.

    Returns :class:`EosStates` with ``e, s`` of shape ``(..., k)``, ``i`` of shape
    ``(..., d)`` and ``o`` of shape ``(..., k, p)``. Data-independent oscillations
    come back as read-only broadcast views.
    """
    h = np.asarray(h, dtype=np.float64)
    lead = h.shape[:-1]
    w_i = params["w_i"]
    d = w_i.shape[1]
    i = h @ w_i
    cache = {"h": h}
    if code.is_ssm:
        a_cont = -np.exp(params["a_log"])
        e_static, decay, s_static = ssm_parameterize(a_cont, params["ssm_b"], params["ssm_c"])
        k = decay.shape[0]
        e = np.broadcast_to(e_static, lead + (k,))
        s = np.broadcast_to(s_static, lead + (k,))
        o = np.diag(decay) if code.psi == "times" else np.repeat(decay[:, None], d, axis=1)
        cache["decay"] = decay
        cache["a_cont"] = a_cont
        return EosStates(e, np.broadcast_to(o, lead + o.shape), s, i, False, cache)

    for side in ("e", "s"):
        if getattr(code, side + "_dep"):
            pre = h @ params["w_" + side]
            val = apply_activation(code.a_code, pre)
        else:
            pre = params[side + "_static"]
            val = np.broadcast_to(apply_activation(code.a_code, pre), lead + pre.shape)
        cache[side + "_pre"] = pre
        cache[side] = val
    k = cache["e"].shape[-1]
    p = d if code.psi == "odot" else k

    if code.o_code == 0:
        o = sigmoid(params["o_logit"])
        cache["o_full"] = o
    else:
        kf = _side_factors(params, code, h, "k", code.tau)
        pf = _side_factors(params, code, h, "p", code.tau)
        u = _product(kf, k)
        v = _product(pf, p)
        cache.update(k_factors=kf, p_factors=pf, u=u, v=v)
        o = u[..., :, None] * v[..., None, :]
    if o.shape[:-2] != lead:
        o = np.broadcast_to(o, lead + o.shape[-2:])
    return EosStates(cache["e"], o, cache["s"], i, code.is_complex, cache)


def _sum_to(g, shape):
    """Sum broadcast axes of ``g`` so it matches ``shape``."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    return g


def _factor_grads(factors, du, grads, dh, h, tau, params):
    for idx, (kind, names, val, z) in enumerate(factors):
        rest = 1.0
        for jdx, other in enumerate(factors):
            if jdx != idx:
                rest = rest * other[2]
        dval = du * np.conj(rest)
        if kind == "gate":
            dz = np.real(dval) * gate_backward(z, tau)
            grads[names[0]] = _flat(h).T @ _flat(dz)
            grads[names[1]] = _flat(dz).sum(axis=0)
            dh += dz @ params[names[0]].T
        elif kind == "lam":
            grads[names[0]] = _sum_to(np.real(dval), val.shape) * val * (1.0 - val)
        else:
            # val = exp(i theta): dL/dtheta = Re(conj(dval) * i * val)
            grads[names[0]] = _sum_to(np.real(np.conj(dval) * 1j * val), val.shape)


def compute_eos_backward(params, code, eos, de, do, ds, di):
    """Parameter gradients and input gradient given cotangents of the four states.

    ``do`` may be complex (code 11); its real and imaginary parts are the
    cotangents of the real and imaginary parts of ``o``.
    """
    cache = eos.cache
    h = cache["h"]
    grads = {}
    grads["w_i"] = _flat(h).T @ _flat(di)
    dh = di @ params["w_i"].T
    if code.is_ssm:
        decay, a_cont = cache["decay"], cache["a_cont"]
        if code.psi == "times":
            ddecay = np.diagonal(do, axis1=-2, axis2=-1)
        else:
            ddecay = do.sum(axis=-1)
        ddecay = _sum_to(np.real(ddecay), decay.shape)
        grads["a_log"] = ddecay * decay * SSM_DELTA * a_cont
        grads["ssm_b"] = _sum_to(de, params["ssm_b"].shape)
        grads["ssm_c"] = _sum_to(ds, params["ssm_c"].shape)
        return grads, dh

    for side, dstate in (("e", de), ("s", ds)):
        pre = cache[side + "_pre"]
        dpre = dstate * d_activation(code.a_code, pre)
        if getattr(code, side + "_dep"):
            grads["w_" + side] = _flat(h).T @ _flat(dpre)
            dh = dh + dpre @ params["w_" + side].T
        else:
            grads[side + "_static"] = _sum_to(dpre, pre.shape)

    if code.o_code == 0:
        o = cache["o_full"]
        grads["o_logit"] = _sum_to(np.real(do), o.shape) * o * (1.0 - o)
    elif code.o_code != 10:
        u, v = cache["u"], cache["v"]
        # o = u v^T, so du = do conj(v) and dv = do^T conj(u)
        du = np.matmul(do, np.conj(v)[..., :, None])[..., 0]
        dv = np.matmul(np.swapaxes(do, -1, -2), np.conj(u)[..., :, None])[..., 0]
        dh = np.array(dh, dtype=np.float64)
        _factor_grads(cache["k_factors"], du, grads, dh, h, code.tau, params)
        _factor_grads(cache["p_factors"], dv, grads, dh, h, code.tau, params)
    return grads, dh
