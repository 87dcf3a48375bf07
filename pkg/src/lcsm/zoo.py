"""Known linear-complexity methods written as EOS configurations.

For every method there are two independent routes from the same raw quantities
(projections of a random input sequence):

* ``engine``    - map the raw quantities to (e, o, s, i, psi) and run the scan
* ``reference`` - the method's own recurrence, coded directly in its own notation

``verify(name)`` runs both plus any extra identity the method admits (diagonal
matrix-to-elementwise reduction, delta-rule algebra, complex-to-cosine form).
"""

from dataclasses import dataclass, field

import numpy as np

from lcsm.codes import ModelCode, parse_code, sigmoid, ssm_code
from lcsm.scan import ScanInputs, forward_scan
from lcsm.states import compute_eos, gate, logit, ssm_parameterize

METHOD_NAMES = (
    "S4", "S5", "DSS", "TNN", "LinearAttention", "TNL", "Mamba", "RWKV4", "Cosformer",
    "LRPE", "GLA", "DUR", "HGRN", "FWP", "M1", "M2", "M3",
)

ZOO_TOL = 1e-10
REDUCTION_TOL = 1e-12
FWP_TOL = 1e-12
COMPLEX_TOL = 1e-10
TNL_DECAY = 1.0 - 2.0 ** -5
COSFORMER_THETA = np.pi / (2 * 64)


@dataclass(frozen=True)
class MethodSpec:
    name: str
    psi: str
    code: ModelCode = None
    channel_wise: bool = False
    complex_memory: bool = False
    fixed_states: dict = field(default_factory=dict)
    notes: str = ""


_SPECS = {
    "S4": MethodSpec("S4", "times", ssm_code("times"), channel_wise=True,
                     notes="bank of SISO SSMs, k x 1 memory per channel; diagonal A from SSM parameterization"),
    "S5": MethodSpec("S5", "times", ssm_code("times"),
                     notes="single MIMO SSM with a dense stable A, k x d memory"),
    "DSS": MethodSpec("DSS", "times", ssm_code("times"),
                      notes="S5 with A = Diag(a) from SSM parameterization"),
    "TNN": MethodSpec("TNN", "times", ssm_code("times"), fixed_states={"shrink": "ones"},
                      notes="Toeplitz network in SSM form: A = Diag(lambda), C = all-ones"),
    "LinearAttention": MethodSpec("LinearAttention", "odot", parse_code("1-10-1-0"),
                                  notes="e=k_t, o=J(kd), s=q_t, i=v_t"),
    "TNL": MethodSpec("TNL", "odot", parse_code("1-4-1-0"), fixed_states={"decay": TNL_DECAY},
                      notes="o = lambda J(kd) with a fixed, non-learnable scalar lambda"),
    "Mamba": MethodSpec("Mamba", "odot", ssm_code("odot"),
                        notes="m_t = A_t * m_{t-1} + B_t u_t^T, A_t = exp(A * Delta_t) with Delta_t from a gate"),
    "RWKV4": MethodSpec("RWKV4", "odot", parse_code("1-5-1-0"), channel_wise=True,
                        notes="numerator only; e = exp(k_t), o = exp(-w), 1 x 1 memory per channel"),
    "Cosformer": MethodSpec("Cosformer", "odot", parse_code("1-11-1-0"), complex_memory=True,
                            fixed_states={"theta": COSFORMER_THETA},
                            notes="o = exp(i theta) J(kd) with one predefined theta"),
    "LRPE": MethodSpec("LRPE", "odot", parse_code("1-11-1-0"), complex_memory=True,
                       notes="o = exp(i Theta) 1_d^T with learnable per-channel Theta"),
    "GLA": MethodSpec("GLA", "odot", parse_code("1-3-1-0"),
                      notes="o = g_t 1_d^T (Diag(g_t) under matrix product)"),
    "DUR": MethodSpec("DUR", "odot", parse_code("1-1-1-0"), notes="o = g_t gbar_t^T"),
    "HGRN": MethodSpec("HGRN", "odot", parse_code("1-2-1-0"), channel_wise=True,
                       notes="e = 1 - lambda_t, o = lambda_t, s = output gate, 1 x 1 memory per channel"),
    "FWP": MethodSpec("FWP", "times", notes="delta rule: o = I - beta_t k_t k_t^T, e = beta_t k_t"),
    "M1": MethodSpec("M1", "times", notes="o = I - k_t k_t^T"),
    "M2": MethodSpec("M2", "times", notes="o = I - k_t kbar_t^T"),
    "M3": MethodSpec("M3", "times", notes="o = I - Diag(k_t)"),
}


class UnknownMethod(KeyError):
    pass


def instantiate(name):
    try:
        return _SPECS[name]
    except KeyError:
        raise UnknownMethod("unknown method %r; choose from %s" % (name, ", ".join(METHOD_NAMES))) from None


def _tile(a, n):
    return np.broadcast_to(a, (n,) + np.shape(a))


def _unit_rows(a):
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


def sample_raw(name, rng, n=12, d_model=5, k=4, d=3, tau=4.0, theta=None):
    """Random raw quantities for ``name``: an input sequence pushed through random projections."""
    spec = instantiate(name)
    x = rng.standard_normal((n, d_model))

    def proj(width):
        return rng.standard_normal((d_model, width)) / np.sqrt(d_model)

    raw = {"x": x, "n": n, "k": k, "d": d, "tau": tau}
    if name in ("S4", "DSS", "TNN", "S5"):
        raw["w_u"] = proj(d)
        raw["u"] = x @ raw["w_u"]
        if name == "S4":
            raw["a_cont"] = -rng.uniform(0.05, 2.0, (d, k))
            raw["b"] = rng.standard_normal((d, k))
            raw["c"] = rng.standard_normal((d, k))
        elif name == "DSS":
            raw["a_cont"] = -rng.uniform(0.05, 2.0, k)
            raw["b"] = rng.standard_normal(k)
            raw["c"] = rng.standard_normal(k)
        elif name == "TNN":
            raw["lam"] = rng.uniform(0.3, 0.99, k)
            raw["b"] = rng.standard_normal(k)
        else:
            a = rng.standard_normal((k, k))
            raw["a"] = 0.9 * a / np.linalg.norm(a, 2)
            raw["b"] = rng.standard_normal(k)
            raw["c"] = rng.standard_normal(k)
        return raw
    if name == "Mamba":
        for key, width in (("w_u", d), ("w_b", k), ("w_c", k), ("w_delta", d)):
            raw[key] = proj(width)
        raw["b_delta"] = rng.standard_normal(d)
        raw["a"] = -rng.uniform(0.1, 2.0, (k, d))
        return raw
    if name == "RWKV4":
        raw["w_r"], raw["w_k"], raw["w_v"] = proj(d), proj(d), proj(d)
        raw["w"] = rng.uniform(0.01, 2.0, d)
        return raw
    if name == "HGRN":
        raw["w_f"], raw["w_in"], raw["w_out"] = proj(d), proj(d), proj(d)
        raw["b_f"] = rng.standard_normal(d)
        return raw
    raw["w_q"], raw["w_k"], raw["w_v"] = proj(k), proj(k), proj(d)
    if name == "TNL":
        raw["lam"] = spec.fixed_states["decay"]
    elif name == "Cosformer":
        raw["theta"] = spec.fixed_states["theta"] if theta is None else float(theta)
    elif name == "LRPE":
        raw["theta"] = rng.uniform(-np.pi, np.pi, k) if theta is None else np.asarray(theta, dtype=np.float64)
    elif name == "GLA":
        raw["w_g"], raw["b_g"] = proj(k), rng.standard_normal(k)
    elif name == "DUR":
        raw["w_g"], raw["b_g"] = proj(k), rng.standard_normal(k)
        raw["w_gbar"], raw["b_gbar"] = proj(d), rng.standard_normal(d)
    elif name == "FWP":
        raw["w_beta"] = rng.standard_normal(d_model) / np.sqrt(d_model)
    elif name == "M2":
        raw["w_kbar"] = proj(k)
    return raw


def _qkv(raw):
    x = raw["x"]
    return x @ raw["w_q"], x @ raw["w_k"], x @ raw["w_v"]


def _via_state_calc(raw, code, extra):
    params = {"w_i": raw["w_v"], "w_e": raw["w_k"], "w_s": raw["w_q"]}
    params.update(extra)
    code = ModelCode("linear", code.e_dep, code.o_code, code.s_dep, code.a_code, psi="odot", tau=raw["tau"])
    eos = compute_eos(params, code, raw["x"])
    return ScanInputs(eos.e, eos.o, eos.s, eos.i, "odot")


def engine_inputs(name, raw):
    """EOS states for ``name``; channel-wise methods return one ScanInputs per channel."""
    spec = instantiate(name)
    n, k, d = raw["n"], raw["k"], raw["d"]
    x = raw["x"]
    if name == "S4":
        banks = []
        for c in range(d):
            e, decay, s = ssm_parameterize(raw["a_cont"][c], raw["b"][c], raw["c"][c])
            banks.append(ScanInputs(_tile(e, n), _tile(np.diag(decay), n), _tile(s, n), raw["u"][:, c:c + 1], "times"))
        return banks
    if name == "S5":
        return ScanInputs(_tile(raw["b"], n), _tile(raw["a"], n), _tile(raw["c"], n), raw["u"], "times")
    if name == "DSS":
        e, decay, s = ssm_parameterize(raw["a_cont"], raw["b"], raw["c"])
        return ScanInputs(_tile(e, n), _tile(np.diag(decay), n), _tile(s, n), raw["u"], "times")
    if name == "TNN":
        return ScanInputs(_tile(raw["b"], n), _tile(np.diag(raw["lam"]), n), np.ones((n, k)), raw["u"], "times")
    if name == "Mamba":
        delta = gate(x @ raw["w_delta"] + raw["b_delta"], raw["tau"])
        a_t = np.exp(raw["a"][None, :, :] * delta[:, None, :])
        return ScanInputs(x @ raw["w_b"], a_t, x @ raw["w_c"], x @ raw["w_u"], "odot")
    if name == "RWKV4":
        r, kk, v = x @ raw["w_r"], x @ raw["w_k"], x @ raw["w_v"]
        return [ScanInputs(np.exp(kk[:, c:c + 1]), np.full((n, 1, 1), np.exp(-raw["w"][c])), r[:, c:c + 1],
                           v[:, c:c + 1], "odot") for c in range(d)]
    if name == "HGRN":
        f = gate(x @ raw["w_f"] + raw["b_f"], raw["tau"])
        inp, og = x @ raw["w_in"], sigmoid(x @ raw["w_out"])
        return [ScanInputs(1.0 - f[:, c:c + 1], f[:, c:c + 1, None], og[:, c:c + 1], inp[:, c:c + 1], "odot")
                for c in range(d)]
    if name == "LinearAttention":
        return _via_state_calc(raw, spec.code, {})
    if name == "TNL":
        return _via_state_calc(raw, spec.code, {"lam_k": np.full(k, logit(raw["lam"]))})
    if name in ("Cosformer", "LRPE"):
        theta = np.broadcast_to(raw["theta"], (k,)).astype(np.float64)
        return _via_state_calc(raw, spec.code, {"theta": theta})
    if name == "GLA":
        return _via_state_calc(raw, spec.code, {"w_g": raw["w_g"], "b_g": raw["b_g"]})
    if name == "DUR":
        return _via_state_calc(raw, spec.code, {"w_g": raw["w_g"], "b_g": raw["b_g"],
                                                "w_gbar": raw["w_gbar"], "b_gbar": raw["b_gbar"]})
    q, kk, v = _qkv(raw)
    eye = np.eye(k)
    if name == "FWP":
        kk = _unit_rows(kk)
        beta = sigmoid(x @ raw["w_beta"])
        o = eye - beta[:, None, None] * kk[:, :, None] * kk[:, None, :]
        return ScanInputs(beta[:, None] * kk, o, q, v, "times")
    if name == "M1":
        kk = _unit_rows(kk)
        return ScanInputs(kk, eye - kk[:, :, None] * kk[:, None, :], q, v, "times")
    if name == "M2":
        kk, kbar = _unit_rows(kk), _unit_rows(x @ raw["w_kbar"])
        return ScanInputs(kk, eye - kk[:, :, None] * kbar[:, None, :], q, v, "times")
    if name == "M3":
        kk = sigmoid(kk)
        return ScanInputs(kk, eye - kk[:, :, None] * eye, q, v, "times")
    raise UnknownMethod(name)


def engine_run(name, raw):
    inputs = engine_inputs(name, raw)
    if isinstance(inputs, list):
        return np.concatenate([forward_scan(bank)[0] for bank in inputs], axis=1)
    return forward_scan(inputs)[0]


# ---- reference recurrences, each in the method's own variables ----

def _ref_ssm_bank(raw):
    n, d = raw["n"], raw["d"]
    y = np.zeros((n, d))
    for c in range(d):
        a_bar = np.diag(np.exp(raw["a_cont"][c]))
        state = np.zeros(raw["k"])
        for t in range(n):
            state = a_bar @ state + raw["b"][c] * raw["u"][t, c]
            y[t, c] = raw["c"][c] @ state
    return y


def _ref_mimo(raw, a_mat, b, c_vec):
    n, d = raw["n"], raw["d"]
    y = np.zeros((n, d))
    # every input column drives its own copy of the k-dim state
    for col in range(d):
        state = np.zeros(raw["k"])
        for t in range(n):
            state = a_mat @ state + b * raw["u"][t, col]
            y[t, col] = c_vec @ state
    return y


def _ref_kv(raw, transition):
    q, kk, v = _qkv(raw)
    kv = np.zeros((raw["k"], raw["d"]), dtype=np.complex128)
    ys = []
    for t in range(raw["n"]):
        kv = transition(t, kv) + np.outer(kk[t], v[t])
        ys.append(kv.real.T @ q[t])
    return np.array(ys)


def _ref_mamba(raw):
    x, n, k, d = raw["x"], raw["n"], raw["k"], raw["d"]
    m = np.zeros((k, d))
    ys = []
    for t in range(n):
        delta = np.exp(np.log(sigmoid(x[t] @ raw["w_delta"] + raw["b_delta"])) / raw["tau"])
        a_t = np.exp(raw["a"] * delta)
        b_t, c_t, u_t = x[t] @ raw["w_b"], x[t] @ raw["w_c"], x[t] @ raw["w_u"]
        m = a_t * m + np.outer(b_t, u_t)
        ys.append(m.T @ c_t)
    return np.array(ys)


def _ref_rwkv4(raw):
    x, n, d = raw["x"], raw["n"], raw["d"]
    y = np.zeros((n, d))
    for c in range(d):
        num = 0.0
        for t in range(n):
            r, kk, v = x[t] @ raw["w_r"][:, c], x[t] @ raw["w_k"][:, c], x[t] @ raw["w_v"][:, c]
            num = np.exp(-raw["w"][c]) * num + np.exp(kk) * v
            y[t, c] = num * r
    return y


def _ref_hgrn(raw):
    x, n, d = raw["x"], raw["n"], raw["d"]
    y = np.zeros((n, d))
    for c in range(d):
        h = 0.0
        for t in range(n):
            f = sigmoid(x[t] @ raw["w_f"][:, c] + raw["b_f"][c]) ** (1.0 / raw["tau"])
            i_t = x[t] @ raw["w_in"][:, c]
            o_t = sigmoid(x[t] @ raw["w_out"][:, c])
            h = f * h + (1.0 - f) * i_t
            y[t, c] = h * o_t
    return y


def _ref_matrix_memory(raw, update):
    q, kk, v = _qkv(raw)
    w = np.zeros((raw["k"], raw["d"]))
    ys = []
    for t in range(raw["n"]):
        w = update(t, w, kk[t], v[t])
        ys.append(w.T @ q[t])
    return np.array(ys)


def reference_run(name, raw):
    instantiate(name)
    x = raw["x"]
    if name == "S4":
        return _ref_ssm_bank(raw)
    if name == "S5":
        return _ref_mimo(raw, raw["a"], raw["b"], raw["c"])
    if name == "DSS":
        return _ref_mimo(raw, np.diag(np.exp(raw["a_cont"])), raw["b"], raw["c"])
    if name == "TNN":
        return _ref_mimo(raw, np.diag(raw["lam"]), raw["b"], np.ones(raw["k"]))
    if name == "Mamba":
        return _ref_mamba(raw)
    if name == "RWKV4":
        return _ref_rwkv4(raw)
    if name == "HGRN":
        return _ref_hgrn(raw)
    if name == "LinearAttention":
        return _ref_kv(raw, lambda t, kv: kv)
    if name == "TNL":
        return _ref_kv(raw, lambda t, kv: raw["lam"] * kv)
    if name == "Cosformer":
        return _ref_kv(raw, lambda t, kv: np.exp(1j * raw["theta"]) * kv)
    if name == "LRPE":
        lam = np.diag(np.exp(1j * raw["theta"]))
        return _ref_kv(raw, lambda t, kv: lam @ kv)
    if name == "GLA":
        g = sigmoid(x @ raw["w_g"] + raw["b_g"]) ** (1.0 / raw["tau"])
        return _ref_kv(raw, lambda t, kv: np.diag(g[t]) @ kv)
    if name == "DUR":
        g = sigmoid(x @ raw["w_g"] + raw["b_g"]) ** (1.0 / raw["tau"])
        gbar = sigmoid(x @ raw["w_gbar"] + raw["b_gbar"]) ** (1.0 / raw["tau"])
        return _ref_kv(raw, lambda t, kv: np.outer(g[t], gbar[t]) * kv)
    if name == "FWP":
        beta = sigmoid(x @ raw["w_beta"])

        def delta_rule(t, w, kk, v):
            kk = kk / np.linalg.norm(kk)
            return w + beta[t] * np.outer(kk, v - w.T @ kk)
        return _ref_matrix_memory(raw, delta_rule)
    if name == "M1":
        def m1(t, w, kk, v):
            kk = kk / np.linalg.norm(kk)
            return w - np.outer(kk, kk @ w) + np.outer(kk, v)
        return _ref_matrix_memory(raw, m1)
    if name == "M2":
        kbar = x @ raw["w_kbar"]

        def m2(t, w, kk, v):
            kk, kb = kk / np.linalg.norm(kk), kbar[t] / np.linalg.norm(kbar[t])
            return w - np.outer(kk, kb @ w) + np.outer(kk, v)
        return _ref_matrix_memory(raw, m2)
    if name == "M3":
        def m3(t, w, kk, v):
            kk = sigmoid(kk)
            return w - kk[:, None] * w + np.outer(kk, v)
        return _ref_matrix_memory(raw, m3)
    raise UnknownMethod(name)


# ---- identities ----

@dataclass
class Check:
    method: str
    check: str
    max_err: float
    tol: float

    @property
    def passed(self):
        return bool(self.max_err <= self.tol)


def diagonal_reduction(inputs):
    """Max gap between a diagonal matrix-product scan and its elementwise twin.

    Accepts either orientation: Type2 with diagonal o, or Type1 with rows
    constant across columns (o = v 1^T).
    """
    d = inputs.d
    if inputs.psi == "times":
        diag = np.diagonal(inputs.o, axis1=-2, axis2=-1)
        twin = ScanInputs(inputs.e, np.repeat(diag[..., :, None], d, axis=-1), inputs.s, inputs.i, "odot")
    else:
        col = inputs.o[..., :, 0]
        if not np.array_equal(np.repeat(col[..., :, None], d, axis=-1), inputs.o):
            raise ValueError("elementwise oscillation is not of the form v 1^T")
        eye = np.eye(inputs.k)
        twin = ScanInputs(inputs.e, col[..., :, None] * eye, inputs.s, inputs.i, "times")
    return float(np.max(np.abs(forward_scan(inputs)[0] - forward_scan(twin)[0])))


def verify_fwp(raw):
    """Dual-route delta rule: the Type2 scan memory against the direct error-correcting update."""
    inputs = engine_inputs("FWP", raw)
    _, mem = forward_scan(inputs)
    x = raw["x"]
    beta = sigmoid(x @ raw["w_beta"])
    kk = _unit_rows(x @ raw["w_k"])
    v = x @ raw["w_v"]
    w = np.zeros((raw["k"], raw["d"]))
    worst = 0.0
    for t in range(raw["n"]):
        w = w + beta[t] * np.outer(kk[t], v[t] - w.T @ kk[t])
        worst = max(worst, float(np.max(np.abs(w - mem[t + 1]))))
    return Check("FWP", "delta-rule dual route", worst, FWP_TOL)


def cosine_form(raw):
    """y_t = sum_s v_s k_s^T diag(cos((t - s) theta)) q_t, evaluated directly."""
    q, kk, v = _qkv(raw)
    theta = np.broadcast_to(raw["theta"], (raw["k"],))
    n = raw["n"]
    y = np.zeros((n, raw["d"]))
    for t in range(n):
        for src in range(t + 1):
            y[t] += v[src] * (kk[src] @ (np.cos((t - src) * theta) * q[t]))
    return y


def verify_complex_equivalence(method, raw):
    if method not in ("Cosformer", "LRPE"):
        raise UnknownMethod("complex equivalence applies to Cosformer and LRPE, not %r" % (method,))
    err = float(np.max(np.abs(engine_run(method, raw) - cosine_form(raw))))
    return Check(method, "complex recurrence vs cosine reweighting", err, COMPLEX_TOL)


def verify(name, rng, n=12, d_model=5, k=4, d=3):
    """Run every check that applies to ``name``; returns a list of :class:`Check`."""
    raw = sample_raw(name, rng, n=n, d_model=d_model, k=k, d=d)
    checks = [Check(name, "engine vs reference", float(np.max(np.abs(engine_run(name, raw) - reference_run(name, raw)))),
                    ZOO_TOL)]
    if name in ("S4", "DSS", "GLA", "LRPE"):
        inputs = engine_inputs(name, raw)
        banks = inputs if isinstance(inputs, list) else [inputs]
        checks.append(Check(name, "diagonal reduction", max(diagonal_reduction(b) for b in banks), REDUCTION_TOL))
    if name == "FWP":
        checks.append(verify_fwp(raw))
    if name in ("Cosformer", "LRPE"):
        checks.append(verify_complex_equivalence(name, raw))
    return checks


def verify_all(seed=0, **dims):
    rng = np.random.default_rng(seed)
    return {name: verify(name, rng, **dims) for name in METHOD_NAMES}
