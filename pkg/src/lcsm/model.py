"""A small LCSM language/recall model with a hand-written backward pass.

Block recipe: ``x <- x + W_o^T rmsnorm(scan(eos(rmsnorm(x))))``, one token
mixer per block and no channel MLP. The norm on the scan output keeps its
scale independent of how much history the memory accumulates; switch it off
with ``out_norm=False``. A final rmsnorm feeds an untied output head.
"""

from dataclasses import dataclass

import numpy as np

from lcsm.codes import ModelCode
from lcsm.scan import ScanInputs, backward_scan, forward_scan
from lcsm.states import compute_eos, compute_eos_backward, init_layer_params

NORM_EPS = 1e-6
HEAD_INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    expand_k: int = 64
    n_layers: int = 2
    vocab_size: int = 128
    code: ModelCode = ModelCode()
    norm: str = "rmsnorm"
    residual: bool = True
    d_value: int = None
    out_norm: bool = True

    def __post_init__(self):
        if self.expand_k < 1 or self.d_model < 1 or self.vocab_size < 1 or self.n_layers < 0:
            raise ValueError("model dims must be positive: %s" % (self,))
        if self.norm != "rmsnorm":
            raise ValueError("only rmsnorm is supported, got %r" % (self.norm,))

    @property
    def d(self):
        return self.d_model if self.d_value is None else self.d_value

    @property
    def psi(self):
        return self.code.psi

    @property
    def tau(self):
        return self.code.tau


def init_params(cfg, seed=0):
    """Parameters in declaration order (the checkpoint order)."""
    rng = np.random.default_rng(seed)
    params = {"embed": rng.standard_normal((cfg.vocab_size, cfg.d_model))}
    for layer in range(cfg.n_layers):
        pre = "layers.%d." % layer
        params[pre + "norm"] = np.ones(cfg.d_model)
        for name, value in init_layer_params(cfg.code, cfg.d_model, cfg.expand_k, cfg.d, rng).items():
            params[pre + name] = value
        if cfg.out_norm:
            params[pre + "out_norm"] = np.ones(cfg.d)
        params[pre + "w_o"] = rng.standard_normal((cfg.d, cfg.d_model)) / np.sqrt(cfg.d)
    params["norm_f"] = np.ones(cfg.d_model)
    # small head: logits start near zero, so the initial loss sits at ln(vocab)
    params["head"] = HEAD_INIT_STD * rng.standard_normal((cfg.d_model, cfg.vocab_size))
    return params


def layer_params(params, layer):
    pre = "layers.%d." % layer
    return {key[len(pre):]: value for key, value in params.items() if key.startswith(pre)}


def rmsnorm(x, w):
    r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + NORM_EPS)
    xhat = x * r
    return xhat * w, (xhat, r)


def rmsnorm_backward(dy, w, cache):
    xhat, r = cache
    dw = (dy * xhat).reshape(-1, w.shape[0]).sum(axis=0)
    dxhat = dy * w
    dx = r * (dxhat - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True))
    return dx, dw


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def model_forward(cfg, params, tokens):
    """Logits ``(B, n, vocab)`` for integer ``tokens`` ``(B, n)``, plus the backward cache."""
    tokens = np.asarray(tokens)
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ValueError("tokens must lie in [0, %d)" % (cfg.vocab_size,))
    x = params["embed"][tokens]
    layers = []
    for layer in range(cfg.n_layers):
        lp = layer_params(params, layer)
        h, norm_cache = rmsnorm(x, lp["norm"])
        eos = compute_eos(lp, cfg.code, h)
        inputs = ScanInputs(eos.e, eos.o, eos.s, eos.i, cfg.psi)
        y, mem = forward_scan(inputs)
        out_cache = None
        if cfg.out_norm:
            y, out_cache = rmsnorm(y, lp["out_norm"])
        out = y @ lp["w_o"]
        x = x + out if cfg.residual else out
        layers.append((norm_cache, eos, inputs, mem, y, out_cache))
    hf, final_cache = rmsnorm(x, params["norm_f"])
    logits = hf @ params["head"]
    return logits, {"tokens": tokens, "layers": layers, "hf": hf, "final": final_cache}


def masked_xent(logits, targets):
    """Mean cross-entropy and accuracy over positions with ``targets >= 0``."""
    mask = targets >= 0
    count = int(mask.sum())
    if count == 0:
        raise ValueError("no supervised positions in batch")
    logp = log_softmax(logits)
    safe = np.where(mask, targets, 0)
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = -float(picked[mask].sum()) / count
    acc = float((logits.argmax(axis=-1) == targets)[mask].mean())
    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, safe[..., None], np.take_along_axis(dlogits, safe[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= mask[..., None] / count
    return loss, acc, dlogits


def model_backward(cfg, params, cache, dlogits):
    grads = {}
    grads["head"] = cache["hf"].reshape(-1, cfg.d_model).T @ dlogits.reshape(-1, cfg.vocab_size)
    dhf = dlogits @ params["head"].T
    dx, grads["norm_f"] = rmsnorm_backward(dhf, params["norm_f"], cache["final"])
    for layer in range(cfg.n_layers - 1, -1, -1):
        pre = "layers.%d." % layer
        lp = layer_params(params, layer)
        norm_cache, eos, inputs, mem, y, out_cache = cache["layers"][layer]
        grads[pre + "w_o"] = y.reshape(-1, cfg.d).T @ dx.reshape(-1, cfg.d_model)
        dy = dx @ lp["w_o"].T
        if cfg.out_norm:
            dy, grads[pre + "out_norm"] = rmsnorm_backward(dy, lp["out_norm"], out_cache)
        sg = backward_scan(inputs, mem, dy)
        eos_grads, dh = compute_eos_backward(lp, cfg.code, eos, sg.de, sg.do, sg.ds, sg.di)
        for name, g in eos_grads.items():
            grads[pre + name] = g
        dxn, grads[pre + "norm"] = rmsnorm_backward(dh, lp["norm"], norm_cache)
        dx = dx + dxn if cfg.residual else dxn
    dembed = np.zeros_like(params["embed"])
    np.add.at(dembed, cache["tokens"].reshape(-1), dx.reshape(-1, cfg.d_model))
    grads["embed"] = dembed
    return {name: grads[name] for name in params}


def loss_and_grad(cfg, params, tokens, targets):
    logits, cache = model_forward(cfg, params, tokens)
    loss, acc, dlogits = masked_xent(logits, targets)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    return loss, acc, model_backward(cfg, params, cache, dlogits)


def loss_only(cfg, params, tokens, targets):
    logits, _ = model_forward(cfg, params, tokens)
    return masked_xent(logits, targets)[:2]


# ---- finite-difference check ----

GRADCHECK_TOL = 1e-4


@dataclass
class GradcheckReport:
    code: str
    psi: str
    tau: float
    errors: dict

    @property
    def max_error(self):
        return max(self.errors.values())

    @property
    def passed(self):
        return self.max_error <= GRADCHECK_TOL

    def lines(self):
        out = ["gradcheck code=%s psi=%s tau=%g" % (self.code, self.psi, self.tau)]
        for name, err in self.errors.items():
            out.append("  %-24s %.3e %s" % (name, err, "ok" if err <= GRADCHECK_TOL else "FAIL"))
        out.append("%s (max %.3e, tol %.0e)" % ("PASS" if self.passed else "FAIL", self.max_error, GRADCHECK_TOL))
        return out


def gradcheck(code, n=6, k=4, d=4, d_model=6, vocab=7, n_layers=2, batch=2, seed=0, eps=1e-5, jitter=0.3):
    """Compare every analytical parameter gradient with central differences on a tiny model.

    Parameters are jittered away from their initial values so that structured
    inits (zero biases, Alibi ladders) do not hide errors. The per-group error
    is ``max|analytic - numeric| / max|numeric|``.
    """
    if n > 8 or k > 6 or d > 4 or d_model > 12:
        raise ValueError("gradcheck dims must satisfy n<=8, k<=6, d<=4, d_model<=12")
    cfg = ModelConfig(d_model=d_model, expand_k=k, n_layers=n_layers, vocab_size=vocab, code=code, d_value=d)
    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed)
    for name in params:
        params[name] = params[name] + jitter * rng.standard_normal(params[name].shape)
    tokens = rng.integers(0, vocab, (batch, n))
    targets = rng.integers(0, vocab, (batch, n))
    _, _, grads = loss_and_grad(cfg, params, tokens, targets)
    errors = {}
    for name, value in params.items():
        numeric = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            old = value[idx]
            value[idx] = old + eps
            up = loss_only(cfg, params, tokens, targets)[0]
            value[idx] = old - eps
            down = loss_only(cfg, params, tokens, targets)[0]
            value[idx] = old
            numeric[idx] = (up - down) / (2 * eps)
        scale = max(float(np.max(np.abs(numeric))), 1e-12)
        errors[name] = float(np.max(np.abs(numeric - grads[name]))) / scale
    return GradcheckReport(str(code), code.psi, code.tau, errors)
