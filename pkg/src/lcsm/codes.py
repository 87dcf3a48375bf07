"""Model codes ``e-o-s-a`` and the activation table they index."""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

PSI_CHOICES = ("odot", "times")

NUM_O_CODES = 12
NUM_A_CODES = 8

ACTIVATION_NAMES = {
    0: "x",
    1: "relu",
    2: "sigmoid",
    3: "1+elu",
    4: "silu",
    5: "elu",
    6: "relu^2",
    7: "x^2",
}

OSCILLATION_NAMES = {
    0: "k d (learnable)",
    1: "k_t, d_t -> k d",
    2: "d_t -> k d",
    3: "k_t -> k d",
    4: "k -> k d",
    5: "d -> k d",
    6: "k, (k d)_t -> k d",
    7: "d, (k d)_t -> k d",
    8: "k, d_t -> k d",
    9: "k_t, d -> k d",
    10: "ones(k, d)",
    11: "exp(i theta) 1_d^T",
}

# o_codes whose oscillation never looks at the input
DATA_INDEPENDENT_O = frozenset({0, 4, 5, 10, 11})
COMPLEX_O = frozenset({11})


class CodeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelCode:
    """One point in the design space.

    ``param_family`` is ``"linear"`` for the four-slot codes and ``"ssm"`` for the
    standalone code ``0``. ``psi`` and ``tau`` are not part of the code string;
    they ride along from the run configuration.
    """

    param_family: str = "linear"
    e_dep: int = 1
    o_code: int = 1
    s_dep: int = 1
    a_code: int = 0
    psi: str = "odot"
    tau: float = 16.0

    def __post_init__(self):
        if self.param_family not in ("linear", "ssm"):
            raise CodeError("param_family must be 'linear' or 'ssm', got %r" % (self.param_family,))
        for name in ("e_dep", "s_dep"):
            if getattr(self, name) not in (0, 1):
                raise CodeError("%s must be 0 or 1, got %r" % (name, getattr(self, name)))
        if not 0 <= self.o_code < NUM_O_CODES:
            raise CodeError("o_code must be in [0, 11], got %r" % (self.o_code,))
        if not 0 <= self.a_code < NUM_A_CODES:
            raise CodeError("a_code must be in [0, 7], got %r" % (self.a_code,))
        if self.psi not in PSI_CHOICES:
            raise CodeError("psi must be one of %s, got %r" % (PSI_CHOICES, self.psi))
        if not self.tau > 0:
            raise CodeError("tau must be positive, got %r" % (self.tau,))

    @property
    def is_ssm(self):
        return self.param_family == "ssm"

    @property
    def is_complex(self):
        return not self.is_ssm and self.o_code in COMPLEX_O

    @property
    def o_data_dependent(self):
        return not self.is_ssm and self.o_code not in DATA_INDEPENDENT_O

    def __str__(self):
        return format_code(self)


def ssm_code(psi="odot", tau=16.0):
    # the slot values mirror what SSM parameterization produces: static e/s, k-vector decay
    return ModelCode("ssm", e_dep=0, o_code=4, s_dep=0, a_code=0, psi=psi, tau=tau)


def parse_code(text, psi="odot", tau=16.0):
    """Parse ``"e-o-s-a"`` or the standalone SSM code ``"0"``.

    >>> parse_code("1-9-1-0").o_code
    9
    """
    text = str(text).strip()
    if text == "0":
        return ssm_code(psi, tau)
    parts = text.split("-")
    if len(parts) != 4:
        raise CodeError("model code must look like e-o-s-a or be '0', got %r" % (text,))
    try:
        e, o, s, a = (int(p) for p in parts)
    except ValueError:
        raise CodeError("model code fields must be integers, got %r" % (text,)) from None
    return ModelCode("linear", e, o, s, a, psi=psi, tau=float(tau))


def format_code(code):
    if code.is_ssm:
        return "0"
    return "%d-%d-%d-%d" % (code.e_dep, code.o_code, code.s_dep, code.a_code)


def all_linear_codes():
    for e in (0, 1):
        for o in range(NUM_O_CODES):
            for s in (0, 1):
                for a in range(NUM_A_CODES):
                    yield ModelCode("linear", e, o, s, a)


def sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def apply_activation(a_code, x):
    x = np.asarray(x, dtype=np.float64)
    if a_code == 0:
        return x.copy()
    if a_code == 1:
        return np.maximum(x, 0.0)
    if a_code == 2:
        return sigmoid(x)
    if a_code == 3:
        return 1.0 + _elu(x)
    if a_code == 4:
        return x * sigmoid(x)
    if a_code == 5:
        return _elu(x)
    if a_code == 6:
        return np.maximum(x, 0.0) ** 2
    if a_code == 7:
        return x * x
    raise CodeError("a_code must be in [0, 7], got %r" % (a_code,))


def d_activation(a_code, x):
    """Elementwise derivative of :func:`apply_activation` at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if a_code == 0:
        return np.ones_like(x)
    if a_code == 1:
        return (x > 0).astype(np.float64)
    if a_code == 2:
        sg = sigmoid(x)
        return sg * (1.0 - sg)
    if a_code in (3, 5):
        return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))
    if a_code == 4:
        sg = sigmoid(x)
        return sg * (1.0 + x * (1.0 - sg))
    if a_code == 6:
        return 2.0 * np.maximum(x, 0.0)
    if a_code == 7:
        return 2.0 * x
    raise CodeError("a_code must be in [0, 7], got %r" % (a_code,))
