import numpy as np
import pytest

from lcsm.codes import ModelCode, parse_code
from lcsm.scan import ScanInputs, backward_scan, forward_scan
from lcsm.states import (
    alibi_decay, compute_eos, compute_eos_backward, gate, gate_backward, init_layer_params, ssm_parameterize,
)

from conftest import central_diff

DATA_INDEPENDENT = (0, 4, 5, 10, 11)
DATA_DEPENDENT = (1, 2, 3, 6, 7, 8, 9)


def test_gate_examples():
    # 0.5 ** (1/16) = exp(-ln 2 / 16), to 15 digits with mpmath
    assert gate(np.array([0.0]), 16)[0] == pytest.approx(0.957603280698573646, rel=1e-15)
    assert gate(np.array([0.0]), 1)[0] == 0.5
    for tau in (1, 16, 64):
        assert gate(np.array([50.0]), tau)[0] == pytest.approx(1.0, abs=1e-20)


def test_gate_saturates_inside_unit_interval():
    z = np.array([-700.0, -40.0, 0.0, 40.0])
    out = gate(z, 16)
    assert np.all(out > 0) and np.all(out <= 1)


def test_gate_backward_matches_closed_form_and_differences(rng):
    z = rng.uniform(-6, 6, 50)
    for tau in (1.0, 3.0, 16.0):
        numeric = (gate(z + 1e-6, tau) - gate(z - 1e-6, tau)) / 2e-6
        assert np.allclose(gate_backward(z, tau), numeric, rtol=1e-6, atol=1e-12)


def test_gate_rejects_nonpositive_tau():
    with pytest.raises(ValueError):
        gate(np.zeros(1), 0.0)


def test_alibi_decay_examples():
    assert alibi_decay(1)[0] == 0.00390625
    lam = alibi_decay(8)
    assert lam[7] == 2.0 ** -8
    assert np.all((lam > 0) & (lam < 1))
    assert np.all(np.diff(alibi_decay(64)) < 0)


def test_ssm_parameterize_examples():
    _, o, _ = ssm_parameterize([-1.0], [1.0], [1.0], delta=1.0)
    assert o[0] == pytest.approx(0.36787944117144233, rel=1e-15)
    with pytest.raises(ValueError):
        ssm_parameterize([-0.0], [1.0], [1.0])
    with pytest.raises(ValueError):
        ssm_parameterize([0.5], [1.0], [1.0])
    _, o_small, _ = ssm_parameterize([-3.0], [1.0], [1.0], delta=1e-9)
    assert o_small[0] == pytest.approx(1.0, abs=1e-8)


def _random_params(code, rng, d_model=5, k=3, d=2, jitter=0.5):
    params = init_layer_params(code, d_model, k, d, rng)
    return {name: v + jitter * rng.standard_normal(v.shape) for name, v in params.items()}


def test_code10_is_all_ones_for_every_input(rng):
    code = parse_code("0-10-0-0")
    params = init_layer_params(code, 5, 3, 2, rng)
    for _ in range(3):
        eos = compute_eos(params, code, rng.standard_normal((4, 5)))
        assert np.array_equal(eos.o, np.ones((4, 3, 2)))


def test_code1_is_outer_product_of_two_gates(rng):
    code = parse_code("1-1-1-0", tau=4.0)
    params = _random_params(code, rng)
    x = rng.standard_normal(5)
    eos = compute_eos(params, code, x)
    g = gate(x @ params["w_g"] + params["b_g"], 4.0)
    gbar = gate(x @ params["w_gbar"] + params["b_gbar"], 4.0)
    assert np.allclose(eos.o, np.outer(g, gbar), rtol=1e-15)


def test_zero_input_gives_zero_expand_state(rng):
    code = parse_code("1-1-1-0")
    params = init_layer_params(code, 5, 3, 2, rng)
    eos = compute_eos(params, code, np.zeros((3, 5)))
    assert np.array_equal(eos.e, np.zeros((3, 3)))
    assert np.array_equal(eos.e[..., :, None] * eos.i[..., None, :], np.zeros((3, 3, 2)))


@pytest.mark.parametrize("psi", ["odot", "times"])
@pytest.mark.parametrize("o_code", DATA_DEPENDENT)
def test_data_dependent_oscillations_lie_in_open_unit_interval(o_code, psi, rng):
    code = ModelCode("linear", 1, o_code, 1, 0, psi=psi, tau=2.0)
    params = _random_params(code, rng)
    eos = compute_eos(params, code, 3 * rng.standard_normal((6, 5)))
    assert np.all(eos.o > 0) and np.all(eos.o < 1)
    other = compute_eos(params, code, 3 * rng.standard_normal((6, 5)))
    assert not np.allclose(eos.o, other.o)


@pytest.mark.parametrize("psi", ["odot", "times"])
@pytest.mark.parametrize("o_code", DATA_INDEPENDENT)
def test_data_independent_oscillations_ignore_the_input(o_code, psi, rng):
    code = ModelCode("linear", 1, o_code, 1, 0, psi=psi)
    params = init_layer_params(code, 5, 3, 2, rng)
    a = compute_eos(params, code, rng.standard_normal((6, 5))).o
    b = compute_eos(params, code, rng.standard_normal((6, 5))).o
    assert np.array_equal(a, b)
    assert np.all(np.abs(a) <= 1 + 1e-12)
    assert np.array_equal(a[0], a[-1])
    if o_code != 11:
        assert np.all(a > 0)


def test_code11_has_unit_modulus_complex_entries(rng):
    code = parse_code("1-11-1-0")
    params = _random_params(code, rng)
    eos = compute_eos(params, code, rng.standard_normal((4, 5)))
    assert eos.is_complex
    assert np.max(np.abs(np.abs(eos.o) - 1.0)) <= 1e-12


def test_oscillation_width_follows_psi(rng):
    k, d = 3, 2
    for psi, p in (("odot", d), ("times", k)):
        code = parse_code("1-1-1-0", psi=psi)
        eos = compute_eos(init_layer_params(code, 5, k, d, rng), code, rng.standard_normal((4, 5)))
        assert eos.o.shape == (4, k, p)


def _readout_loss(params, code, h, w_y):
    eos = compute_eos(params, code, h)
    y, _ = forward_scan(ScanInputs(eos.e, eos.o, eos.s, eos.i, code.psi))
    return float((y * w_y).sum())


def _check_eos_backward(code, rng, tol=1e-5):
    params = _random_params(code, rng, jitter=0.3)
    h = rng.standard_normal((2, 4, 5))
    w_y = rng.standard_normal((2, 4, 2))
    eos = compute_eos(params, code, h)
    inputs = ScanInputs(eos.e, eos.o, eos.s, eos.i, code.psi)
    y, mem = forward_scan(inputs)
    sg = backward_scan(inputs, mem, w_y)
    grads, dh = compute_eos_backward(params, code, eos, sg.de, sg.do, sg.ds, sg.di)
    assert set(grads) == set(params)
    f = lambda: _readout_loss(params, code, h, w_y)  # noqa: E731
    for name, value in params.items():
        numeric = central_diff(f, value)
        err = np.max(np.abs(numeric - grads[name])) / max(np.max(np.abs(numeric)), 1e-12)
        assert err <= tol, (name, err)
    numeric = central_diff(f, h)
    assert np.max(np.abs(numeric - dh)) / np.max(np.abs(numeric)) <= tol


@pytest.mark.parametrize("psi", ["odot", "times"])
@pytest.mark.parametrize("o_code", range(12))
def test_eos_backward_every_o_code(o_code, psi, rng):
    _check_eos_backward(ModelCode("linear", 1, o_code, 1, 4, psi=psi, tau=3.0), rng)


@pytest.mark.parametrize("a_code", range(8))
def test_eos_backward_every_activation(a_code, rng):
    _check_eos_backward(ModelCode("linear", 1, 1, 0, a_code, tau=2.0), rng)
    _check_eos_backward(ModelCode("linear", 0, 3, 1, a_code, tau=2.0), rng)


@pytest.mark.parametrize("psi", ["odot", "times"])
def test_eos_backward_ssm(psi, rng):
    _check_eos_backward(parse_code("0", psi=psi), rng)


def test_ssm_states_are_data_independent(rng):
    code = parse_code("0")
    params = init_layer_params(code, 5, 3, 2, rng)
    a = compute_eos(params, code, rng.standard_normal((3, 5)))
    b = compute_eos(params, code, rng.standard_normal((3, 5)))
    for field in ("e", "o", "s"):
        assert np.array_equal(getattr(a, field), getattr(b, field))
    assert np.all((a.o > 0) & (a.o < 1))
