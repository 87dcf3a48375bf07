"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

The MQAR criteria train real desk-scale models and take several minutes each.
"""

import time

import numpy as np
import pytest

from lcsm import mqar, zoo
from lcsm.codes import ModelCode, all_linear_codes, ssm_code
from lcsm.model import GRADCHECK_TOL, ModelConfig, gradcheck, init_params, loss_only
from lcsm.scan import ScanInputs, forward_scan, oracle_forward
from lcsm.states import compute_eos, gate, init_layer_params
from lcsm.train import TAU_GRID, RunConfig, train

MQAR_CODE = "1-1-1-2"
MQAR_CONTROL = "0-0-0-0"
MQAR_TAU = 4  # best cell of the tau grid at desk scale; the control has no gates
DESK = dict(d_model=64, expand_k=64, layers=2, lr=5e-3, steps=1500, batch_size=32, eval_interval=250,
            eval_examples=1000, seed=0)
DESK_CPU_LIMIT = 600.0
TAU_NOISE = 0.02


def report(request, number, title, ok, detail):
    line = "criterion %d %-28s %s  %s" % (number, title, "PASS" if ok else "FAIL", detail)
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    if reporter is not None:
        reporter.write_line("")
        reporter.write_line(line)
    else:
        print(line)
    assert ok, line


# ---- shared desk-scale MQAR runs ----

@pytest.fixture(scope="module")
def desk_data():
    return mqar.generate(mqar.MqarConfig(seq_len=64, vocab_size=128, num_kv_pairs=8, num_examples=21000, seed=0))


_runs = {}


def desk_run(ds, code, tau):
    key = (code, tau)
    if key not in _runs:
        cfg = RunConfig(code=code, tau=float(tau), **DESK)
        cpu0 = time.process_time()
        result = train(cfg, ds)
        _runs[key] = (result, time.process_time() - cpu0)
    return _runs[key]


# ---- criteria ----

def gradient_suite_codes():
    fixed_o, fixed_a = 1, 0
    codes = []
    for psi in ("odot", "times"):
        codes += [ModelCode("linear", 1, o, 1, fixed_a, psi=psi) for o in range(12)]
        codes += [ModelCode("linear", 1, fixed_o, 1, a, psi=psi) for a in range(8) if a != fixed_a]
        codes.append(ssm_code(psi))
    return codes


def test_criterion_1_gradient_suite(request):
    start = time.process_time()
    worst, failures = 0.0, []
    codes = gradient_suite_codes()
    for code in codes:
        rep = gradcheck(code, n=6, k=4, d=4, d_model=6)
        worst = max(worst, rep.max_error)
        if not rep.passed:
            failures.append("%s/%s" % (code, code.psi))
    elapsed = time.process_time() - start
    ok = not failures and worst <= GRADCHECK_TOL and elapsed < 60.0
    report(request, 1, "gradient suite", ok, "%d configs, worst rel err %.2e (tol 1e-4), %.1f s CPU%s" % (
        len(codes), worst, elapsed, "; failing " + ", ".join(failures) if failures else ""))


def test_criterion_2_oracle_equivalence(request):
    rng = np.random.default_rng(2024)
    start = time.process_time()
    worst, seen = 0.0, set()
    for j in range(200):
        psi = ("odot", "times")[j % 2]
        o_code = (j // 2) % 13
        if o_code == 12:
            code = ssm_code(psi)
        else:
            code = ModelCode("linear", int(rng.integers(2)), o_code, int(rng.integers(2)), int(rng.integers(8)),
                             psi=psi, tau=float(rng.choice(TAU_GRID)))
        n, k, d = int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(1, 4))
        eos = compute_eos(init_layer_params(code, 4, k, d, rng), code, rng.standard_normal((n, 4)))
        inputs = ScanInputs(eos.e, eos.o, eos.s, eos.i, psi)
        worst = max(worst, float(np.max(np.abs(forward_scan(inputs)[0] - oracle_forward(inputs)))))
        seen.add((o_code, psi))
    elapsed = time.process_time() - start
    ok = worst <= 1e-10 and elapsed < 10.0 and len(seen) == 26
    report(request, 2, "oracle equivalence", ok,
           "200 instances over %d (o_code, psi) cells, max abs err %.2e (tol 1e-10), %.2f s" % (len(seen), worst, elapsed))


def test_criterion_3_zoo_fidelity(request):
    rng = np.random.default_rng(7)
    checks = []
    for name in zoo.METHOD_NAMES:
        checks += zoo.verify(name, rng, n=16)
    for n in (8, 32):
        for name in ("Cosformer", "LRPE"):
            checks.append(zoo.verify_complex_equivalence(name, zoo.sample_raw(name, rng, n=n)))
    checks.append(zoo.verify_fwp(zoo.sample_raw("FWP", rng, n=8, k=4, d=3)))
    by_kind = {}
    for c in checks:
        by_kind[c.check] = max(by_kind.get(c.check, 0.0), c.max_err)
    failed = [c for c in checks if not c.passed]
    methods = {c.method for c in checks if c.check == "engine vs reference"}
    ok = not failed and len(methods) == 17
    report(request, 3, "zoo fidelity + reductions", ok, "; ".join(
        "%s %.1e" % (kind, err) for kind, err in sorted(by_kind.items())) + (
        "; failing " + ", ".join("%s/%s" % (c.method, c.check) for c in failed) if failed else ""))


def test_criterion_4_mqar_ordering(request, desk_data):
    (good, good_cpu) = desk_run(desk_data, MQAR_CODE, MQAR_TAU)
    (ctrl, ctrl_cpu) = desk_run(desk_data, MQAR_CONTROL, MQAR_TAU)
    ok = (good.best_eval_acc >= 0.95 and ctrl.best_eval_acc <= 0.70 and good_cpu <= DESK_CPU_LIMIT
          and ctrl_cpu <= DESK_CPU_LIMIT)
    report(request, 4, "MQAR ordering", ok, "%s tau=%g acc %.4f (>= 0.95, %.0f s CPU); %s acc %.4f (<= 0.70, %.0f s CPU)" % (
        MQAR_CODE, MQAR_TAU, good.best_eval_acc, good_cpu, MQAR_CONTROL, ctrl.best_eval_acc, ctrl_cpu))


def test_criterion_5_tau(request, desk_data):
    values = [float(gate(np.zeros(1), tau)[0]) for tau in TAU_GRID]
    increasing = all(b > a for a, b in zip(values, values[1:]))
    limit = float(gate(np.zeros(1), 1e9)[0])
    gate_ok = increasing and abs(limit - 1.0) < 1e-8
    accs = {tau: desk_run(desk_data, MQAR_CODE, tau)[0].final_eval_acc for tau in TAU_GRID}
    base = accs[1]
    sweep_ok = all(acc >= base - TAU_NOISE for acc in accs.values())
    report(request, 5, "tau monotonics", gate_ok and sweep_ok, "gate(0,tau) %s, gate(0,1e9)=%.10f; final acc %s" % (
        "increasing" if increasing else "NOT increasing", limit,
        " ".join("tau=%g:%.4f" % (tau, acc) for tau, acc in accs.items())))


def test_criterion_6_determinism(request, desk_data):
    small = mqar.MqarDataset(desk_data.tokens[:1400], desk_data.targets[:1400], desk_data.vocab_size)
    cfg = RunConfig(code=MQAR_CODE, d_model=32, expand_k=16, steps=60, batch_size=16, eval_interval=20,
                    eval_examples=200, lr=5e-3, seed=11)

    def csv_without_wall(result):
        lines = []
        for row in result.rows:
            fields = row.csv().split(",")
            lines.append(",".join(fields[:6] + fields[7:]))
        return "\n".join(lines).encode()

    first = csv_without_wall(train(cfg, small))
    second = csv_without_wall(train(cfg, small))
    ok = first == second
    report(request, 6, "determinism", ok, "%d metric rows, %s" % (
        first.count(b"\n") + 1, "byte-identical" if ok else "differ"))


def sweep_grid_codes():
    for psi in ("odot", "times"):
        yield ssm_code(psi)
        for code in all_linear_codes():
            yield ModelCode(code.param_family, code.e_dep, code.o_code, code.s_dep, code.a_code, psi=psi)


def test_criterion_7_init_loss(request):
    rng = np.random.default_rng(5)
    tokens = rng.integers(0, 128, (4, 64))
    targets = rng.integers(0, 128, (4, 64))
    ln_v = np.log(128)
    worst, count, bad = 0.0, 0, []
    for code in sweep_grid_codes():
        cfg = ModelConfig(d_model=64, expand_k=64, n_layers=2, vocab_size=128, code=code)
        loss = loss_only(cfg, init_params(cfg, seed=0), tokens, targets)[0]
        rel = abs(loss - ln_v) / ln_v if np.isfinite(loss) else np.inf
        worst = max(worst, rel)
        count += 1
        if not rel <= 0.05:
            bad.append("%s/%s" % (code, code.psi))
    report(request, 7, "initial loss", not bad, "%d codes, worst |loss - ln V| / ln V = %.4f (tol 0.05)%s" % (
        count, worst, "; failing " + ", ".join(bad[:5]) if bad else ""))
