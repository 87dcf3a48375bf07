import math

import numpy as np
import pytest

from lcsm import mqar, train as tr
from lcsm.model import init_params, loss_and_grad
from lcsm.train import Adam, RunConfig


def tiny_data(n=120, seed=0):
    return mqar.generate(mqar.MqarConfig(seq_len=12, vocab_size=16, num_kv_pairs=3, num_examples=n, seed=seed))


def tiny_run(**kw):
    base = dict(d_model=8, expand_k=4, layers=1, steps=6, batch_size=4, eval_interval=3, eval_examples=20)
    base.update(kw)
    return RunConfig(**base)


def test_adam_zero_grad_no_decay_is_fixed(rng):
    params = {"a": rng.standard_normal((3, 2)), "b": rng.standard_normal(4)}
    before = {k: v.copy() for k, v in params.items()}
    opt = Adam(params, lr=1e-2)
    for _ in range(5):
        opt.step(params, {k: np.zeros_like(v) for k, v in params.items()})
    assert all(np.array_equal(params[k], before[k]) for k in params)


def test_adam_first_step_moves_by_lr(rng):
    params = {"a": rng.standard_normal(5)}
    start = params["a"].copy()
    grads = {"a": rng.standard_normal(5)}
    Adam(params, lr=1e-3).step(params, grads)
    # bias-corrected first step is lr * g / (|g| + eps)
    assert np.allclose(start - params["a"], 1e-3 * np.sign(grads["a"]), rtol=1e-6)


def test_weight_decay_is_decoupled():
    params = {"a": np.array([2.0])}
    Adam(params, lr=0.1, weight_decay=0.5).step(params, {"a": np.zeros(1)})
    assert params["a"][0] == pytest.approx(2.0 * (1 - 0.05))


def test_learning_rate_schedules():
    cfg = RunConfig(lr=1.0, steps=100)
    assert tr.learning_rate(cfg, 1) == pytest.approx(0.2)
    assert tr.learning_rate(cfg, 5) == 1.0 and tr.learning_rate(cfg, 80) == 1.0
    inv = RunConfig(lr=1.0, schedule="inverse_sqrt", warmup_steps=4)
    assert tr.learning_rate(inv, 2) == 0.5
    assert tr.learning_rate(inv, 16) == pytest.approx(0.5)


def test_trim_is_exact(rng):
    ds = tiny_data(8)
    cfg = tiny_run().model_config(ds.vocab_size)
    params = init_params(cfg, seed=0)
    full = loss_and_grad(cfg, params, ds.tokens, ds.targets)
    tok, tgt = tr.trim_unsupervised_tail(ds.tokens, ds.targets)
    assert tok.shape[1] == 9
    cut = loss_and_grad(cfg, params, tok, tgt)
    assert full[0] == pytest.approx(cut[0], rel=1e-12)
    assert all(np.allclose(full[2][k], cut[2][k], rtol=1e-10, atol=1e-14) for k in params)


def test_metrics_row_format():
    row = tr.MetricsRow(3, "eval", 1.5, 0.25, 1e-3, 12)
    fields = row.csv().split(",")
    assert len(fields) == len(tr.METRIC_COLUMNS)
    assert float(fields[3]) == pytest.approx(math.exp(1.5))
    assert fields[-1] == "ok"


def test_train_is_deterministic_and_logs(tmp_path):
    ds = tiny_data()
    a = tr.train(tiny_run(seed=3), ds)
    b = tr.train(tiny_run(seed=3), ds)
    strip = lambda rows: [r.csv().rsplit(",", 2)[0] for r in rows]
    assert strip(a.rows) == strip(b.rows)
    assert [(r.step, r.split) for r in a.rows] == [(0, "eval"), (3, "train"), (3, "eval"), (6, "train"), (6, "eval")]
    assert a.status == "ok" and 0.0 <= a.best_eval_acc <= 1.0
    path = tmp_path / "m.csv"
    tr.write_metrics(a.rows, str(path))
    assert path.read_text().splitlines()[0] == "step,split,loss,ppl,acc,lr,wall_ms,status"


def test_nan_loss_is_a_failed_row(monkeypatch):
    calls = {"n": 0}
    real = tr.loss_and_grad

    def flaky(*args):
        calls["n"] += 1
        if calls["n"] == 2:
            raise FloatingPointError("non-finite loss")
        return real(*args)

    monkeypatch.setattr(tr, "loss_and_grad", flaky)
    res = tr.train(tiny_run(), tiny_data())
    assert res.failed
    assert res.rows[-1].status == "failed" and res.rows[-1].step == 2


def test_divergence_is_a_failed_row(monkeypatch):
    real = tr.loss_and_grad

    def exploding(*args):
        _, acc, grads = real(*args)
        return 25.0, acc, grads

    monkeypatch.setattr(tr, "loss_and_grad", exploding)
    res = tr.train(tiny_run(steps=300, eval_interval=1000), tiny_data())
    assert res.status == "failed"
    assert res.rows[-1].step == tr.DIVERGENCE_PATIENCE


def test_checkpoint_round_trip(tmp_path):
    cfg = tiny_run().model_config(16)
    params = init_params(cfg, seed=2)
    path = tmp_path / "c.ckpt"
    tr.save_checkpoint(str(path), params, {"note": "x"}, "ab" * 20)
    back, meta, h = tr.load_checkpoint(str(path))
    assert list(back) == list(params)
    assert all(np.array_equal(back[k], params[k]) for k in params)
    assert meta == {"note": "x"} and h == "ab" * 20
    assert path.read_bytes()[:8] == b"LCSMCKPT"
    path.write_bytes(b"garbage!" + path.read_bytes()[8:])
    with pytest.raises(ValueError):
        tr.load_checkpoint(str(path))


def test_config_file(tmp_path):
    path = tmp_path / "r.cfg"
    path.write_text("code = 1-3-1-1\npsi = times\ntau = 4\nlr = 0.005\nsteps = 10\n")
    cfg = tr.load_run_config(str(path), seed=9)
    assert (cfg.code, cfg.psi, cfg.tau, cfg.lr, cfg.steps, cfg.seed) == ("1-3-1-1", "times", 4.0, 0.005, 10, 9)
    again = tr.load_run_config(str(path), seed=9)
    assert cfg.content_hash() == again.content_hash() and len(cfg.content_hash()) == 40
    path.write_text("bogus = 1\n")
    with pytest.raises(ValueError, match="bogus"):
        tr.load_run_config(str(path))
    path.write_text("code = 1-12-0-0\n")
    with pytest.raises(ValueError):
        tr.load_run_config(str(path))


def test_wikitext_preset_parses():
    import pathlib
    preset = pathlib.Path(__file__).resolve().parents[1] / "configs" / "wikitext103.cfg"
    cfg = tr.load_run_config(str(preset))
    assert (cfg.batch_size, cfg.steps, cfg.warmup_steps, cfg.lr) == (128, 50000, 4000, 5e-4)
    assert cfg.schedule == "inverse_sqrt" and cfg.weight_decay == 0.1
    assert (cfg.beta1, cfg.beta2, cfg.eps) == (0.9, 0.98, 1e-8)
