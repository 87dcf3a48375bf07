"""Training loop, Adam, metrics CSV and checkpoints."""

import configparser
import dataclasses
import hashlib
import json
import logging
import math
import re
import struct
import time
from dataclasses import dataclass

import numpy as np

from lcsm import mqar
from lcsm.codes import parse_code
from lcsm.model import ModelConfig, init_params, loss_and_grad, loss_only

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "split", "loss", "ppl", "acc", "lr", "wall_ms", "status")
DIVERGENCE_LOSS = 20.0
DIVERGENCE_PATIENCE = 100
LR_GRID = (1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2)
TAU_GRID = (1, 2, 4, 8, 16, 32, 64)


@dataclass
class RunConfig:
    code: str = "1-1-1-2"
    psi: str = "odot"
    tau: float = 16.0
    d_model: int = 64
    expand_k: int = 64
    layers: int = 2
    d_value: int = 0
    lr: float = 1e-3
    steps: int = 1000
    batch_size: int = 32
    schedule: str = "warmup_constant"
    warmup_frac: float = 0.05
    warmup_steps: int = 0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.0
    eval_interval: int = 100
    eval_examples: int = 1000
    seed: int = 0
    data: str = ""
    seq_len: int = 64
    kv: int = 8

    def model_config(self, vocab_size):
        code = parse_code(self.code, psi=self.psi, tau=self.tau)
        return ModelConfig(d_model=self.d_model, expand_k=self.expand_k, n_layers=self.layers,
                           vocab_size=vocab_size, code=code, d_value=self.d_value or None)

    def validate(self):
        parse_code(self.code, psi=self.psi, tau=self.tau)
        if self.steps < 1 or self.batch_size < 1 or self.eval_interval < 1:
            raise ValueError("steps, batch_size and eval_interval must be positive")
        if self.schedule not in ("warmup_constant", "inverse_sqrt"):
            raise ValueError("schedule must be warmup_constant or inverse_sqrt, got %r" % (self.schedule,))
        if not self.lr > 0:
            raise ValueError("lr must be positive")

    def to_text(self):
        """Canonical flat ``key = value`` text; hashed into the run manifest."""
        lines = ["[run]"]
        for f in dataclasses.fields(self):
            lines.append("%s = %s" % (f.name, getattr(self, f.name)))
        return "\n".join(lines) + "\n"

    def content_hash(self):
        body = self.to_text().encode()
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def _coerce(field_type, text):
    if field_type in (int, "int"):
        return int(float(text))
    if field_type in (float, "float"):
        return float(text)
    return text


def load_run_config(path, **overrides):
    parser = configparser.ConfigParser()
    with open(path) as fh:
        body = fh.read()
    if not re.search(r"^\s*\[", body, re.MULTILINE):
        body = "[run]\n" + body
    parser.read_string(body)
    section = parser["run"]
    fields = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    values = {}
    for key, text in section.items():
        if key not in fields:
            raise ValueError("%s: unknown config key %r" % (path, key))
        values[key] = _coerce(fields[key], text)
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


class Adam:
    """Adam with bias correction and decoupled weight decay."""

    def __init__(self, params, lr, betas=(0.9, 0.98), eps=1e-8, weight_decay=0.0):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for name, p in params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p -= lr * self.weight_decay * p
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def learning_rate(cfg, step):
    """Learning rate for 1-based ``step``."""
    if cfg.schedule == "inverse_sqrt":
        warm = max(cfg.warmup_steps, 1)
        if step < warm:
            return cfg.lr * step / warm
        return cfg.lr * math.sqrt(warm / step)
    warm = cfg.warmup_steps or int(round(cfg.warmup_frac * cfg.steps))
    if warm and step <= warm:
        return cfg.lr * step / warm
    return cfg.lr


def trim_unsupervised_tail(tokens, targets):
    """Drop trailing positions with no target in any row.

    The model is causal, so those positions cannot influence the loss or any
    gradient; cutting them is exact and saves most of the scan on recall data.
    """
    supervised = np.flatnonzero((targets >= 0).any(axis=0))
    end = int(supervised[-1]) + 1 if supervised.size else targets.shape[1]
    return tokens[:, :end], targets[:, :end]


def evaluate(model_cfg, params, ds, batch_size=250):
    total_loss, total_acc, total = 0.0, 0.0, 0
    for start in range(0, len(ds), batch_size):
        tok, tgt = trim_unsupervised_tail(ds.tokens[start:start + batch_size], ds.targets[start:start + batch_size])
        count = int((tgt >= 0).sum())
        loss, acc = loss_only(model_cfg, params, tok, tgt)
        total_loss += loss * count
        total_acc += acc * count
        total += count
    return total_loss / total, total_acc / total


def split_dataset(ds, eval_examples):
    if eval_examples >= len(ds):
        raise ValueError("dataset has %d examples, cannot hold out %d for eval" % (len(ds), eval_examples))
    cut = len(ds) - eval_examples
    train = mqar.MqarDataset(ds.tokens[:cut], ds.targets[:cut], ds.vocab_size)
    held = mqar.MqarDataset(ds.tokens[cut:], ds.targets[cut:], ds.vocab_size)
    return train, held


@dataclass
class MetricsRow:
    step: int
    split: str
    loss: float
    acc: float
    lr: float
    wall_ms: int
    status: str = "ok"

    @property
    def ppl(self):
        return math.exp(min(self.loss, 700.0)) if math.isfinite(self.loss) else float("nan")

    def csv(self):
        return "%d,%s,%.8f,%.8g,%.6f,%.8g,%d,%s" % (
            self.step, self.split, self.loss, self.ppl, self.acc, self.lr, self.wall_ms, self.status)


@dataclass
class TrainResult:
    rows: list
    params: dict
    best_params: dict
    best_eval_acc: float
    best_eval_loss: float
    final_eval_acc: float
    status: str
    init_loss: float

    @property
    def failed(self):
        return self.status != "ok"


def train(cfg, ds, on_row=None):
    """Train on ``ds`` (the last ``cfg.eval_examples`` rows are held out).

    Deterministic given ``cfg.seed``. Divergence (loss above 20 for 100
    consecutive steps) and non-finite losses end the run with a failed status
    row instead of raising.
    """
    cfg.validate()
    train_ds, eval_ds = split_dataset(ds, cfg.eval_examples)
    model_cfg = cfg.model_config(ds.vocab_size)
    params = init_params(model_cfg, cfg.seed)
    opt = Adam(params, cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps, cfg.weight_decay)
    order_rng = np.random.default_rng(cfg.seed + 1)
    rows = []
    t0 = time.perf_counter()

    def emit(row):
        rows.append(row)
        if on_row is not None:
            on_row(row)

    def wall():
        return int((time.perf_counter() - t0) * 1000)

    init_loss, init_acc = evaluate(model_cfg, params, eval_ds)
    emit(MetricsRow(0, "eval", init_loss, init_acc, 0.0, wall()))
    best = (init_acc, -init_loss)
    best_params = {k: v.copy() for k, v in params.items()}
    final_acc = init_acc
    status = "ok"
    perm, cursor = order_rng.permutation(len(train_ds)), 0
    run_loss = run_acc = 0.0
    run_n = 0
    over = 0
    for step in range(1, cfg.steps + 1):
        if cursor + cfg.batch_size > len(perm):
            perm, cursor = order_rng.permutation(len(train_ds)), 0
        idx = perm[cursor:cursor + cfg.batch_size]
        cursor += cfg.batch_size
        lr = learning_rate(cfg, step)
        try:
            tok, tgt = trim_unsupervised_tail(train_ds.tokens[idx], train_ds.targets[idx])
            loss, acc, grads = loss_and_grad(model_cfg, params, tok, tgt)
        except FloatingPointError as exc:
            status = "failed"
            log.warning("step %d: %s", step, exc)
            emit(MetricsRow(step, "train", float("nan"), 0.0, lr, wall(), "failed"))
            break
        over = over + 1 if loss > DIVERGENCE_LOSS else 0
        if over >= DIVERGENCE_PATIENCE:
            status = "failed"
            log.warning("step %d: loss above %g for %d steps", step, DIVERGENCE_LOSS, DIVERGENCE_PATIENCE)
            emit(MetricsRow(step, "train", loss, acc, lr, wall(), "failed"))
            break
        opt.step(params, grads, lr)
        run_loss += loss
        run_acc += acc
        run_n += 1
        if step % cfg.eval_interval == 0 or step == cfg.steps:
            emit(MetricsRow(step, "train", run_loss / run_n, run_acc / run_n, lr, wall()))
            run_loss = run_acc = 0.0
            run_n = 0
            try:
                ev_loss, ev_acc = evaluate(model_cfg, params, eval_ds)
            except FloatingPointError as exc:
                status = "failed"
                log.warning("eval at step %d: %s", step, exc)
                emit(MetricsRow(step, "eval", float("nan"), 0.0, lr, wall(), "failed"))
                break
            emit(MetricsRow(step, "eval", ev_loss, ev_acc, lr, wall()))
            final_acc = ev_acc
            if (ev_acc, -ev_loss) > best:
                best = (ev_acc, -ev_loss)
                best_params = {k: v.copy() for k, v in params.items()}
    return TrainResult(rows, params, best_params, best[0], -best[1], final_acc, status, init_loss)


def write_metrics(rows, path):
    with open(path, "w") as fh:
        fh.write(",".join(METRIC_COLUMNS) + "\n")
        for row in rows:
            fh.write(row.csv() + "\n")


# ---- checkpoint: little-endian, versioned, tensors in declaration order ----

CKPT_MAGIC = b"LCSMCKPT"
CKPT_VERSION = 1


def save_checkpoint(path, params, meta, manifest_hash):
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(manifest_hash.encode("ascii").ljust(40, b"\0")[:40])
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(params)))
        for name, value in params.items():
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", value.ndim))
            fh.write(struct.pack("<%dI" % value.ndim, *value.shape))
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return ``(params, meta, manifest_hash)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError("%s: not an LCSM checkpoint" % (path,))
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != CKPT_VERSION:
        raise ValueError("%s: unsupported checkpoint version %d" % (path, version))
    manifest_hash = raw[12:52].rstrip(b"\0").decode("ascii")
    (meta_len,) = struct.unpack_from("<I", raw, 52)
    off = 56
    meta = json.loads(raw[off:off + meta_len])
    off += meta_len
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + name_len].decode()
        off += name_len
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from("<%dI" % ndim, raw, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(raw, "<f8", size, off).reshape(shape).copy()
        off += 8 * size
    return params, meta, manifest_hash
