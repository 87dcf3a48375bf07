"""Multi-query associative recall data.

Token layout for one sample (pad = 0)::

    k1 v1 k2 v2 ... kN vN  q1 q2 ... qQ  0 0 ... 0

Keys come from ``[1, vocab/2)``, values from ``[vocab/2, vocab)``. Queries are a
random permutation of (a prefix of) the bound keys; the target at a query
position is the value bound to that key, every other target is ``IGNORE``.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

PAD = 0
IGNORE = -1
MAGIC = b"MQAR"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class MqarConfig:
    seq_len: int = 64
    vocab_size: int = 128
    num_kv_pairs: int = 8
    num_examples: int = 20000
    seed: int = 0
    num_queries: int = None

    @property
    def queries(self):
        return self.num_kv_pairs if self.num_queries is None else self.num_queries

    @property
    def key_range(self):
        return 1, self.vocab_size // 2

    @property
    def value_range(self):
        return self.vocab_size // 2, self.vocab_size

    def validate(self):
        if self.num_kv_pairs < 1:
            raise ValueError("num_kv_pairs must be >= 1")
        if not 1 <= self.queries <= self.num_kv_pairs:
            raise ValueError("num_queries must be in [1, num_kv_pairs]")
        if self.seq_len < 2 * self.num_kv_pairs + self.queries:
            raise ValueError(
                "seq_len=%d cannot hold %d pairs and %d queries" % (self.seq_len, self.num_kv_pairs, self.queries)
            )
        if self.vocab_size > 65536:
            raise ValueError("vocab_size must fit in u16 tokens")
        lo, hi = self.key_range
        vlo, vhi = self.value_range
        if hi - lo < self.num_kv_pairs or vhi - vlo < self.num_kv_pairs:
            raise ValueError(
                "vocab_size=%d leaves %d keys / %d values, fewer than %d distinct pairs"
                % (self.vocab_size, hi - lo, vhi - vlo, self.num_kv_pairs)
            )
        if self.num_examples < 1:
            raise ValueError("num_examples must be >= 1")


@dataclass
class MqarDataset:
    tokens: np.ndarray   # (num_examples, seq_len) int64
    targets: np.ndarray  # (num_examples, seq_len) int64, IGNORE off-query
    vocab_size: int

    @property
    def query_mask(self):
        return self.targets != IGNORE

    def __len__(self):
        return self.tokens.shape[0]

    @property
    def seq_len(self):
        return self.tokens.shape[1]


def _sample(cfg, rng):
    lo, hi = cfg.key_range
    vlo, vhi = cfg.value_range
    keys = lo + rng.permutation(hi - lo)[: cfg.num_kv_pairs]
    values = vlo + rng.permutation(vhi - vlo)[: cfg.num_kv_pairs]
    tokens = np.full(cfg.seq_len, PAD, dtype=np.int64)
    targets = np.full(cfg.seq_len, IGNORE, dtype=np.int64)
    tokens[0 : 2 * cfg.num_kv_pairs : 2] = keys
    tokens[1 : 2 * cfg.num_kv_pairs : 2] = values
    order = rng.permutation(cfg.num_kv_pairs)[: cfg.queries]
    start = 2 * cfg.num_kv_pairs
    tokens[start : start + cfg.queries] = keys[order]
    targets[start : start + cfg.queries] = values[order]
    return tokens, targets


def generate(cfg):
    """Deterministic dataset for ``cfg``; sample j uses its own stream spawned from the seed."""
    cfg.validate()
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.num_examples)
    tokens = np.empty((cfg.num_examples, cfg.seq_len), dtype=np.int64)
    targets = np.empty_like(tokens)
    for j, ss in enumerate(seeds):
        tokens[j], targets[j] = _sample(cfg, np.random.default_rng(ss))
    return MqarDataset(tokens, targets, cfg.vocab_size)


def majority_baseline(ds):
    """Accuracy of always answering the most frequent target value."""
    answers = ds.targets[ds.query_mask]
    counts = np.bincount(answers)
    return counts.max() / answers.size


def save(ds, path):
    n, seq_len = ds.tokens.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, seq_len, ds.vocab_size, n))
        fh.write(ds.tokens.astype("<u2").tobytes())
        fh.write(ds.targets.astype("<i4").tobytes())


def load(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("%s: truncated header" % (path,))
    magic, version, seq_len, vocab, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError("%s: bad magic %r" % (path, magic))
    if version != VERSION:
        raise ValueError("%s: unsupported version %d" % (path, version))
    off = _HEADER.size
    ntok = n * seq_len
    expected = off + 2 * ntok + 4 * ntok
    if len(raw) != expected:
        raise ValueError("%s: expected %d bytes, found %d" % (path, expected, len(raw)))
    tokens = np.frombuffer(raw, "<u2", ntok, off).reshape(n, seq_len).astype(np.int64)
    targets = np.frombuffer(raw, "<i4", ntok, off + 2 * ntok).reshape(n, seq_len).astype(np.int64)
    return MqarDataset(tokens, targets, vocab)


def save_jsonl(ds, path):
    with open(path, "w") as fh:
        for tok, tgt in zip(ds.tokens, ds.targets):
            fh.write(json.dumps({"tokens": tok.tolist(), "targets": tgt.tolist()}) + "\n")


def load_jsonl(path, vocab_size):
    tokens, targets = [], []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                tokens.append(row["tokens"])
                targets.append(row["targets"])
    return MqarDataset(np.array(tokens, dtype=np.int64), np.array(targets, dtype=np.int64), vocab_size)
