"""Command line front end: ``lcsm {mqar,train,sweep,gradcheck,equiv}``."""

import argparse
import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor


from lcsm import mqar, zoo
from lcsm.codes import CodeError, parse_code
from lcsm.model import gradcheck
from lcsm.train import (RunConfig, load_run_config, save_checkpoint, train, write_metrics)

log = logging.getLogger("lcsm")

SUMMARY_COLUMNS = ("code", "psi", "tau", "lr", "best_eval_acc", "best_eval_loss", "final_eval_acc", "init_loss",
                   "status", "manifest_hash")
DESK_EXAMPLES = 20000


def git_hash(text):
    body = text.encode()
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def write_manifest(out_dir, command, config_path, seed, code, content_hash):
    manifest = {"command": command, "config_path": config_path, "seed": seed, "code": code,
                "out_dir": out_dir, "hash": content_hash}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _codes(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def max_workers():
    try:
        return max(1, int(os.environ.get("LCSM_THREADS", "1")))
    except ValueError:
        return 1


def desk_dataset(run):
    """The run's dataset file, or a desk-scale MQAR set generated from the run config."""
    if run.data:
        if not os.path.exists(run.data):
            raise FileNotFoundError("dataset %s does not exist" % (run.data,))
        return mqar.load(run.data)
    cfg = mqar.MqarConfig(seq_len=run.seq_len, num_kv_pairs=run.kv, num_examples=DESK_EXAMPLES + run.eval_examples,
                          seed=run.seed)
    return mqar.generate(cfg)


def run_config_from_args(args):
    overrides = {"code": args.code, "psi": args.psi, "tau": args.tau, "d_model": args.d_model,
                 "expand_k": args.expand_k, "layers": args.layers, "lr": args.lr, "steps": args.steps,
                 "seed": args.seed, "batch_size": args.batch_size, "eval_interval": args.eval_interval,
                 "eval_examples": args.eval_examples,
                 "data": args.data, "seq_len": args.seq_len, "kv": args.kv}
    if args.config:
        return load_run_config(args.config, **overrides)
    cfg = RunConfig(**{k: v for k, v in overrides.items() if v is not None})
    cfg.validate()
    return cfg


# ---- commands ----

def cmd_mqar(args):
    cfg = mqar.MqarConfig(seq_len=args.seq_len, vocab_size=args.vocab, num_kv_pairs=args.kv,
                          num_examples=args.num_examples, seed=args.seed)
    ds = mqar.generate(cfg)
    if args.out.endswith(".jsonl"):
        mqar.save_jsonl(ds, args.out)
    else:
        mqar.save(ds, args.out)
    print("wrote %d examples (seq %d, vocab %d) to %s" % (len(ds), ds.seq_len, ds.vocab_size, args.out))
    return 0


def run_one(cfg, out_dir, ds, command="train", config_path=None):
    """Train ``cfg`` into ``out_dir``; returns the summary dict for that run."""
    os.makedirs(out_dir, exist_ok=True)
    content_hash = cfg.content_hash()
    write_manifest(out_dir, command, config_path, cfg.seed, cfg.code, content_hash)
    with open(os.path.join(out_dir, "run.cfg"), "w") as fh:
        fh.write(cfg.to_text())
    result = train(cfg, ds)
    write_metrics(result.rows, os.path.join(out_dir, "metrics.csv"))
    meta = {"run": dataclasses.asdict(cfg), "best_eval_acc": result.best_eval_acc, "status": result.status}
    save_checkpoint(os.path.join(out_dir, "best.ckpt"), result.best_params, meta, content_hash)
    return {"code": cfg.code, "psi": cfg.psi, "tau": cfg.tau, "lr": cfg.lr, "best_eval_acc": result.best_eval_acc,
            "best_eval_loss": result.best_eval_loss, "final_eval_acc": result.final_eval_acc,
            "init_loss": result.init_loss, "status": result.status, "manifest_hash": content_hash}


def cmd_train(args):
    cfg = run_config_from_args(args)
    ds = desk_dataset(cfg)
    summary = run_one(cfg, args.out, ds, "train", args.config)
    print("%s: best eval acc %.4f, status %s -> %s" % (cfg.code, summary["best_eval_acc"], summary["status"], args.out))
    return 0 if summary["status"] == "ok" else 1


def _sweep_cell(job):
    cfg, out_dir, ds = job
    try:
        return run_one(cfg, out_dir, ds, "sweep")
    except Exception as exc:  # a crashed cell is recorded, the sweep goes on
        log.warning("cell %s failed: %s", out_dir, exc)
        return {"code": cfg.code, "psi": cfg.psi, "tau": cfg.tau, "lr": cfg.lr, "best_eval_acc": float("nan"),
                "best_eval_loss": float("nan"), "final_eval_acc": float("nan"), "init_loss": float("nan"),
                "status": "failed", "manifest_hash": cfg.content_hash()}


def cell_name(code, lr, tau):
    return "code=%s_lr=%g_tau=%g" % (code, lr, tau)


def cmd_sweep(args):
    base = run_config_from_args(args)
    codes = _codes(args.grid_codes) if args.grid_codes else [base.code]
    lrs = _floats(args.grid_lr) if args.grid_lr else [base.lr]
    taus = _floats(args.grid_tau) if args.grid_tau else [base.tau]
    for code in codes:
        parse_code(code, psi=base.psi)
    ds = desk_dataset(base)
    os.makedirs(args.out, exist_ok=True)
    grid = list(itertools.product(codes, lrs, taus))
    jobs = [(dataclasses.replace(base, code=c, lr=lr, tau=tau), os.path.join(args.out, cell_name(c, lr, tau)), ds)
            for c, lr, tau in grid]
    grid_text = "".join(cfg.to_text() for cfg, _, _ in jobs)
    write_manifest(args.out, "sweep", args.config, base.seed, ",".join(codes), git_hash(grid_text))
    workers = min(max_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_sweep_cell, jobs))
    else:
        rows = [_sweep_cell(job) for job in jobs]
    summary_path = os.path.join(args.out, "summary.csv")
    with open(summary_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, SUMMARY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("%.6f" % v if isinstance(v, float) and k not in ("tau", "lr") else v)
                             for k, v in row.items()})
    if args.svg:
        render_summary_svg(rows, args.svg)
    failed = sum(row["status"] != "ok" for row in rows)
    print("sweep: %d cells, %d failed -> %s" % (len(rows), failed, summary_path))
    return 0


def render_summary_svg(rows, path):
    """Best accuracy against tau, one line per (code, lr)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for (code, lr), cells in itertools.groupby(sorted(rows, key=lambda r: (r["code"], r["lr"], r["tau"])),
                                               key=lambda r: (r["code"], r["lr"])):
        cells = list(cells)
        ax.plot([c["tau"] for c in cells], [c["best_eval_acc"] for c in cells], marker="o",
                label="%s lr=%g" % (code, lr))
    ax.set_xscale("log", base=2)
    ax.set_xlabel("tau")
    ax.set_ylabel("best eval accuracy")
    ax.set_ylim(0, 1)
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def cmd_gradcheck(args):
    code = parse_code(args.code or "1-1-1-2", psi=args.psi or "odot", tau=args.tau or 16.0)
    report = gradcheck(code, seed=args.seed or 0)
    for line in report.lines():
        print(line)
    print("%s %s tau=%g max rel err %.3e %s" % (code, code.psi, code.tau, report.max_error,
                                                 "PASS" if report.passed else "FAIL"))
    return 0 if report.passed else 1


def cmd_equiv(args):
    results = zoo.verify_all(seed=args.seed or 0)
    rows = []
    for name, checks in results.items():
        worst = max(checks, key=lambda c: c.max_err / c.tol)
        ok = all(c.passed for c in checks)
        rows.append((name, len(checks), "%.3e" % worst.max_err, "%g" % worst.tol, "PASS" if ok else "FAIL"))
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(("method", "checks", "max_err", "tol", "status"))
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
    return 0 if all(r[-1] == "PASS" for r in rows) else 1


# ---- argument parsing ----

def _run_flags(p):
    p.add_argument("--config", help="flat key = value run config file")
    p.add_argument("--code", help="model code, e.g. 1-1-1-2 or 0 for SSM")
    p.add_argument("--psi", choices=("odot", "times"))
    p.add_argument("--tau", type=float)
    p.add_argument("--d-model", type=int)
    p.add_argument("--expand-k", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--eval-interval", type=int)
    p.add_argument("--eval-examples", type=int, help="held-out examples taken from the end of the dataset")
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="MQAR dataset file; generated at desk scale when omitted")
    p.add_argument("--seq-len", type=int)
    p.add_argument("--kv", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="lcsm", description="Linear complexity sequence model laboratory")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mqar", help="generate an MQAR dataset file")
    p.add_argument("--seq-len", type=int, default=64)
    p.add_argument("--kv", type=int, default=8)
    p.add_argument("--vocab", type=int, default=128)
    p.add_argument("--num-examples", type=int, default=DESK_EXAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output path (.jsonl for the debug format)")
    p.set_defaults(func=cmd_mqar)

    p = sub.add_parser("train", help="train one configuration")
    _run_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train the cross product of codes, learning rates and taus")
    _run_flags(p)
    p.add_argument("--grid-codes", help="comma separated code strings")
    p.add_argument("--grid-lr", help="comma separated learning rates")
    p.add_argument("--grid-tau", help="comma separated tau values")
    p.add_argument("--svg", help="also render the summary as an SVG chart")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--code")
    p.add_argument("--psi", choices=("odot", "times"))
    p.add_argument("--tau", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("equiv", help="verify every method of the zoo against its reference recurrence")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    p.set_defaults(func=cmd_equiv)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CodeError, ValueError, FileNotFoundError) as exc:
        parser.error(str(exc))


if __name__ == "__main__":
    sys.exit(main())
