"""Command-line entry point: ``python -m crlkit <command> ...``.

Each (method, seed) run gets its own directory holding the resolved
config, the episode trace, the evaluation matrix and one checkpoint per
task. A file named ``INCOMPLETE`` sits in the directory until the run has
finished, so partial outputs are easy to tell apart.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as C
from .errors import CRLError, ConfigurationError
from .metrics import aggregate, format_table
from .rng import RNGStreams
from .runner import RunRecord, evaluate, restore_learner, run_sequence, run_single_task_baseline
from .storage import (load_checkpoint, read_eval_csv, read_rstar_csv, read_summary_csv, save_checkpoint,
                      write_eval_csv, write_rstar_csv, write_summary_csv, write_trace_csv)

log = logging.getLogger("crlkit")

INCOMPLETE = "INCOMPLETE"


def run_dir_for(cfg: dict, method: str, seed: int) -> Path:
    return Path(cfg["out_dir"]) / cfg["env"] / method / f"seed{seed}"


def _write_record(record: RunRecord, run_dir: Path):
    write_trace_csv(record, run_dir / "trace.csv")
    write_eval_csv(record, run_dir / "eval.csv")


def train_one(cfg: dict, method: str, seed: int, run_dir=None, resume: dict | None = None) -> RunRecord:
    """One method on one seed, with per-task checkpoints in ``run_dir``."""
    cfg = C.merge(cfg, {"method": method, "seeds": [seed]})
    rc = C.RunConfig(cfg)
    run_dir = Path(run_dir) if run_dir is not None else run_dir_for(cfg, method, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(C.dumps(cfg), encoding="utf-8")
    marker = run_dir / INCOMPLETE
    marker.write_text("run in progress or aborted; outputs in this directory are partial\n", encoding="utf-8")

    def on_task_end(payload):
        payload["config"] = cfg
        save_checkpoint(payload, run_dir / "checkpoints" / f"task{payload['meta']['task']}.ckpt")
        _write_record(RunRecord.from_state(payload["record"]), run_dir)

    spec = rc.env_spec()
    record = run_sequence(method, spec, rc.schedule(), rc.cem(spec), seed, rc.learner(),
                          n_tasks=cfg["n_tasks"], on_task_end=on_task_end, resume=resume)
    last = run_dir / "checkpoints" / f"task{record.n_tasks}.ckpt"
    (run_dir / "final.ckpt").write_bytes(last.read_bytes())
    _write_record(record, run_dir)
    marker.unlink()
    return record


def _train_job(args):
    cfg, method, seed = args
    logging.basicConfig(level=logging.WARNING)
    return train_one(cfg, method, seed)


def load_run(run_dir) -> RunRecord:
    run_dir = Path(run_dir)
    if (run_dir / INCOMPLETE).exists():
        raise ConfigurationError(f"{run_dir} holds a partial run; finish or resume it first")
    cfg = C.load_file(run_dir / "config.json")
    rec = RunRecord(cfg["method"], cfg["env"], int(cfg["seeds"][0]), int(cfg["n_tasks"]))
    rec.eval = read_eval_csv(run_dir / "eval.csv", rec.n_tasks)
    return rec


# ---------------------------------------------------------------- commands

def _resolve(args, **extra) -> dict:
    file_cfg = C.load_file(args.config) if args.config else {}
    over = C.parse_set(args.set)
    for key in ("env", "profile", "method"):
        if getattr(args, key, None) is not None:
            over[key] = getattr(args, key)
    if getattr(args, "seeds", None) is not None:
        over["seeds"] = C.parse_seeds(args.seeds)
    if args.out is not None:
        over["out_dir"] = args.out
    if args.n_tasks is not None:
        over["n_tasks"] = args.n_tasks
    over.update(extra)
    return C.resolve(file_cfg, over)


def _single_task_refs(cfg: dict, tasks=None) -> dict:
    """``{seed: {task: r*}}`` from one from-scratch finetuning learner per task."""
    rc = C.RunConfig(cfg)
    spec = rc.env_spec()
    tasks = tasks or list(range(1, cfg["n_tasks"] + 1))
    values: dict = {}
    for seed in cfg["seeds"]:
        for t in tasks:
            values.setdefault(seed, {})[t] = run_single_task_baseline(
                spec, t, rc.schedule(), rc.cem(spec), seed, rc.learner())
            print(f"seed {seed} task {t}: r* = {values[seed][t]:.6g}")
    path = Path(cfg["out_dir"]) / cfg["env"] / "rstar.csv"
    write_rstar_csv(values, path)
    print(f"wrote {path}")
    return values


def cmd_train(args) -> int:
    if args.resume:
        payload = load_checkpoint(args.resume)
        cfg = payload["config"]
        if args.out is not None:
            cfg = C.merge(cfg, {"out_dir": args.out})
        seed, method = int(payload["meta"]["seed"]), payload["meta"]["method"]
        run_dir = args.run_dir or run_dir_for(cfg, method, seed)
        train_one(cfg, method, seed, run_dir, resume=payload)
        print(f"resumed after task {payload['meta']['task']}; finished {run_dir}")
        return 0
    cfg = _resolve(args)
    if cfg["method"] == "single":
        _single_task_refs(cfg)
        return 0
    for seed in cfg["seeds"]:
        run_dir = args.run_dir or run_dir_for(cfg, cfg["method"], seed)
        rec = train_one(cfg, cfg["method"], seed, run_dir)
        print(f"{cfg['method']} seed {seed}: {len(rec.trace)} episodes, outputs in {run_dir}")
    return 0


def cmd_eval(args) -> int:
    payload = load_checkpoint(args.checkpoint)
    rc = C.RunConfig(payload["config"])
    spec = rc.env_spec()
    schedule = rc.schedule()
    learner = restore_learner(payload, spec, rc.learner(), schedule)
    trained = int(payload["meta"]["task"])
    tasks = [int(t) for t in args.tasks.split(",")] if args.tasks else list(range(1, trained + 1))
    bad = [t for t in tasks if not 1 <= t <= trained]
    if bad:
        raise ConfigurationError(f"checkpoint has models for tasks 1..{trained}, not {bad}")
    episodes = args.episodes or schedule.eval_episodes
    streams = RNGStreams(int(payload["meta"]["seed"]))
    print("task,reward")
    for t in tasks:
        print(f"{t},{evaluate(learner, spec, t, schedule.K, rc.cem(spec), streams, episodes):.6g}")
    return 0


def cmd_compare(args) -> int:
    cfg = _resolve(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        C.resolve(overrides={"env": cfg["env"], "method": m})   # validate names up front
    if "single" in methods and args.rstar:
        raise ConfigurationError("give either --rstar or the single method, not both")
    r_star = read_rstar_csv(args.rstar) if args.rstar else None
    if "single" in methods:
        methods.remove("single")
        r_star = _single_task_refs(cfg)
    jobs = [(cfg, m, s) for m in methods for s in cfg["seeds"]]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            records = list(pool.map(_train_job, jobs))
    else:
        records = [train_one(*job) for job in jobs]
    table = aggregate(records, r_star)
    out = Path(cfg["out_dir"]) / cfg["env"]
    write_summary_csv(table, out / "summary.csv")
    text = format_table(table, f"{cfg['env']}: seeds {','.join(map(str, cfg['seeds']))}")
    (out / "table.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_baseline(args) -> int:
    cfg = _resolve(args, method="single")
    tasks = [int(t) for t in args.tasks.split(",")] if args.tasks else None
    _single_task_refs(cfg, tasks)
    return 0


def cmd_report(args) -> int:
    if bool(args.summary) == bool(args.runs):
        raise ConfigurationError("report needs either --summary files or --runs directories")
    if args.summary:
        table = read_summary_csv(args.summary[0])
        for p in args.summary[1:]:
            table.rows += read_summary_csv(p).rows
    else:
        r_star = read_rstar_csv(args.rstar) if args.rstar else None
        table = aggregate([load_run(d) for d in args.runs], r_star)
    text = format_table(table, args.title or "")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- parser

def _common(p, seeds=True):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--env")
    p.add_argument("--profile", choices=C.PROFILES)
    if seeds:
        p.add_argument("--seeds", "--seed", dest="seeds", help="e.g. 0, 0..3 or 0,2")
    p.add_argument("--n-tasks", type=int)
    p.add_argument("--out", help="output root directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. schedule.M=30 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crlkit", description="Continual model-based RL experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one method on one env for the given seed(s)")
    _common(p)
    p.add_argument("--method")
    p.add_argument("--run-dir", help="exact output directory (default: <out>/<env>/<method>/seed<k>)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint's frozen models")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tasks", help="comma separated task ids (default: all trained)")
    p.add_argument("--episodes", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="run several methods over seeds and tabulate retention")
    _common(p)
    p.add_argument("--methods", required=True,
                   help="comma separated, e.g. hypercrl,finetune; adding single computes r* for forward transfer")
    p.add_argument("--rstar", help="r* CSV from `baseline`, enables forward transfer")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_compare, method=None)

    p = sub.add_parser("baseline", help="single-task reference rewards r*")
    _common(p)
    p.add_argument("--tasks", help="comma separated task ids (default: all)")
    p.set_defaults(func=cmd_baseline, method=None)

    p = sub.add_parser("report", help="format summary CSVs or run directories as a text table")
    p.add_argument("--summary", nargs="+")
    p.add_argument("--runs", nargs="+")
    p.add_argument("--rstar")
    p.add_argument("--title")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ValueError) as e:
        print(f"crlkit {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (CRLError, OSError) as e:
        print(f"crlkit {args.command}: failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
