"""Retention, forward transfer and their aggregation across seeds.

``r[i][j]`` is the mean evaluation reward on task ``i`` after training task
``j``. Retention of task ``i`` compares the end of the sequence with the
moment the task was learned; forward transfer compares the continual model
on a fresh task with a model trained on that task alone. Both are
percentages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GUARD = 1e-6

# cell flags
UNDEFINED = "undefined"
NEGATIVE_DENOMINATOR = "negative-denominator"
POSITIVE_BACKWARD = "positive backward transfer"
POSITIVE_FORWARD = "positive forward transfer"


def _matrix(record) -> np.ndarray:
    m = record.eval if hasattr(record, "eval") else record
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"evaluation matrix must be square, got shape {m.shape}")
    return m


def reward_scale(values) -> float:
    """Largest finite |reward|; the guard is relative to it."""
    v = np.abs(np.asarray(values, dtype=np.float64))
    v = v[np.isfinite(v)]
    return float(v.max()) if v.size and v.max() > 0 else 1.0


def guarded_ratio(num: float, den: float, scale: float) -> tuple[float, list]:
    """``100 * num / den`` with the near-zero and negative-denominator guards."""
    if not (np.isfinite(num) and np.isfinite(den)) or abs(den) < GUARD * scale:
        return float("nan"), [UNDEFINED]
    flags = [NEGATIVE_DENOMINATOR] if den < 0 else []
    return 100.0 * num / den, flags


@dataclass
class TransferResult:
    tasks: list            # task ids the values refer to
    values: list           # percentages, nan where undefined
    flags: list            # one list of flags per task
    average: float         # nan if any term is undefined

    def as_dict(self) -> dict:
        return dict(zip(self.tasks, self.values))


def _average(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()) if v.size and np.isfinite(v).all() else float("nan")


def retention(record) -> TransferResult:
    """``f_i = 100 r[i][T] / r[i][i]`` for ``i = 1..T-1`` and their mean."""
    r = _matrix(record)
    T = r.shape[0]
    scale = reward_scale(r)
    tasks, vals, flags = [], [], []
    for i in range(1, T):
        v, fl = guarded_ratio(r[i - 1, T - 1], r[i - 1, i - 1], scale)
        if np.isfinite(v) and v > 100.0:
            fl = fl + [POSITIVE_BACKWARD]
        tasks.append(i)
        vals.append(v)
        flags.append(fl)
    return TransferResult(tasks, vals, flags, _average(vals))


def forward_transfer(record, r_star) -> TransferResult:
    """``I_i = 100 r[i][i] / r*_i`` for ``i = 2..T`` and their mean.

    ``r_star`` maps task id to the single-task reference reward (a dict or a
    sequence indexed from task 1). Missing references make the term undefined.
    """
    r = _matrix(record)
    T = r.shape[0]
    if not isinstance(r_star, dict):
        r_star = {i + 1: v for i, v in enumerate(r_star)}
    # task 1 has no forward transfer, so its values do not set the guard scale either
    refs = [r_star.get(i) for i in range(2, T + 1)]
    scale = reward_scale(list(np.diag(r)[1:]) + [x for x in refs if x is not None])
    tasks, vals, flags = [], [], []
    for i in range(2, T + 1):
        ref = r_star.get(i)
        if ref is None:
            v, fl = float("nan"), [UNDEFINED]
        else:
            v, fl = guarded_ratio(r[i - 1, i - 1], float(ref), scale)
        if np.isfinite(v) and v > 100.0:
            fl = fl + [POSITIVE_FORWARD]
        tasks.append(i)
        vals.append(v)
        flags.append(fl)
    return TransferResult(tasks, vals, flags, _average(vals))


def normalized_rewards(rewards, r_star: float) -> np.ndarray:
    """Episode rewards divided by a single-task model's mean evaluation reward."""
    if not np.isfinite(r_star) or r_star == 0:
        raise ValueError("normalization needs a finite, non-zero reference reward")
    return np.asarray(rewards, dtype=np.float64) / r_star


# ---------------------------------------------------------------- aggregation

@dataclass
class MetricRow:
    method: str
    metric: str            # "retention" or "forward_transfer"
    task: str              # task id as text, or "avg"
    mean: float
    std: float | None      # None when fewer than two seeds
    n: int
    flags: list = field(default_factory=list)


@dataclass
class MetricsTable:
    rows: list = field(default_factory=list)

    def methods(self) -> list:
        seen = []
        for r in self.rows:
            if r.method not in seen:
                seen.append(r.method)
        return seen

    def get(self, method, metric, task) -> MetricRow | None:
        for r in self.rows:
            if (r.method, r.metric, r.task) == (method, metric, str(task)):
                return r
        return None


def _summarize(method, metric, task, values, flags) -> MetricRow:
    v = np.asarray(values, dtype=np.float64)
    n = len(v)
    if n == 0 or not np.isfinite(v).all():
        return MetricRow(method, metric, task, float("nan"), None, n, [UNDEFINED])
    mean = float(v.mean())
    std = float(v.std()) if n >= 2 else None   # population std across seeds
    # transfer labels follow the reported mean, so a table rebuilt from the
    # summary CSV marks the same cells; a negative denominator in any seed is kept
    fl = sorted({f for fs in flags for f in fs if f == NEGATIVE_DENOMINATOR})
    if mean > 100.0:
        fl.append(POSITIVE_BACKWARD if metric == "retention" else POSITIVE_FORWARD)
    return MetricRow(method, metric, task, mean, std, n, fl)


def _collect(method, metric, results, rows):
    tasks = results[0].tasks
    for k, task in enumerate(tasks):
        rows.append(_summarize(method, metric, str(task), [res.values[k] for res in results],
                               [res.flags[k] for res in results]))
    rows.append(_summarize(method, metric, "avg", [res.average for res in results], []))


def aggregate(records, r_star=None) -> MetricsTable:
    """Mean and population std of every metric across seeds, per method.

    ``r_star`` is optional and maps seed to that seed's per-task references
    (see :func:`forward_transfer`); a seed without references gets undefined
    forward transfer. Methods appear in the order of first occurrence.
    """
    by_method: dict[str, list] = {}
    for rec in records:
        by_method.setdefault(rec.method, []).append(rec)
    table = MetricsTable()
    for method, recs in by_method.items():
        _collect(method, "retention", [retention(r) for r in recs], table.rows)
        if r_star is not None:
            fts = [forward_transfer(r, r_star.get(r.seed, {})) for r in recs]
            _collect(method, "forward_transfer", fts, table.rows)
    return table


# ---------------------------------------------------------------- text report

_MARK = {POSITIVE_BACKWARD: "*", POSITIVE_FORWARD: "+", NEGATIVE_DENOMINATOR: "!"}


def _cell(row: MetricRow | None) -> str:
    if row is None:
        return "-"
    if not np.isfinite(row.mean):
        return UNDEFINED
    std = "n/a" if row.std is None else f"{row.std:.1f}"
    marks = "".join(_MARK[f] for f in row.flags if f in _MARK)
    return f"{row.mean:.1f} ± {std}{marks}"


def format_table(table: MetricsTable, title: str = "") -> str:
    """Plain-text table: one line per method, retention then forward transfer."""
    cols = []
    for metric, prefix in (("retention", "f"), ("forward_transfer", "I")):
        tasks = []
        for r in table.rows:
            if r.metric == metric and r.task not in tasks:
                tasks.append(r.task)
        tasks.sort(key=lambda t: (t == "avg", int(t) if t != "avg" else 0))
        cols += [(metric, t, prefix if t == "avg" else f"{prefix}_{t}") for t in tasks]
    header = ["method"] + [c[2] for c in cols]
    body = [[m] + [_cell(table.get(m, metric, t)) for metric, t, _ in cols] for m in table.methods()]
    widths = [max(len(row[k]) for row in [header] + body) for k in range(len(header))]
    fmt = lambda row: "  ".join(c.ljust(w) if k == 0 else c.rjust(w) for k, (c, w) in enumerate(zip(row, widths)))
    lines = [title] if title else []
    lines.append(fmt(header))
    lines.append("  ".join("-" * w for w in widths))
    lines += [fmt(row) for row in body]
    n = sorted({r.n for r in table.rows if r.n})
    over = f"over {'/'.join(map(str, n))} seed(s)" if n else "across seeds"
    lines.append("")
    lines.append(f"values in %, mean ± population std {over}")
    lines.append("* positive backward transfer   + positive forward transfer   ! negative denominator")
    return "\n".join(lines) + "\n"
