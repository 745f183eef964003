"""Forgetting on the slide table: a hypernetwork against plain finetuning.

Both learners see the five friction tasks in order. After each task every
earlier task is re-evaluated with its own frozen model, filling the upper
triangle of the reward matrix. Finetuning keeps one shared trunk, so early
tasks drift as later ones are learned; the hypernetwork pins its earlier
outputs with the snapshot regularizer.

The default is a shortened schedule that finishes in a few minutes and
shows the direction of the effect. ``--desk`` runs the full desk schedule
(one seed takes roughly ten minutes on one core).

    python demos/02_forgetting.py [--desk] [--seed 0]
"""

import argparse
import time

import numpy as np

from crlkit.config import RunConfig, defaults, merge
from crlkit.metrics import retention
from crlkit.runner import run_sequence

ap = argparse.ArgumentParser()
ap.add_argument("--desk", action="store_true")
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

cfg = defaults("slide", "desk")
if not args.desk:
    cfg = merge(cfg, {"schedule": {"M": 8, "S": 150, "eval_episodes": 3}})
rc = RunConfig(cfg)
spec = rc.env_spec()
np.set_printoptions(precision=1, suppress=True, linewidth=100)

for method in ("hypercrl", "finetune"):
    t0 = time.time()
    rec = run_sequence(method, spec, rc.schedule(), rc.cem(spec), args.seed, rc.learner())
    res = retention(rec)
    print(f"\n{method}  ({time.time() - t0:.0f}s)")
    print("r[i][j], rows = evaluated task, columns = after training task j")
    print(rec.eval)
    print("retention %:", np.round(res.values, 1), " average", round(res.average, 1))
