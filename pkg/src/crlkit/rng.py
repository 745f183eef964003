"""Labeled, independent random streams derived from one integer seed.

Each label gets its own ``SeedSequence`` child, so drawing more CEM samples
never shifts the exploration or batch-sampling streams. Evaluation episodes
get a fresh generator keyed by ``(task, episode)`` and therefore do not
depend on anything that happened during training.
"""

from __future__ import annotations

import zlib

import numpy as np

LABELS = ("init", "explore", "cem", "train", "store")


def _key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


class RNGStreams:
    def __init__(self, seed: int, namespace: str = "run"):
        self.seed = int(seed)
        self.namespace = namespace
        self._gens: dict[str, np.random.Generator] = {}

    def _gen(self, *key) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(_key(self.namespace), *key))
        return np.random.Generator(np.random.PCG64(ss))

    def __getitem__(self, label: str) -> np.random.Generator:
        if label not in self._gens:
            self._gens[label] = self._gen(_key(label))
        return self._gens[label]

    def eval_rng(self, task_id: int, episode: int) -> np.random.Generator:
        return self._gen(_key("eval"), int(task_id), int(episode))

    def state_dict(self) -> dict:
        return {label: g.bit_generator.state for label, g in sorted(self._gens.items())}

    def load_state_dict(self, d: dict):
        self._gens = {}
        for label, state in d.items():
            self[label].bit_generator.state = state
