"""Named, reproducible random substreams derived from a master seed."""

import zlib

import numpy as np


def _name_key(name):
    return zlib.crc32(str(name).encode("utf-8"))


def seed_sequence(seed, *names):
    """Return a SeedSequence for ``seed`` refined by a path of stage names.

    ``seed`` may be an int or an existing SeedSequence. The same (seed, names)
    always yields the same stream, independent of call order.
    """
    if isinstance(seed, np.random.SeedSequence):
        base = list(np.atleast_1d(seed.entropy)) + list(seed.spawn_key)
    elif seed is None:
        raise ValueError("an explicit seed is required")
    else:
        base = [int(seed)]
    return np.random.SeedSequence(base + [_name_key(n) for n in names])


def generator(seed, *names):
    return np.random.default_rng(seed_sequence(seed, *names))


class SeedLedger:
    """Records the substream names handed out during a run.

    The recorded entries let any single stochastic stage be replayed with
    ``generator(master_seed, *names)``.
    """

    def __init__(self, master_seed):
        self.master_seed = int(master_seed)
        self.entries = {}

    def seed(self, *names):
        ss = seed_sequence(self.master_seed, *names)
        self.entries["/".join(str(n) for n in names)] = [int(v) for v in ss.entropy]
        return ss

    def generator(self, *names):
        return np.random.default_rng(self.seed(*names))

    def to_dict(self):
        return {"master_seed": self.master_seed, "streams": dict(sorted(self.entries.items()))}
