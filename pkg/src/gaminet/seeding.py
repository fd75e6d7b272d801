"""Named random substreams derived from a single base seed."""
import numpy as np

STREAMS = {"init": 1, "split": 2, "batching": 3, "data": 4}


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    if name not in STREAMS:
        raise KeyError(f"unknown random stream {name!r}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name], *map(int, extra)))
    return np.random.Generator(np.random.PCG64(ss))
