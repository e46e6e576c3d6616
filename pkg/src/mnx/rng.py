"""Counter-based random streams.

Every replication owns a Philox stream addressed by ``(master_seed, index)``.
The master seed is hashed into the Philox key and the replication index is
written into the third counter word, so streams are disjoint as long as a
single replication draws fewer than 2**128 blocks. Streams can be rebuilt in
any order, on any worker, and always yield the same numbers.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["Stream", "streams", "normals"]


def _key(master_seed):
    return np.random.SeedSequence(int(master_seed)).generate_state(2, np.uint64)


@dataclass(frozen=True)
class Stream:
    """Identifier of one replication's random stream."""

    master_seed: int
    index: int

    def generator(self, sub=0):
        """Return a fresh generator positioned at the start of the stream.

        ``sub`` selects an independent side stream of the same replication
        (used for random initial conditions).
        """
        bitgen = np.random.Philox(
            key=_key(self.master_seed), counter=[0, 0, int(self.index), int(sub)]
        )
        return np.random.Generator(bitgen)


def streams(master_seed, indices):
    """Streams for a range or list of replication indices."""
    return [Stream(int(master_seed), int(i)) for i in indices]


def normals(stream_list, size, sub=0):
    """Standard normals of shape ``(len(stream_list), size)``, row ``i`` taken
    from the start of ``stream_list[i]``."""
    if isinstance(stream_list, Stream):
        return stream_list.generator(sub).standard_normal(size)
    out = np.empty((len(stream_list), size))
    key = _key(stream_list[0].master_seed) if stream_list else None
    for row, st in enumerate(stream_list):
        if st.master_seed == stream_list[0].master_seed:
            bitgen = np.random.Philox(key=key, counter=[0, 0, st.index, sub])
            out[row] = np.random.Generator(bitgen).standard_normal(size)
        else:
            out[row] = st.generator(sub).standard_normal(size)
    return out
