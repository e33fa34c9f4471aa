"""Deterministic sample streams feeding the engines.

Every epoch has a seeded permutation of the training range. Synchronous
strategies consume it as consecutive global batches of M samples, each
split contiguously across the L learners, which keeps the per-round batch
composition independent of L (so gradient averaging over the round equals
one serial step on the same M samples). Asynchronous strategies give each
learner the whole permutation rotated by ``l * n // L`` and let it consume
at its own pace, wrapping into the next epoch's permutation.
"""

from __future__ import annotations

import numpy as np

from psgdlab.problems import Dataset

_PERM_TAG = 7919


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng([seed, epoch, _PERM_TAG])
    return rng.permutation(n)


class SyncBatcher:
    """Global batches of M per round, partitioned into L local slices."""

    def __init__(self, dataset: Dataset, global_batch: int, learners: int, seed: int):
        n = dataset.n_train
        if global_batch > n:
            raise ValueError(
                f"global batch {global_batch} exceeds training set size {n}"
            )
        if n % global_batch != 0:
            raise ValueError(
                f"synchronous runs need n_train divisible by the global batch; "
                f"{n} % {global_batch} != 0"
            )
        self.dataset = dataset
        self.global_batch = global_batch
        self.learners = learners
        self.local_batch = global_batch // learners
        self.seed = seed
        self.rounds_per_epoch = n // global_batch
        self._epoch = -1
        self._perm: np.ndarray | None = None

    def round_indices(self, epoch: int, round_index: int) -> np.ndarray:
        if epoch != self._epoch:
            self._perm = epoch_permutation(self.seed, epoch, self.dataset.n_train)
            self._epoch = epoch
        start = round_index * self.global_batch
        return self._perm[start : start + self.global_batch]

    def learner_slice(self, round_idx: np.ndarray, learner: int) -> np.ndarray:
        start = learner * self.local_batch
        return round_idx[start : start + self.local_batch]

    def learner_batch(self, epoch: int, round_index: int, learner: int):
        idx = self.round_indices(epoch, round_index)
        return self.dataset.batch(self.learner_slice(idx, learner))

    def global_batch_at(self, epoch: int, round_index: int):
        return self.dataset.batch(self.round_indices(epoch, round_index))


class OffsetStream:
    """One learner's infinite stream over rotated epoch permutations."""

    def __init__(self, dataset: Dataset, learner: int, learners: int, seed: int):
        self.dataset = dataset
        self.n = dataset.n_train
        self.offset = learner * self.n // learners
        self.seed = seed
        self.position = 0  # global sample position across epochs
        self._epoch = -1
        self._perm: np.ndarray | None = None

    def _perm_for(self, epoch: int) -> np.ndarray:
        if epoch != self._epoch:
            self._perm = epoch_permutation(self.seed, epoch, self.n)
            self._epoch = epoch
        return self._perm

    def next_indices(self, count: int) -> np.ndarray:
        out = np.empty(count, dtype=np.int64)
        filled = 0
        while filled < count:
            epoch = self.position // self.n
            within = self.position % self.n
            take = min(count - filled, self.n - within)
            perm = self._perm_for(epoch)
            pos = (self.offset + within + np.arange(take)) % self.n
            out[filled : filled + take] = perm[pos]
            filled += take
            self.position += take
        return out

    def next_batch(self, count: int):
        return self.dataset.batch(self.next_indices(count))
