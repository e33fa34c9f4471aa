"""Parametric compute/communication cost model for the virtual-time backend.

Times are derived from per-sample compute cost, model size, and link
parameters. Collectives use the bandwidth-optimal ring form: an allreduce
of B bytes over L participants costs ``2 (L-1)/L * B / bandwidth`` plus
``2 (L-1)`` latency hops. Hierarchical runs may give the intra-node fabric
its own bandwidth and latency.

Link latency doubles as the calibration knob for per-round software
overheads (collective launch, synchronization) that are not modeled
explicitly; the shipped presets choose it to land in the regime of a
real 100 Gbit/s cluster training a ~165 MB model at ~0.07 s per 32-sample
batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

_PER_SAMPLE_COMPUTE = 0.07 / 32.0
_MODEL_BYTES = 165e6
_ETHERNET_100G = 100e9 / 8.0


@dataclass(frozen=True)
class CostModel:
    compute_seconds_per_sample: float = _PER_SAMPLE_COMPUTE
    model_bytes: float = _MODEL_BYTES
    link_bandwidth: float = _ETHERNET_100G  # bytes per second
    link_latency: float = 0.0  # seconds per hop
    intra_node_bandwidth: float = 0.0  # 0 means: same as link_bandwidth
    intra_node_latency: float = -1.0  # negative means: same as link_latency
    loader_overlap: bool = True  # data loading hidden under compute
    loader_seconds_per_sample: float = 0.0
    eval_seconds_per_sample: float = 0.0  # serial heldout evaluation cost
    slowdowns: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.compute_seconds_per_sample <= 0:
            raise ValueError("compute_seconds_per_sample must be positive")
        if self.link_bandwidth <= 0:
            raise ValueError("link_bandwidth must be positive")
        if self.model_bytes < 0 or self.link_latency < 0:
            raise ValueError("model_bytes and link_latency must be non-negative")
        if self.loader_seconds_per_sample < 0 or self.eval_seconds_per_sample < 0:
            raise ValueError("per-sample costs must be non-negative")
        for learner, factor in self.slowdowns.items():
            if factor < 1.0:
                raise ValueError(
                    f"slowdown factors must be >= 1, learner {learner} has {factor}"
                )
        object.__setattr__(self, "slowdowns", dict(self.slowdowns))

    def slowdown(self, learner: int) -> float:
        return self.slowdowns.get(learner, 1.0)

    def batch_compute_time(self, learner: int, batch_size: int) -> float:
        """Seconds learner ``learner`` spends producing one local batch."""
        t = batch_size * self.compute_seconds_per_sample * self.slowdown(learner)
        if not self.loader_overlap:
            t += batch_size * self.loader_seconds_per_sample
        return t

    def ring_allreduce_time(self, participants: int, intra_node: bool = False) -> float:
        """Ring allreduce of the full model across ``participants``."""
        if participants <= 1:
            return 0.0
        bw = self.link_bandwidth
        lat = self.link_latency
        if intra_node:
            if self.intra_node_bandwidth > 0:
                bw = self.intra_node_bandwidth
            if self.intra_node_latency >= 0:
                lat = self.intra_node_latency
        ratio = 2.0 * (participants - 1) / participants
        return ratio * self.model_bytes / bw + 2.0 * (participants - 1) * lat

    def neighbor_exchange_time(self) -> float:
        """One full-model transfer to a ring neighbor."""
        return self.model_bytes / self.link_bandwidth + self.link_latency

    def ps_roundtrip_time(self) -> float:
        """Gradient push plus model pull against the parameter server."""
        return 2.0 * (self.model_bytes / self.link_bandwidth + self.link_latency)

    def eval_time(self, n_heldout: int) -> float:
        """Serial virtual-time cost of one full heldout evaluation."""
        return n_heldout * self.eval_seconds_per_sample

    def serial_epoch_seconds(self, n_train: int, n_heldout: int) -> float:
        """Virtual time one unslowed learner needs for an epoch, no comm."""
        per_sample = self.compute_seconds_per_sample
        if not self.loader_overlap:
            per_sample += self.loader_seconds_per_sample
        return n_train * per_sample + self.eval_time(n_heldout)


def amdahl_bound(p: float) -> float:
    """Upper speedup bound ``1 / (1 - p)`` for parallel fraction ``p``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"parallel fraction must lie in [0, 1), got {p}")
    return 1.0 / (1.0 - p)


def parallel_fraction(cost: CostModel, n_train: int, n_heldout: int) -> float:
    """Fraction of a serial epoch that parallelizes across learners.

    Training compute spreads over learners; the heldout evaluation is the
    serial remainder. Returns 1.0 when evaluation is free, in which case
    only the trivial ``speedup <= L`` bound applies.
    """
    train = cost.serial_epoch_seconds(n_train, n_heldout) - cost.eval_time(n_heldout)
    total = train + cost.eval_time(n_heldout)
    if total <= 0:
        raise ValueError("epoch with zero virtual cost")
    return train / total


# Presets sized for large-cluster training of a ~165 MB model.
# "cluster_fast_allreduce" and "cluster_slow_allreduce" differ only in the
# per-hop latency of the collective (fast vendor library vs generic MPI);
# "hierarchical" models multi-GPU nodes whose intra-node collective runs on
# a shared PCIe fabric, with the inter-node ring fully overlapped.
PRESETS: dict[str, CostModel] = {
    "ideal": CostModel(model_bytes=0.0),
    "cluster_fast_allreduce": CostModel(
        link_latency=9.44e-3,
        eval_seconds_per_sample=_PER_SAMPLE_COMPUTE,
    ),
    "cluster_slow_allreduce": CostModel(
        link_latency=0.02,
        eval_seconds_per_sample=_PER_SAMPLE_COMPUTE,
    ),
    "hierarchical": CostModel(
        link_latency=1e-4,
        intra_node_bandwidth=1.65e9,
        intra_node_latency=5e-4,
        eval_seconds_per_sample=_PER_SAMPLE_COMPUTE,
    ),
}
