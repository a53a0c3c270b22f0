"""Delay / jitter / packet-loss emulation for a sampled observation stream.

The channel operates on sample indices: each step k >= 2 delivers the sample
``max(1, k - round(n_d/dt + g * n_j/dt))`` (clamped above at k for causality,
g a standard-normal draw), unless the packet is lost, in which case the
previously delivered value is held.  Delay and jitter are configured in
milliseconds and converted to sample offsets at the stream's sample period.

Randomness comes from two PCG64 streams spawned from the config seed — one
for jitter, one for loss — so per-step and whole-stream processing consume
draws identically and produce bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ContractViolationError

__all__ = [
    "RNG_ALGORITHM",
    "NetworkConfig",
    "ChannelState",
    "ChannelStats",
    "delayed_index",
    "observe",
    "apply_channel",
    "apply_additive_bias",
]

#: identifier of the generator behind every stochastic draw, recorded in reports
RNG_ALGORITHM = "pcg64"


@dataclass(frozen=True)
class NetworkConfig:
    """Channel impairment parameters.

    ``n_d``: mean delay in milliseconds; ``n_j``: jitter standard deviation
    in milliseconds; ``n_p``: packet-loss probability in [0, 1]; ``seed``:
    RNG seed for the jitter and loss streams.
    """

    n_d: float = 0.0
    n_j: float = 0.0
    n_p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "n_d", float(self.n_d))
        object.__setattr__(self, "n_j", float(self.n_j))
        object.__setattr__(self, "n_p", float(self.n_p))
        object.__setattr__(self, "seed", int(self.seed))
        if self.n_d < 0.0:
            raise ContractViolationError(f"n_d must be >= 0, got {self.n_d}")
        if self.n_j < 0.0:
            raise ContractViolationError(f"n_j must be >= 0, got {self.n_j}")
        if not 0.0 <= self.n_p <= 1.0:
            raise ContractViolationError(f"n_p must be in [0, 1], got {self.n_p}")

    def spawn_streams(self) -> tuple[np.random.Generator, np.random.Generator]:
        """Independent (jitter, loss) generators derived from the seed."""
        jitter_seq, loss_seq = np.random.SeedSequence(self.seed).spawn(2)
        return (
            np.random.Generator(np.random.PCG64(jitter_seq)),
            np.random.Generator(np.random.PCG64(loss_seq)),
        )


@dataclass
class ChannelStats:
    """Counters accumulated while a stream passes through the channel."""

    packets_total: int = 0
    packets_lost: int = 0
    delay_histogram: dict[int, int] = field(default_factory=dict)

    @property
    def loss_realized(self) -> float:
        if self.packets_total == 0:
            return 0.0
        return self.packets_lost / self.packets_total

    def mean_delay_samples(self) -> float:
        """Average realized offset (in samples) over delivered packets."""
        total = sum(self.delay_histogram.values())
        if total == 0:
            return 0.0
        return sum(k * v for k, v in self.delay_histogram.items()) / total

    def flat_record(self) -> dict:
        """Flat fields for one report row."""
        hist = ";".join(f"{k}:{self.delay_histogram[k]}" for k in sorted(self.delay_histogram))
        return {
            "loss_realized": self.loss_realized,
            "mean_delay_samples": self.mean_delay_samples(),
            "delay_hist": hist,
        }


@dataclass
class ChannelState:
    """Single-owner mutable receiver state for step-by-step processing."""

    prev_y: np.ndarray
    jitter_rng: np.random.Generator
    loss_rng: np.random.Generator
    stats: ChannelStats = field(default_factory=ChannelStats)

    @classmethod
    def initial(cls, first_sample, cfg: NetworkConfig) -> "ChannelState":
        """Receiver seeded with the first true sample, streams from cfg.seed."""
        jitter_rng, loss_rng = cfg.spawn_streams()
        prev = np.array(first_sample, dtype=float).reshape(-1)
        return cls(prev_y=prev, jitter_rng=jitter_rng, loss_rng=loss_rng)


def delayed_index(k: int, cfg: NetworkConfig, dt: float, rng: np.random.Generator) -> int:
    """Source index (1-based) for the packet arriving at step k.

    Computes ``max(1, k - round(n_d/dt + g * n_j/dt))`` with n_d and n_j
    converted from milliseconds to seconds first.  One normal draw is
    consumed on every call, jitter or not.  Negative jitter draws can push
    the result above k; causality clamping is the caller's job.
    """
    if k < 2:
        raise ContractViolationError(f"channel steps start at k=2, got k={k}")
    if not dt > 0.0:
        raise ContractViolationError(f"dt must be positive, got {dt}")
    g = rng.standard_normal()
    offset = int(np.rint(cfg.n_d / 1000.0 / dt + g * cfg.n_j / 1000.0 / dt))
    return max(1, k - offset)


def observe(k: int, truth, cfg: NetworkConfig, state: ChannelState, dt: float) -> np.ndarray:
    """Delivered measurement at step k (1-based), mutating ``state``.

    With probability 1 - n_p the delayed true sample is delivered; otherwise
    the previously delivered value is held.  The delivered index is clamped
    to [1, k].  Draw order per step: jitter first, loss second.
    """
    truth = np.asarray(truth, dtype=float)
    if truth.ndim == 1:
        truth = truth.reshape(-1, 1)
    if truth.shape[0] == 0:
        raise ContractViolationError("truth stream is empty")
    if not 2 <= k <= truth.shape[0]:
        raise ContractViolationError(
            f"k must be in [2, {truth.shape[0]}], got {k}"
        )
    idx = min(k, delayed_index(k, cfg, dt, state.jitter_rng))
    u = state.loss_rng.random()
    state.stats.packets_total += 1
    if u >= cfg.n_p:
        value = truth[idx - 1].copy()
        offset = k - idx
        state.stats.delay_histogram[offset] = state.stats.delay_histogram.get(offset, 0) + 1
    else:
        value = state.prev_y.copy()
        state.stats.packets_lost += 1
    state.prev_y = value
    return value.copy()


def apply_channel(
    truth, cfg: NetworkConfig, dt: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, ChannelStats]:
    """Run the whole truth stream through the channel in one batch.

    Bit-identical to calling :func:`observe` for k = 2..N with a fresh
    :class:`ChannelState`.  Returns ``(delivered, src_idx, lost, stats)``
    where row 0 of ``delivered`` is the untouched first sample.
    """
    truth = np.ascontiguousarray(np.asarray(truth, dtype=float))
    if truth.ndim == 1:
        truth = truth.reshape(-1, 1)
    if truth.shape[0] == 0:
        raise ContractViolationError("truth stream is empty")
    if not dt > 0.0:
        raise ContractViolationError(f"dt must be positive, got {dt}")
    steps = truth.shape[0]
    jitter_rng, loss_rng = cfg.spawn_streams()
    normals = jitter_rng.standard_normal(max(steps - 1, 0))
    uniforms = loss_rng.random(max(steps - 1, 0))
    delivered, src_idx, lost = _kernels.channel_loop(
        truth,
        cfg.n_d / 1000.0 / dt,
        cfg.n_j / 1000.0 / dt,
        cfg.n_p,
        normals,
        uniforms,
    )
    stats = ChannelStats(packets_total=steps - 1, packets_lost=int(lost.sum()))
    fresh = ~lost
    fresh[0] = False
    offsets = np.arange(steps)[fresh] - src_idx[fresh]
    for offset, count in zip(*np.unique(offsets, return_counts=True)):
        stats.delay_histogram[int(offset)] = int(count)
    return delivered, src_idx, lost, stats


def apply_additive_bias(truth, cfg: NetworkConfig) -> np.ndarray:
    """Literal additive-deviation form: truth + (n_d + n_j + n_p) per entry.

    Exists only so the additive model variant can be unit-tested; the
    operational channel is index/hold based and does not use this.
    """
    truth = np.asarray(truth, dtype=float)
    return truth + (cfg.n_d + cfg.n_j + cfg.n_p)
