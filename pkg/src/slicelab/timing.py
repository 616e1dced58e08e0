"""Stochastic stand-in for the hardware timing primitives.

Latency of an LLC access from a core is ``base + hop * distance + noise``.
Noise has two parts: a common-mode drift (think uncore frequency changes)
that is shared by everything measured within one short burst, and a
per-access jitter.  The comparator races two accesses inside one burst, so
the drift cancels there; absolute measurements (RDTSCP averages, delay-chain
tipping points) keep it.  ``common_share`` sets the drift's share of the
total variance for each scenario.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError

QUIET = "quiet"
BUSY = "busy"


@dataclass(frozen=True)
class RingTopology:
    """Cores and slices attached to stops of a bidirectional ring."""

    ring_stops: int
    slice_stops: tuple[int, ...]
    core_stops: tuple[int, ...]

    def __post_init__(self):
        stops = self.slice_stops + self.core_stops
        if self.ring_stops <= 0 or any(not 0 <= s < self.ring_stops for s in stops):
            raise ConfigurationError("ring positions must lie on the ring")

    @classmethod
    def tiles(cls, slice_count: int, core_count: int | None = None) -> "RingTopology":
        """One tile (core + slice) per stop on the first half of a ring.

        Only half the stops hold tiles (the rest are system-agent and
        graphics stops), so the distances seen from core 0 are distinct.
        """
        cores = slice_count if core_count is None else core_count
        stops = max(2 * slice_count, 2)
        return cls(stops, tuple(range(slice_count)), tuple(range(cores)))

    @property
    def core_count(self) -> int:
        return len(self.core_stops)

    @property
    def slice_count(self) -> int:
        return len(self.slice_stops)

    def distance(self, core: int, slice_: int) -> int:
        d = abs(self.core_stops[core] - self.slice_stops[slice_])
        return min(d, self.ring_stops - d)


@dataclass(frozen=True)
class LatencyModel:
    base_ticks: float = 40.0
    hop_ticks: float = 2.0
    noise_sigma_quiet: float = 1.5
    noise_sigma_busy: float = 6.0
    scenario: str = QUIET
    common_share_quiet: float = 0.5
    common_share_busy: float = 0.9
    tails: str = "gaussian"  # gaussian | student_t
    t_dof: float = 4.0
    spike_prob: float = 0.0
    spike_ticks: float = 200.0
    gate_error_quiet: float = 0.4
    gate_error_busy: float = 0.4

    def __post_init__(self):
        vals = (self.base_ticks, self.hop_ticks, self.noise_sigma_quiet, self.noise_sigma_busy)
        if any(v < 0 for v in vals):
            raise ConfigurationError("latency parameters must be non-negative")
        if self.noise_sigma_busy < self.noise_sigma_quiet:
            raise ConfigurationError("busy sigma must be at least the quiet sigma")
        if self.scenario not in (QUIET, BUSY):
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        for v in (self.common_share_quiet, self.common_share_busy, self.spike_prob,
                  self.gate_error_quiet, self.gate_error_busy):
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError("shares and probabilities must lie in [0, 1]")
        if self.tails not in ("gaussian", "student_t") or self.t_dof <= 2:
            raise ConfigurationError("tails must be gaussian or student_t with dof > 2")

    @property
    def sigma(self) -> float:
        return self.noise_sigma_busy if self.scenario == BUSY else self.noise_sigma_quiet

    @property
    def gate_error(self) -> float:
        return self.gate_error_busy if self.scenario == BUSY else self.gate_error_quiet

    @property
    def common_share(self) -> float:
        return self.common_share_busy if self.scenario == BUSY else self.common_share_quiet

    def with_(self, **kw) -> "LatencyModel":
        return replace(self, **kw)

    def noiseless(self) -> "LatencyModel":
        return replace(self, noise_sigma_quiet=0.0, noise_sigma_busy=0.0, spike_prob=0.0,
                       gate_error_quiet=0.0, gate_error_busy=0.0)


@dataclass(frozen=True)
class GateConfig:
    delta_ticks: float = 0.0
    delay_chain_unit: float = 1.0

    def __post_init__(self):
        if self.delta_ticks < 0 or self.delay_chain_unit <= 0:
            raise ConfigurationError("delta_ticks >= 0 and delay_chain_unit > 0 required")


@dataclass
class OracleCounters:
    latency_samples: int = 0
    rdtscp_calls: int = 0
    delay_gate_calls: int = 0
    comparator_calls: int = 0


class TimingOracle:
    """Seeded source of simulated timing observations for one core."""

    def __init__(self, model: LatencyModel = LatencyModel(), topology: RingTopology | None = None,
                 gate: GateConfig = GateConfig(), core: int = 0, seed: int = 0, slice_count: int = 4):
        self.model = model
        self.topology = topology or RingTopology.tiles(slice_count)
        self.gate = gate
        if not 0 <= core < self.topology.core_count:
            raise ConfigurationError(f"core {core} not on the ring")
        self.core = core
        self.rng = np.random.default_rng(seed)
        self.counters = OracleCounters()
        self._means = np.array([model.base_ticks + model.hop_ticks * self.topology.distance(core, s)
                                for s in range(self.topology.slice_count)])

    @property
    def slice_count(self) -> int:
        return self.topology.slice_count

    def mean_latency(self, slice_) -> float | np.ndarray:
        return self._means[slice_]

    def _noise(self, sd: float, size) -> np.ndarray | float:
        if sd == 0:
            return np.zeros(size) if size is not None else 0.0
        if self.model.tails == "student_t":
            nu = self.model.t_dof
            return self.rng.standard_t(nu, size) * sd * np.sqrt((nu - 2) / nu)
        return self.rng.normal(0.0, sd, size)

    def drift(self, size=None):
        return self._noise(self.model.sigma * np.sqrt(self.model.common_share), size)

    def jitter(self, size=None):
        return self._noise(self.model.sigma * np.sqrt(1 - self.model.common_share), size)

    def _spikes(self, size):
        if not self.model.spike_prob:
            return 0.0
        hit = self.rng.random(size) < self.model.spike_prob
        return hit * self.model.spike_ticks

    def _latency(self, slice_, size, drift):
        return self._means[slice_] + drift + self.jitter(size) + self._spikes(size)

    def sample_latency(self, slice_, size=None):
        """Independent latency samples (each its own burst)."""
        self.counters.latency_samples += 1 if size is None else int(np.prod(size))
        return self._latency(slice_, size, self.drift(size))

    def rdtscp_measure(self, slice_, repeats: int = 10, cutoff: float = 100.0, max_resample: int = 100):
        """Mean of ``repeats`` back-to-back timed loads, re-taking any above ``cutoff``."""
        if repeats < 1:
            raise ValueError("repeats must be >= 1")
        self.counters.rdtscp_calls += 1
        d = self.drift()
        vals = np.asarray(self._latency(slice_, repeats, d), dtype=float)
        for _ in range(max_resample):
            bad = vals > cutoff
            if not bad.any():
                break
            vals[bad] = self._latency(slice_, int(bad.sum()), d)
        return float(vals.mean())

    def _gate_errors(self, out, size):
        """With probability ``gate_error`` a gate yields a coin flip instead of the race result."""
        e = self.model.gate_error
        if not e:
            return out
        bad = self.rng.random(size) < e
        return np.where(bad, self.rng.random(size) < 0.5, out)

    def fixed_delay_gate(self, slice_, chain_len, size=None, drift=None):
        """True when the load loses the race against a delay chain of ``chain_len`` units."""
        if np.any(np.asarray(chain_len) < 0):
            raise ValueError("chain_len must be >= 0")
        self.counters.delay_gate_calls += 1 if size is None else int(np.prod(size))
        d = self.drift(size) if drift is None else drift
        lat = self._latency(slice_, size, d)
        return self._gate_errors(lat > np.asarray(chain_len) * self.gate.delay_chain_unit, size)

    def comparator_gate(self, input_slice, compare_slice, size=None):
        """True when the input access is slower than the compare access (ties lose)."""
        n = 1 if size is None else int(np.prod(size))
        self.counters.comparator_calls += n
        d = self.drift(size)
        a = self._latency(input_slice, size, d)
        b = self._latency(compare_slice, size, d)
        return self._gate_errors(a > b + self.gate.delta_ticks, np.shape(a))
