"""Event-scheduling simulation of G/G/R-JSQ-PS systems.

Processor sharing is realised by rescheduling: whenever the number of
customers in service at a server changes, every customer in service there is
credited the service received since the last change and its end-of-service
event is moved to ``t + (s - d) * x`` for the new occupancy ``x``.
"""

from __future__ import annotations

import heapq
import itertools
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import JsqpsError, ParameterError, SojournCdf, SystemConfig, TimeGrid, empirical_cdf

END_SERVICE = 0
ARRIVAL = 1
BATCH = 8192
SERVICE_TOLERANCE = 1e-9


class SimulationError(JsqpsError):
    """Internal inconsistency in the event loop."""


@dataclass(frozen=True)
class ServiceDistribution:
    kind: str
    a: float
    b: float = 0.0

    def __post_init__(self):
        if self.kind == "exponential":
            ok = self.a > 0
        elif self.kind == "uniform":
            ok = 0 <= self.a < self.b
        elif self.kind == "deterministic":
            ok = self.a > 0
        else:
            raise ParameterError(f"unknown distribution kind {self.kind!r}")
        if not ok:
            raise ParameterError(f"invalid parameters for {self.kind} distribution: {self.a}, {self.b}")

    @classmethod
    def exponential(cls, rate: float) -> "ServiceDistribution":
        return cls("exponential", rate)

    @classmethod
    def uniform(cls, low: float, high: float) -> "ServiceDistribution":
        return cls("uniform", low, high)

    @classmethod
    def deterministic(cls, value: float) -> "ServiceDistribution":
        return cls("deterministic", value)

    @classmethod
    def preset(cls, name: str, mu: float) -> "ServiceDistribution":
        """Exponential, uniform or deterministic law with common mean 1/mu."""
        if name in ("exp", "exponential"):
            return cls.exponential(mu)
        if name in ("uniform", "unif"):
            return cls.uniform(0.5 / mu, 1.5 / mu)
        if name in ("det", "deterministic"):
            return cls.deterministic(1.0 / mu)
        raise ParameterError(f"unknown service preset {name!r}")

    @property
    def mean(self) -> float:
        if self.kind == "exponential":
            return 1.0 / self.a
        if self.kind == "uniform":
            return 0.5 * (self.a + self.b)
        return self.a

    def sample_batch(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.a, size)
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, size)
        return np.full(size, self.a)

    def __str__(self) -> str:
        if self.kind == "exponential":
            return f"exponential({self.a:g})"
        if self.kind == "uniform":
            return f"uniform({self.a:g},{self.b:g})"
        return f"deterministic({self.a:g})"


def sample_service(dist: ServiceDistribution, rng: np.random.Generator) -> float:
    return float(dist.sample_batch(rng, 1)[0])


@dataclass(frozen=True)
class PSVariant:
    """``standard``: all share; ``limited``: at most k share, the rest wait FIFO;
    ``capacitated``: FIFO single service up to k present, all share above k."""

    kind: str = "standard"
    k: int = 0

    def __post_init__(self):
        if self.kind not in ("standard", "limited", "capacitated"):
            raise ParameterError(f"unknown processor-sharing variant {self.kind!r}")
        if self.kind != "standard" and self.k < 1:
            raise ParameterError(f"{self.kind} processor sharing needs k >= 1")

    @classmethod
    def parse(cls, text: str) -> "PSVariant":
        kind, _, k = text.partition(":")
        try:
            return cls(kind, int(k) if k else 0)
        except ValueError:
            raise ParameterError(f"bad processor-sharing variant {text!r}")

    def in_service(self, present: int) -> int:
        if self.kind == "standard":
            return present
        if self.kind == "limited":
            return min(present, self.k)
        return present if present > self.k else min(present, 1)

    def __str__(self) -> str:
        return self.kind if self.kind == "standard" else f"{self.kind}:{self.k}"


@dataclass(frozen=True)
class SimulationConfig:
    config: SystemConfig
    service: ServiceDistribution | None = None
    q_max: float = 160000.0
    q_warmup: float = 8000.0
    trials: int = 4
    seed: int = 0
    ps_variant: PSVariant = PSVariant()
    interarrival: ServiceDistribution | None = None

    def __post_init__(self):
        if self.service is None:
            object.__setattr__(self, "service", ServiceDistribution.exponential(self.config.mu))
        if self.interarrival is None:
            object.__setattr__(self, "interarrival", ServiceDistribution.exponential(self.config.lam))
        if not 0 <= self.q_warmup < self.q_max:
            raise ParameterError(f"need 0 <= warm-up < q_max, got {self.q_warmup}, {self.q_max}")
        if self.trials < 1:
            raise ParameterError("trials must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must be a 64-bit unsigned integer")


class Event:
    __slots__ = ("date", "kind", "item", "version")

    def __init__(self, kind: int, item=None):
        self.date = None
        self.kind = kind
        self.item = item
        self.version = 0


class EventCalendar:
    """Pending events ordered by (date, kind, insertion order).

    End-of-service events sort before arrivals at the same date. Rescheduling
    bumps the event's version; heap entries with an old version are skipped.
    """

    def __init__(self):
        self._heap: list = []
        self._counter = itertools.count()
        self._last_date = -math.inf

    def __len__(self) -> int:
        return sum(1 for entry in self._heap if entry[4].version == entry[3] and entry[4].date is not None)

    def schedule(self, event: Event, date: float) -> None:
        event.version += 1
        event.date = date
        heapq.heappush(self._heap, (date, event.kind, next(self._counter), event.version, event))

    def reschedule(self, event: Event, date: float) -> None:
        if event.date is None:
            raise SimulationError("reschedule of an event that is not in the calendar")
        self.schedule(event, date)

    def cancel(self, event: Event) -> None:
        if event.date is None:
            raise SimulationError("cancel of an event that is not in the calendar")
        event.version += 1
        event.date = None

    def pop(self):
        """Remove and return ``(date, event)`` for the earliest live event, or None."""
        heap = self._heap
        while heap:
            date, _, _, version, event = heapq.heappop(heap)
            if version == event.version and event.date is not None:
                if date < self._last_date:
                    raise SimulationError(f"calendar went back in time: {date} < {self._last_date}")
                self._last_date = date
                event.date = None
                return date, event
        return None

    def peek_date(self) -> float | None:
        heap = self._heap
        while heap and (heap[0][3] != heap[0][4].version or heap[0][4].date is None):
            heapq.heappop(heap)
        return heap[0][0] if heap else None


class Customer:
    __slots__ = ("ident", "arrival", "service", "received", "server", "end_event", "departure")

    def __init__(self, ident: int, arrival: float, service: float):
        self.ident = ident
        self.arrival = arrival
        self.service = service
        self.received = 0.0
        self.server = -1
        self.end_event = Event(END_SERVICE, self)
        self.departure = None

    @property
    def scheduled_end(self):
        return self.end_event.date


def jsq_route(server_counts, rng: np.random.Generator) -> int:
    """Index of a least-loaded server, ties broken uniformly at random."""
    return _route(server_counts, rng.random())


def _route(counts, u: float) -> int:
    m = min(counts)
    ties = [i for i, c in enumerate(counts) if c == m]
    if len(ties) == 1:
        return ties[0]
    return ties[int(u * len(ties))]


class _Stream:
    """Buffered draws from a distribution, handed out as Python floats."""

    __slots__ = ("_draw", "_buf", "_pos")

    def __init__(self, draw):
        self._draw = draw
        self._buf = []
        self._pos = 0

    def __call__(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._draw(BATCH).tolist()
            self._pos = 0
        value = self._buf[self._pos]
        self._pos += 1
        return value


@dataclass
class TrialResult:
    samples: np.ndarray
    customers: list = field(default_factory=list, repr=False)
    events: int = 0
    max_service_error: float = 0.0


def _event_loop(R, variant, next_gap, next_service, next_uniform, q_max, warmup, keep_records=False, on_change=None):
    """Run one trial; arrivals stop at ``q_max`` and unfinished customers are dropped."""
    calendar = EventCalendar()
    schedule = calendar.schedule
    queues = [[] for _ in range(R)]
    counts = [0] * R
    serving = [0] * R
    last = [0.0] * R
    in_service = variant.in_service
    samples = []
    records = []
    ident = itertools.count()
    max_err = 0.0
    n_events = 0

    def advance(u, t):
        c = serving[u]
        if c:
            share = (t - last[u]) / c
            q = queues[u]
            for i in range(c):
                q[i].received += share
        last[u] = t

    def rearrange(u, t):
        q = queues[u]
        old = serving[u]
        c = in_service(len(q))
        serving[u] = c
        for i in range(c):
            cust = q[i]
            schedule(cust.end_event, t + (cust.service - cust.received) * c)
        for i in range(c, min(old, len(q))):
            if q[i].end_event.date is not None:
                calendar.cancel(q[i].end_event)
        if on_change is not None:
            on_change(u, t, q, c)

    arrival_event = Event(ARRIVAL)
    t_next = next_gap()
    if t_next <= q_max:
        schedule(arrival_event, t_next)

    while True:
        popped = calendar.pop()
        if popped is None:
            break
        t, event = popped
        n_events += 1
        if event.kind == ARRIVAL:
            cust = Customer(next(ident), t, next_service())
            if R == 1:
                u = 0
            else:
                m = min(counts)
                if counts.count(m) == 1:
                    u = counts.index(m)
                else:
                    ties = [i for i, c in enumerate(counts) if c == m]
                    u = ties[int(next_uniform() * len(ties))]
            cust.server = u
            advance(u, t)
            queues[u].append(cust)
            counts[u] += 1
            rearrange(u, t)
            if keep_records:
                records.append(cust)
            t_next = t + next_gap()
            if t_next <= q_max:
                schedule(arrival_event, t_next)
        else:
            cust = event.item
            if t > q_max:
                break
            u = cust.server
            advance(u, t)
            err = abs(cust.received - cust.service)
            if err > max_err:
                max_err = err
                if err > SERVICE_TOLERANCE * max(1.0, cust.service):
                    raise SimulationError(
                        f"customer {cust.ident} leaves with {cust.received!r} of {cust.service!r} service"
                    )
            queues[u].remove(cust)
            counts[u] -= 1
            cust.departure = t
            if cust.arrival >= warmup:
                samples.append(t - cust.arrival)
            rearrange(u, t)

    return TrialResult(np.asarray(samples, dtype=float), records, n_events, max_err)


def trial_generators(seed: int, trials: int) -> list[np.random.Generator]:
    """Independent PCG64 substreams spawned from one master seed."""
    return [np.random.Generator(np.random.PCG64(ss)) for ss in np.random.SeedSequence(seed).spawn(trials)]


def run_trial(sim: SimulationConfig, rng: np.random.Generator) -> TrialResult:
    # separate child streams keep arrival, service and routing draws decoupled
    arr_rng, svc_rng, tie_rng = (np.random.Generator(np.random.PCG64(s)) for s in rng.bit_generator.seed_seq.spawn(3))
    return _event_loop(
        sim.config.R,
        sim.ps_variant,
        _Stream(lambda n: sim.interarrival.sample_batch(arr_rng, n)),
        _Stream(lambda n: sim.service.sample_batch(svc_rng, n)),
        _Stream(tie_rng.random),
        sim.q_max,
        sim.q_warmup,
    )


def _trial_worker(args):
    sim, k = args
    return run_trial(sim, trial_generators(sim.seed, sim.trials)[k]).samples


def run_simulation(sim: SimulationConfig, workers: int = 1) -> list[np.ndarray]:
    """Sojourn-time samples of every trial, in departure order."""
    if workers > 1 and sim.trials > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(workers, sim.trials)) as pool:
            return list(pool.map(_trial_worker, [(sim, k) for k in range(sim.trials)]))
    return [run_trial(sim, rng).samples for rng in trial_generators(sim.seed, sim.trials)]


def simulate_trace(arrivals, services, R: int = 1, ps_variant: PSVariant | str = "standard", tie_breaks=None) -> list[Customer]:
    """Replay scripted arrival dates and service requirements; returns finished customer records."""
    variant = PSVariant.parse(ps_variant) if isinstance(ps_variant, str) else ps_variant
    arrivals = list(arrivals)
    if any(b < a for a, b in zip(arrivals, arrivals[1:])):
        raise ParameterError("scripted arrival dates must be non-decreasing")
    gaps = iter(np.diff([0.0] + arrivals).tolist() + [math.inf])
    svc = iter(list(services))
    ties = iter(tie_breaks if tie_breaks is not None else itertools.repeat(0.0))
    result = _event_loop(R, variant, gaps.__next__, svc.__next__, ties.__next__, sys.float_info.max, 0.0, keep_records=True)
    return result.customers


def aggregate_trials(per_trial, grid: TimeGrid) -> SojournCdf:
    """Pointwise mean of the per-trial empirical CDFs."""
    per_trial = list(per_trial)
    if not per_trial:
        raise ParameterError("no trials to aggregate")
    total = np.zeros(grid.size)
    for k, samples in enumerate(per_trial):
        if len(samples) == 0:
            raise ParameterError(f"trial {k} recorded no sojourn samples")
        total += empirical_cdf(samples, grid).values
    return SojournCdf(grid, total / len(per_trial), "simulation")


def write_samples(prefix, per_trial) -> list[Path]:
    """One file per trial, ``<prefix>.trial<k>.samples``, one sojourn time per line."""
    paths = []
    for k, samples in enumerate(per_trial):
        path = Path(f"{prefix}.trial{k}.samples")
        path.write_text("".join(f"{x:.12g}\n" for x in samples))
        paths.append(path)
    return paths
