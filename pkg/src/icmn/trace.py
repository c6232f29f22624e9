"""Contact traces: parsing, discretization, link statistics and replay.

Two text formats are read and written.

interval-csv
    ``node_a,node_b,t_start,t_end`` with times in seconds.
event-csv
    ``t,node_a,node_b,up|down``.

Blank lines and ``#`` comments are ignored, and a header line is allowed
before the first record. Node names are opaque strings, renumbered densely
in order of first appearance.
"""

from __future__ import annotations

import csv
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .simulate import TemporalGraph, link_id, pair_index, spread_batch


class TraceError(ValueError):
    pass


class TraceParseError(TraceError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ScheduleError(TraceError):
    pass


class TraceWarning(UserWarning):
    pass


FORMATS = {
    "interval": "interval-csv",
    "interval-csv": "interval-csv",
    "event": "event-csv",
    "event-csv": "event-csv",
}


@dataclass(frozen=True)
class Contact:
    u: int
    v: int
    start: float
    end: float

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class ContactTrace:
    node_ids: tuple[str, ...]
    contacts: tuple[Contact, ...]
    duration: float

    @property
    def n(self) -> int:
        return len(self.node_ids)

    def by_pair(self) -> dict[tuple[int, int], list[Contact]]:
        out = defaultdict(list)
        for c in self.contacts:
            out[(c.u, c.v)].append(c)
        return dict(out)


# -- parsing ---------------------------------------------------------------------

def _records(stream):
    """Yield ``(line_number, fields)`` for every non-comment line."""
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, [f.strip() for f in line.split(",")]


def _time(text: str, lineno: int) -> float:
    try:
        t = float(text)
    except ValueError:
        raise TraceParseError(f"not a time value: {text!r}", lineno) from None
    if not math.isfinite(t):
        raise TraceParseError(f"not a finite time: {text!r}", lineno)
    if t < 0:
        raise TraceParseError(f"negative time {t}", lineno)
    return t


def _looks_like_header(fields: Sequence[str], time_cols: Sequence[int]) -> bool:
    if len(fields) != 4:
        return False
    for c in time_cols:
        try:
            float(fields[c])
        except ValueError:
            return True
    return False


class _Ids:
    def __init__(self):
        self.names: list[str] = []
        self.index: dict[str, int] = {}

    def __call__(self, name: str) -> int:
        if name not in self.index:
            self.index[name] = len(self.names)
            self.names.append(name)
        return self.index[name]


def _merge(raw: dict[tuple[int, int], list[tuple[float, float]]]) -> list[Contact]:
    out = []
    for (u, v), spans in raw.items():
        spans.sort()
        cur_s, cur_e = spans[0]
        for s, e in spans[1:]:
            if s <= cur_e:
                cur_e = max(cur_e, e)
            else:
                out.append(Contact(u, v, cur_s, cur_e))
                cur_s, cur_e = s, e
        out.append(Contact(u, v, cur_s, cur_e))
    out.sort(key=lambda c: (c.start, c.u, c.v))
    return out


def parse_contacts(stream, format: str = "interval-csv") -> ContactTrace:
    """Read a contact trace from an iterable of text lines.

    Contacts are stored with ``u < v``; overlapping or touching intervals of
    the same pair are merged. In event-csv, an ``up`` with no matching
    ``down`` is closed at the last event time with a :class:`TraceWarning`.
    """
    fmt = FORMATS.get(format)
    if fmt is None:
        raise TraceError(f"unknown trace format {format!r} (expected interval-csv or event-csv)")
    ids = _Ids()
    raw: dict[tuple[int, int], list[tuple[float, float]]] = defaultdict(list)
    last_time = 0.0
    first = True
    if fmt == "interval-csv":
        for lineno, f in _records(stream):
            if first and _looks_like_header(f, (2, 3)):
                first = False
                continue
            first = False
            if len(f) != 4:
                raise TraceParseError(f"expected 4 fields, got {len(f)}", lineno)
            a, b = f[0], f[1]
            if not a or not b:
                raise TraceParseError("empty node id", lineno)
            if a == b:
                raise TraceParseError(f"self contact of node {a!r}", lineno)
            t0, t1 = _time(f[2], lineno), _time(f[3], lineno)
            if t1 <= t0:
                raise TraceParseError(f"reversed or empty interval ({t0}, {t1})", lineno)
            u, v = ids(a), ids(b)
            raw[(min(u, v), max(u, v))].append((t0, t1))
            last_time = max(last_time, t1)
    else:
        open_at: dict[tuple[int, int], float] = {}
        for lineno, f in _records(stream):
            if first and _looks_like_header(f, (0,)):
                first = False
                continue
            first = False
            if len(f) != 4:
                raise TraceParseError(f"expected 4 fields, got {len(f)}", lineno)
            t = _time(f[0], lineno)
            a, b, kind = f[1], f[2], f[3].lower()
            if not a or not b:
                raise TraceParseError("empty node id", lineno)
            if a == b:
                raise TraceParseError(f"self contact of node {a!r}", lineno)
            if kind not in ("up", "down"):
                raise TraceParseError(f"event must be 'up' or 'down', got {f[3]!r}", lineno)
            u, v = ids(a), ids(b)
            key = (min(u, v), max(u, v))
            last_time = max(last_time, t)
            if kind == "up":
                open_at.setdefault(key, t)
            elif key in open_at:
                t0 = open_at.pop(key)
                if t < t0:
                    raise TraceParseError(f"'down' at {t} precedes its 'up' at {t0}", lineno)
                if t > t0:
                    raw[key].append((t0, t))
            else:
                warnings.warn(f"line {lineno}: 'down' without a preceding 'up' ignored", TraceWarning, stacklevel=2)
        for key, t0 in sorted(open_at.items()):
            warnings.warn(
                f"contact {ids.names[key[0]]}-{ids.names[key[1]]} still up at trace end, closed at {last_time}",
                TraceWarning,
                stacklevel=2,
            )
            if last_time > t0:
                raw[key].append((t0, last_time))
    return ContactTrace(node_ids=tuple(ids.names), contacts=tuple(_merge(raw)), duration=last_time)


def read_trace(path, format: str = "interval-csv") -> ContactTrace:
    with open(path, encoding="utf-8") as fh:
        return parse_contacts(fh, format)


def _num(x: float) -> str:
    return repr(float(x)) if x != int(x) else str(int(x))


# output order is by time then node name, so it survives renumbering on re-read

def emit_intervals(trace: ContactTrace, fh) -> None:
    rows = sorted((c.start, *sorted((trace.node_ids[c.u], trace.node_ids[c.v])), c.end) for c in trace.contacts)
    for t0, a, b, t1 in rows:
        fh.write(f"{a},{b},{_num(t0)},{_num(t1)}\n")


def emit_events(trace: ContactTrace, fh) -> None:
    events = []
    for c in trace.contacts:
        a, b = sorted((trace.node_ids[c.u], trace.node_ids[c.v]))
        events.append((c.start, 1, a, b))
        events.append((c.end, 0, a, b))
    # downs before ups at equal times
    events.sort()
    for t, up, a, b in events:
        fh.write(f"{_num(t)},{a},{b},{'up' if up else 'down'}\n")


# -- graphs <-> traces ------------------------------------------------------------------

def discretize(trace: ContactTrace, tau: float, threshold: float = 0.5) -> TemporalGraph:
    """Snapshot graph with one step per ``tau`` seconds.

    Step ``k`` spans ``[k*tau, (k+1)*tau)``; a link is present at step ``k``
    when a contact of that pair covers at least ``threshold * tau`` of it.
    """
    if not tau > 0:
        raise TraceError(f"tau must be > 0 (got {tau})")
    if not 0 < threshold <= 1:
        raise TraceError(f"threshold must lie in (0, 1] (got {threshold})")
    if trace.n < 2:
        raise TraceError("a trace needs at least two nodes to discretize")
    steps = max(1, math.ceil(trace.duration / tau))
    links = np.zeros((steps, trace.n * (trace.n - 1) // 2), dtype=bool)
    need = threshold * tau * (1.0 - 1e-9)
    for c in trace.contacts:
        col = link_id(trace.n, c.u, c.v)
        for k in range(int(c.start // tau), min(steps, math.ceil(c.end / tau))):
            cover = min(c.end, (k + 1) * tau) - max(c.start, k * tau)
            if cover >= need:
                links[k, col] = True
    return TemporalGraph(n=trace.n, links=links, tau=tau)


def graph_to_trace(g: TemporalGraph, names: Sequence[str] | None = None) -> ContactTrace:
    """Contacts of a snapshot graph: each run of up steps becomes one interval."""
    names = tuple(names) if names is not None else tuple(str(i) for i in range(g.n))
    iu, ju = pair_index(g.n)
    padded = np.zeros((g.steps + 2, g.links.shape[1]), dtype=np.int8)
    padded[1:-1] = g.links
    edges = np.diff(padded, axis=0)
    contacts = []
    for col in np.flatnonzero(g.links.any(axis=0)):
        starts = np.flatnonzero(edges[:, col] == 1)
        ends = np.flatnonzero(edges[:, col] == -1)
        for s, e in zip(starts, ends):
            contacts.append(Contact(int(iu[col]), int(ju[col]), float(s * g.tau), float(e * g.tau)))
    contacts.sort(key=lambda c: (c.start, c.u, c.v))
    return ContactTrace(node_ids=names, contacts=tuple(contacts), duration=float(g.steps * g.tau))


def dump_events(g: TemporalGraph, fh) -> None:
    """Write a temporal graph as event-csv, nodes named by their index."""
    emit_events(graph_to_trace(g), fh)


# -- statistics -------------------------------------------------------------------

@dataclass(frozen=True)
class LinkStats:
    mean_contact: float
    mean_intercontact: float | None
    lifetime_histogram: dict[int, int]
    contact_lengths: np.ndarray = field(repr=False)
    intercontact_lengths: np.ndarray = field(repr=False)

    @property
    def contacts(self) -> int:
        return len(self.contact_lengths)

    def fraction_shorter_than(self, tau: float) -> float:
        return float(np.count_nonzero(self.contact_lengths < tau)) / len(self.contact_lengths)


def link_stats(trace: ContactTrace) -> LinkStats:
    """Contact and inter-contact statistics over every pair of the trace.

    Inter-contact times are the gaps between consecutive contacts of the
    same pair, so pairs seen once contribute none; the mean is ``None`` if
    no pair was seen twice.
    """
    if not trace.contacts:
        raise TraceError("trace has no contacts")
    lengths = np.array([c.length for c in trace.contacts])
    gaps = []
    for spans in trace.by_pair().values():
        spans = sorted(spans, key=lambda c: c.start)
        gaps.extend(b.start - a.end for a, b in zip(spans, spans[1:]))
    gaps = np.array(gaps, dtype=float)
    buckets, counts = np.unique(np.floor(lengths).astype(np.int64), return_counts=True)
    return LinkStats(
        mean_contact=float(lengths.mean()),
        mean_intercontact=float(gaps.mean()) if len(gaps) else None,
        lifetime_histogram={int(b): int(c) for b, c in zip(buckets, counts)},
        contact_lengths=lengths,
        intercontact_lengths=gaps,
    )


@dataclass(frozen=True)
class ModelEstimate:
    r: float
    lam: float
    r_clamped: bool = False
    lam_clamped: bool = False


def estimate_model(stats: LinkStats, tau: float) -> ModelEstimate:
    """Fit ``(r, lambda)`` by matching mean contact and inter-contact times.

    Values below the discrete-time floor (``r >= 1``, ``lambda >= 1/r``) are
    raised to it with a :class:`TraceWarning`.
    """
    if not tau > 0:
        raise TraceError(f"tau must be > 0 (got {tau})")
    if stats.mean_intercontact is None or not stats.mean_contact > 0:
        raise TraceError("both mean contact and mean inter-contact times are needed")
    r = stats.mean_contact / tau
    lam = stats.mean_intercontact / stats.mean_contact
    r_clamped = r < 1.0
    if r_clamped:
        warnings.warn(f"estimated r = {r:g} < 1, clamped to 1", TraceWarning, stacklevel=2)
        r = 1.0
    lam_clamped = lam < 1.0 / r
    if lam_clamped:
        warnings.warn(f"estimated lambda = {lam:g} < 1/r, clamped to {1.0 / r:g}", TraceWarning, stacklevel=2)
        lam = 1.0 / r
    return ModelEstimate(r=r, lam=lam, r_clamped=r_clamped, lam_clamped=lam_clamped)


def write_stats_csv(stats: LinkStats, tau: float, fh, estimate: ModelEstimate | None = None) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("metric", "value"))
    w.writerow(("contacts", stats.contacts))
    w.writerow(("mean_contact", repr(stats.mean_contact)))
    w.writerow(("mean_intercontact", "" if stats.mean_intercontact is None else repr(stats.mean_intercontact)))
    w.writerow(("tau", repr(float(tau))))
    w.writerow(("fraction_shorter_than_tau", repr(stats.fraction_shorter_than(tau))))
    if estimate is not None:
        w.writerow(("r", repr(estimate.r)))
        w.writerow(("lambda", repr(estimate.lam)))
        w.writerow(("r_clamped", int(estimate.r_clamped)))
        w.writerow(("lambda_clamped", int(estimate.lam_clamped)))


# -- replay -------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplaySchedule:
    """Start steps, and how many source/destination pairs to draw at each.

    When ``pairs`` is given those ordered pairs are used at every start
    instead of a random draw.
    """

    start_times: tuple[int, ...]
    pairs_per_start: int
    rng_seed: int = 0
    pairs: tuple[tuple[int, int], ...] | None = None


def make_schedule(
    g: TemporalGraph,
    d: int,
    start_window: float = 2000.0,
    pairs_per_start: int = 60,
    seed: int = 0,
    spacing: int = 1,
) -> ReplaySchedule:
    """Starts every ``spacing`` steps during the first ``start_window`` seconds.

    Starts whose ``d``-step window would run past the end of the graph are
    left out.
    """
    if d < 1 or spacing < 1 or pairs_per_start < 1:
        raise ScheduleError("d, spacing and pairs_per_start must be >= 1")
    starts = tuple(
        k for k in range(0, g.steps, spacing)
        if k * g.tau < start_window and k + d <= g.steps
    )
    if not starts:
        raise ScheduleError(f"no start step leaves room for d={d} steps in a {g.steps}-step graph")
    return ReplaySchedule(start_times=starts, pairs_per_start=pairs_per_start, rng_seed=seed)


@dataclass(frozen=True)
class StartResult:
    start_step: int
    attempts: int
    successes: int

    @property
    def ratio(self) -> float:
        return self.successes / self.attempts


@dataclass(frozen=True)
class DeliveryReport:
    alpha: float
    d: int
    attempts: int
    successes: int
    per_start: tuple[StartResult, ...]
    runs: tuple[tuple[int, int, int, int], ...] = field(repr=False)  # (start, src, dst, step or 0)

    @property
    def ratio(self) -> float:
        return self.successes / self.attempts

    @property
    def half_width_95(self) -> float:
        p = self.ratio
        return 1.96 * math.sqrt(p * (1.0 - p) / self.attempts)


def _draw_pairs(g: TemporalGraph, schedule: ReplaySchedule) -> list[np.ndarray]:
    if schedule.pairs is not None:
        fixed = np.array(schedule.pairs, dtype=np.intp).reshape(-1, 2)
        return [fixed] * len(schedule.start_times)
    nodes = g.active_nodes()
    if len(nodes) < 2:
        raise ScheduleError("fewer than two nodes ever have a contact")
    src, dst = np.meshgrid(nodes, nodes, indexing="ij")
    keep = src != dst
    cands = np.stack([src[keep], dst[keep]], axis=1)
    rng = np.random.default_rng(schedule.rng_seed)
    size = min(schedule.pairs_per_start, len(cands))
    return [cands[rng.choice(len(cands), size=size, replace=False)] for _ in schedule.start_times]


def replay_experiment(g: TemporalGraph, schedule: ReplaySchedule, alpha: float, d: int) -> DeliveryReport:
    """Epidemic delivery ratio on a fixed temporal graph.

    Pairs are drawn from ``schedule.rng_seed`` alone, so the same attempts
    are replayed for every ``alpha`` and ``d``.
    """
    if not alpha > 0:
        raise TraceError(f"alpha must be > 0 (got {alpha})")
    if d < 1:
        raise ScheduleError(f"d must be >= 1 (got {d})")
    bad = [s for s in schedule.start_times if s < 0 or s + d > g.steps]
    if bad:
        raise ScheduleError(f"start step {bad[0]} + d={d} runs past the {g.steps}-step graph")
    if not schedule.start_times:
        raise ScheduleError("empty schedule")
    per_start, runs = [], []
    successes = attempts = 0
    for start, pairs in zip(schedule.start_times, _draw_pairs(g, schedule)):
        if np.any(pairs >= g.n) or np.any(pairs[:, 0] == pairs[:, 1]):
            raise ScheduleError(f"invalid pair in schedule at start {start}")
        delivery, _ = spread_batch(g.links[start:start + d], g.n, pairs[:, 0], pairs[:, 1], alpha, d)
        ok = int(np.count_nonzero(delivery))
        per_start.append(StartResult(start, len(pairs), ok))
        runs.extend((start, int(s), int(t), int(k)) for (s, t), k in zip(pairs, delivery))
        successes += ok
        attempts += len(pairs)
    return DeliveryReport(
        alpha=alpha,
        d=d,
        attempts=attempts,
        successes=successes,
        per_start=tuple(per_start),
        runs=tuple(runs),
    )


def max_alpha_for_target(
    g: TemporalGraph,
    schedule: ReplaySchedule,
    target_ratio: float,
    d: int,
    alpha_grid: Sequence[float],
) -> float | None:
    """Largest packet size in ``alpha_grid`` whose replay ratio reaches the target."""
    alpha_grid = list(alpha_grid)
    if not alpha_grid:
        raise TraceError("alpha grid is empty")
    if any(b < a for a, b in zip(alpha_grid, alpha_grid[1:])):
        raise TraceError("alpha grid must be sorted ascending")
    for alpha in reversed(alpha_grid):
        if replay_experiment(g, schedule, alpha, d).ratio >= target_ratio:
            return alpha
    return None


REPLAY_HEADER = ("start_step", "alpha", "d", "attempts", "successes", "ratio")


def write_replay_csv(reports: Iterable[DeliveryReport], fh, per_start: bool = True) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(REPLAY_HEADER)
    for rep in reports:
        if per_start:
            for s in rep.per_start:
                w.writerow((s.start_step, repr(float(rep.alpha)), rep.d, s.attempts, s.successes, repr(s.ratio)))
        w.writerow(("all", repr(float(rep.alpha)), rep.d, rep.attempts, rep.successes, repr(rep.ratio)))
