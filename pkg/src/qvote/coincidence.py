"""Synthetic 16-channel time-tag streams and fourfold coincidence extraction.

Each agent owns four detector channels, one per (basis, outcome) pair. Time
tags are integer picoseconds. Processing has two stages:

1. Veto: a detection is dropped when the same agent has another detection
   within ``window`` (``|dt| <= window``), so each agent contributes at most
   one tag per window span.
2. Fourfold search: scanning survivors in time order, the first tag ``i`` for
   which tags ``i .. i+3`` span at most ``window`` starts a fourfold; those four
   tags are consumed and the scan resumes after them. After the veto, four
   tags within one window necessarily belong to four different agents.

:class:`CoincidencePipeline` does both stages in a single pass over chunks
while holding only the tags of the last two window spans.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .qsim import ContractViolation

PS_PER_S = 10**12

EVENT_DTYPE = np.dtype([("channel", "<u1"), ("t", "<u8")])


def fourfold_dtype(n_agents: int = 4) -> np.dtype:
    return np.dtype([("channel", "u1", (n_agents,)), ("t", "i8", (n_agents,))])


FOURFOLD_DTYPE = fourfold_dtype(4)

MAGIC = "QVSTREAM/1"


@dataclass(frozen=True)
class ChannelMap:
    """Channel -> (agent 1..n, basis 0/1, outcome 0/1)."""

    entries: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        if len(set(self.entries)) != len(self.entries):
            raise ContractViolation("channel map must be a bijection")
        agents = sorted({a for a, _, _ in self.entries})
        if agents != list(range(1, len(agents) + 1)):
            raise ContractViolation(f"agents must be numbered 1..n, got {agents}")
        for a in agents:
            combos = {(b, y) for aa, b, y in self.entries if aa == a}
            if combos != {(0, 0), (0, 1), (1, 0), (1, 1)}:
                raise ContractViolation(f"agent {a} must own all four (basis, outcome) channels")

    @classmethod
    def agent_major(cls, n_agents: int = 4) -> "ChannelMap":
        return cls(tuple((c // 4 + 1, (c % 4) // 2, c % 2) for c in range(4 * n_agents)))

    @property
    def n_agents(self) -> int:
        return len(self.entries) // 4

    @property
    def agent_of(self) -> np.ndarray:
        return np.array([a for a, _, _ in self.entries], dtype=np.int64)

    def channel_for(self, agent: int, basis: int, outcome: int) -> int:
        return self.entries.index((agent, basis, outcome))

    def to_json(self) -> str:
        return json.dumps([list(e) for e in self.entries], separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ChannelMap":
        return cls(tuple(tuple(int(v) for v in e) for e in json.loads(text)))


@dataclass(frozen=True)
class StreamConfig:
    pulse_rate_hz: float = 76e6
    fourfold_rate_hz: float = 0.3
    dark_rate_hz: float = 300.0
    jitter_ps: float = 50.0
    window_ps: int = 1000
    duration_s: float = 10.0

    def __post_init__(self):
        if min(self.pulse_rate_hz, self.fourfold_rate_hz, self.dark_rate_hz, self.jitter_ps, self.duration_s) < 0:
            raise ContractViolation("rates, jitter and duration must be >= 0")
        if self.window_ps <= 0:
            raise ContractViolation("window must be > 0")


@dataclass
class GeneratedStream:
    events: np.ndarray
    truth: np.ndarray
    channel_map: ChannelMap
    duration_ps: int


def sort_events(ch: np.ndarray, t: np.ndarray) -> np.ndarray:
    order = np.lexsort((ch, t))
    ev = np.empty(order.size, dtype=EVENT_DTYPE)
    ev["channel"] = ch[order]
    ev["t"] = t[order]
    return ev


def generate_stream(
    config: StreamConfig,
    planted: Sequence[Sequence[int]] | None = None,
    seed: int = 0,
    channel_map: ChannelMap | None = None,
) -> GeneratedStream:
    """Synthesize a sorted tag stream with planted fourfolds and dark counts.

    ``planted`` lists, per fourfold, the channel fired by each agent (in agent
    order). When omitted, fourfolds arrive as a Poisson process at
    ``fourfold_rate_hz`` with uniformly random channels. Planted fourfolds sit
    on the pump pulse grid with a dead time of 20 windows between them, so
    they never overlap each other.
    """
    cmap = channel_map or ChannelMap.agent_major()
    n_agents = cmap.n_agents
    rng = np.random.default_rng(seed)
    duration_ps = int(round(config.duration_s * PS_PER_S))
    period_ps = PS_PER_S / config.pulse_rate_hz if config.pulse_rate_hz > 0 else 1.0
    dead = 20 * config.window_ps

    if planted is None:
        count = rng.poisson(config.fourfold_rate_hz * config.duration_s)
        choice = rng.integers(0, 4, size=(count, n_agents))
        chans = np.array([[cmap.channel_for(a + 1, c // 2, c % 2) for a, c in enumerate(row)] for row in choice])
        chans = chans.reshape(count, n_agents)
    else:
        chans = np.asarray(planted, dtype=np.int64).reshape(-1, n_agents)
        count = chans.shape[0]
        agents = cmap.agent_of[chans]
        if count and not (agents == np.arange(1, n_agents + 1)).all():
            raise ContractViolation("each planted fourfold must list one channel per agent, in agent order")
    if count:
        mean_gap = PS_PER_S / config.fourfold_rate_hz if config.fourfold_rate_hz > 0 else duration_ps / (count + 1)
        gaps = rng.exponential(mean_gap, size=count) + dead
        centers = np.cumsum(gaps)
        centers = np.round(np.round(centers / period_ps) * period_ps).astype(np.int64)
        duration_ps = max(duration_ps, int(centers[-1]) + dead)
        jitter = np.rint(rng.normal(0.0, config.jitter_ps, size=(count, n_agents))).astype(np.int64)
        times = np.maximum(centers[:, None] + jitter, 0)
    else:
        times = np.zeros((0, n_agents), dtype=np.int64)

    n_ch = len(cmap.entries)
    dark_counts = rng.poisson(config.dark_rate_hz * duration_ps / PS_PER_S, size=n_ch)
    dark_t = rng.integers(0, max(duration_ps, 1), size=int(dark_counts.sum()), dtype=np.int64)
    dark_ch = np.repeat(np.arange(n_ch), dark_counts)

    ev = sort_events(
        np.concatenate([chans.reshape(-1), dark_ch]).astype(np.uint8),
        np.concatenate([times.reshape(-1), dark_t]),
    )
    truth = np.empty(count, dtype=fourfold_dtype(n_agents))
    truth["channel"] = chans
    truth["t"] = times
    return GeneratedStream(ev, truth, cmap, duration_ps)


def _veto_mask(t: np.ndarray, agent: np.ndarray, window: int) -> np.ndarray:
    """True for tags that share an agent with another tag within ``window``."""
    order = np.argsort(agent, kind="stable")
    ta, aa = t[order], agent[order]
    close = (aa[1:] == aa[:-1]) & (np.diff(ta) <= window)
    v = np.zeros(t.size, dtype=bool)
    v[1:] |= close
    v[:-1] |= close
    out = np.empty_like(v)
    out[order] = v
    return out


class CoincidencePipeline:
    """Streaming veto + fourfold search.

    Feed time-sorted chunks with :meth:`push`; call :meth:`flush` at the end.
    Output does not depend on how the stream is chunked.
    """

    def __init__(self, window: int, channel_map: ChannelMap | None = None):
        if window <= 0:
            raise ContractViolation("window must be > 0")
        self.window = int(window)
        self.cmap = channel_map or ChannelMap.agent_major()
        self.n_agents = self.cmap.n_agents
        self._agent_of = self.cmap.agent_of
        self.dtype = fourfold_dtype(self.n_agents)
        self._t = np.empty(0, dtype=np.int64)
        self._ch = np.empty(0, dtype=np.uint8)
        self._n_done = 0
        self._st = np.empty(0, dtype=np.int64)
        self._sch = np.empty(0, dtype=np.uint8)
        self._last_t = None
        self.peak_buffer = 0
        self.vetoed = 0
        self.survivors = 0

    def push(self, events: np.ndarray) -> np.ndarray:
        if events.size == 0:
            return np.empty(0, dtype=self.dtype)
        t = events["t"].astype(np.int64)
        if self._last_t is not None and t[0] < self._last_t:
            raise ContractViolation("chunks must arrive in time order")
        self._last_t = int(t[-1])
        self._t = np.concatenate([self._t, t])
        self._ch = np.concatenate([self._ch, events["channel"]])
        return self._advance(cutoff=int(self._t[-1]) - self.window)

    def flush(self) -> np.ndarray:
        return self._advance(cutoff=None)

    def _advance(self, cutoff: int | None) -> np.ndarray:
        T, C, W = self._t, self._ch, self.window
        self.peak_buffer = max(self.peak_buffer, T.size + self._st.size)
        # tags strictly before the cutoff cannot gain a same-agent neighbour from future chunks
        k = T.size if cutoff is None else int(np.searchsorted(T, cutoff, side="left"))
        if k > self._n_done:
            veto = _veto_mask(T, self._agent_of[C], W)
            new = slice(self._n_done, k)
            keep = ~veto[new]
            self.vetoed += int((~keep).sum())
            self._st = np.concatenate([self._st, T[new][keep]])
            self._sch = np.concatenate([self._sch, C[new][keep]])
            self.survivors += int(keep.sum())
        if k < T.size:
            j = int(np.searchsorted(T, T[k] - W, side="left"))
        else:
            j = max(0, int(np.searchsorted(T, T[-1] - W, side="left"))) if T.size else 0
        self._t, self._ch = T[j:], C[j:]
        self._n_done = k - j
        return self._scan(cutoff)

    def _scan(self, cutoff: int | None) -> np.ndarray:
        st, sch, W, n = self._st, self._sch, self.window, self.n_agents
        if cutoff is None:
            ready = st.size
        else:
            ready = int(np.searchsorted(st, cutoff - W, side="left"))
        if ready == 0:
            return np.empty(0, dtype=self.dtype)
        last = min(ready, st.size - n + 1)
        found = []
        nxt = 0
        if last > 0:
            cand = np.flatnonzero(st[n - 1 : n - 1 + last] - st[:last] <= W)
            for c in cand:
                if c < nxt:
                    continue
                found.append(c)
                nxt = c + n
        out = np.empty(len(found), dtype=self.dtype)
        if found:
            idx = np.asarray(found)[:, None] + np.arange(n)
            ch, tt = sch[idx], st[idx]
            order = np.argsort(self._agent_of[ch], axis=1)
            out["channel"] = np.take_along_axis(ch, order, axis=1)
            out["t"] = np.take_along_axis(tt, order, axis=1)
        drop = max(ready, nxt)
        self._st, self._sch = st[drop:], sch[drop:]
        return out


def iter_chunks(events: np.ndarray, chunk: int) -> Iterator[np.ndarray]:
    for s in range(0, events.size, chunk):
        yield events[s : s + chunk]


def process_stream(
    chunks: Iterable[np.ndarray], window: int, channel_map: ChannelMap | None = None
) -> tuple[np.ndarray, CoincidencePipeline]:
    pipe = CoincidencePipeline(window, channel_map)
    parts = [pipe.push(c) for c in chunks]
    parts.append(pipe.flush())
    return np.concatenate(parts), pipe


def veto_filter(events: np.ndarray, window: int, channel_map: ChannelMap | None = None) -> np.ndarray:
    cmap = channel_map or ChannelMap.agent_major()
    veto = _veto_mask(events["t"].astype(np.int64), cmap.agent_of[events["channel"]], int(window))
    return events[~veto]


def find_fourfolds(
    events: np.ndarray, window: int, channel_map: ChannelMap | None = None, chunk: int = 1 << 20
) -> np.ndarray:
    """Veto then fourfold search over a whole in-memory stream."""
    return process_stream(iter_chunks(events, chunk), window, channel_map)[0]


# ---------------------------------------------------------------------------
# quadratic references


def brute_force_veto(events: np.ndarray, window: int, channel_map: ChannelMap | None = None) -> np.ndarray:
    cmap = channel_map or ChannelMap.agent_major()
    t = events["t"].astype(np.int64)
    agent = cmap.agent_of[events["channel"]]
    keep = np.ones(t.size, dtype=bool)
    for i in range(t.size):
        same = (agent == agent[i]) & (np.abs(t - t[i]) <= window)
        keep[i] = same.sum() == 1
    return events[keep]


def brute_force_fourfolds(events: np.ndarray, window: int, channel_map: ChannelMap | None = None) -> np.ndarray:
    cmap = channel_map or ChannelMap.agent_major()
    ev = brute_force_veto(events, window, cmap)
    t = ev["t"].astype(np.int64)
    agent = cmap.agent_of[ev["channel"]]
    n = cmap.n_agents
    used = np.zeros(t.size, dtype=bool)
    rows = []
    for i in range(t.size):
        if used[i]:
            continue
        idx = np.arange(t.size)
        members = np.flatnonzero((idx >= i) & (t <= t[i] + window) & ~used)
        if members.size == n and sorted(agent[members]) == list(range(1, n + 1)):
            used[members] = True
            members = members[np.argsort(agent[members])]
            rows.append((ev["channel"][members], t[members]))
    out = np.empty(len(rows), dtype=fourfold_dtype(n))
    for r, (c, tt) in enumerate(rows):
        out[r]["channel"] = c
        out[r]["t"] = tt
    return out


def accidental_fourfold_rate(dark_rate_hz: float, window_ps: int, n_agents: int = 4, channels_per_agent: int = 4) -> float:
    """Expected rate (1/s) of dark-count-only fourfolds surviving the veto.

    With per-agent Poisson rate ``R`` and window ``W``: an anchor tag (rate
    ``n R``) needs exactly one tag from each other agent in the following
    ``W`` and every one of the ``n`` tags must be isolated within ``+-W`` of
    its own agent's stream, giving ``n R (R W)^{n-1} exp(-2 n R W)``.
    """
    R = dark_rate_hz * channels_per_agent
    W = window_ps / PS_PER_S
    return n_agents * R * (R * W) ** (n_agents - 1) * math.exp(-2 * n_agents * R * W)


# ---------------------------------------------------------------------------
# file format: one text header line, then packed little-endian (u8 channel, u64 t) records


def write_stream(path, events: np.ndarray, channel_map: ChannelMap) -> None:
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} channel_map={channel_map.to_json()}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(events, dtype=EVENT_DTYPE).tobytes())


def _read_header(fh) -> ChannelMap:
    line = fh.readline().decode("ascii").rstrip("\n")
    magic, _, rest = line.partition(" ")
    if magic != MAGIC or not rest.startswith("channel_map="):
        raise ValueError(f"not a {MAGIC} stream file")
    return ChannelMap.from_json(rest[len("channel_map=") :])


def read_stream(path) -> tuple[np.ndarray, ChannelMap]:
    with open(path, "rb") as fh:
        cmap = _read_header(fh)
        data = fh.read()
    return np.frombuffer(data, dtype=EVENT_DTYPE).copy(), cmap


def iter_stream_file(path, chunk: int = 1 << 20) -> tuple[ChannelMap, Iterator[np.ndarray]]:
    fh = open(path, "rb")
    cmap = _read_header(fh)

    def gen():
        with fh:
            while True:
                buf = fh.read(chunk * EVENT_DTYPE.itemsize)
                if not buf:
                    return
                yield np.frombuffer(buf, dtype=EVENT_DTYPE)

    return cmap, gen()


def fourfolds_to_rounds(fourfolds: np.ndarray, channel_map: ChannelMap) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Per fourfold, (bases, outcomes) in agent order."""
    ent = channel_map.entries
    out = []
    for row in fourfolds["channel"]:
        bases = tuple(ent[c][1] for c in row)
        outcomes = tuple(ent[c][2] for c in row)
        out.append((bases, outcomes))
    return out


def rounds_to_channels(rounds: Iterable[tuple[Sequence[int], Sequence[int]]], channel_map: ChannelMap) -> np.ndarray:
    rows = [
        [channel_map.channel_for(a, int(b), int(y)) for a, (b, y) in enumerate(zip(bases, outcomes), start=1)]
        for bases, outcomes in rounds
    ]
    return np.asarray(rows, dtype=np.int64).reshape(-1, channel_map.n_agents)
