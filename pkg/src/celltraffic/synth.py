"""Seeded synthetic cellular traffic.

Each application is an on/off modulated Poisson source: ON and OFF period
lengths are exponential, and while ON the uplink and downlink packet
arrivals are independent Poisson processes. Profiles live in the shipped
``data/profiles.json``.
"""

from __future__ import annotations

import enum
import io
import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .ingest import DEFAULT_TAU, PROTOCOLS, Direction, Trace

SIZE_MIN, SIZE_MAX = 40, 1500
SECONDS_PER_DAY = 86400.0


class App(str, enum.Enum):
    Surfing = "Surfing"
    VideoCall = "VideoCall"
    VoiceCall = "VoiceCall"
    Streaming = "Streaming"
    Background = "Background"


# classification targets; Background is excluded by default
CLASSIFICATION_APPS = (App.Surfing, App.VideoCall, App.VoiceCall, App.Streaming)


@dataclass(frozen=True)
class AppProfile:
    app: App
    ul_rate: float
    dl_rate: float
    on_mean: float
    off_mean: float
    size_mean: float
    size_cv: float
    protocol_mix: dict

    def __post_init__(self):
        object.__setattr__(self, "app", App(self.app))
        if self.ul_rate <= 0 or self.dl_rate <= 0:
            raise ValueError("ON-state rates must be > 0")
        if self.on_mean <= 0 or self.off_mean < 0:
            raise ValueError("on_mean must be > 0 and off_mean >= 0")
        if self.size_mean <= 0 or self.size_cv <= 0:
            raise ValueError("size distribution parameters must be > 0")
        unknown = set(self.protocol_mix) - set(PROTOCOLS)
        if unknown:
            raise ValueError(f"unknown protocols in mix: {sorted(unknown)}")
        probs = self.protocol_probabilities
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("protocol_mix must be a probability map summing to 1")

    @property
    def duty_cycle(self) -> float:
        return self.on_mean / (self.on_mean + self.off_mean)

    @property
    def protocol_probabilities(self) -> np.ndarray:
        return np.array([float(self.protocol_mix.get(p, 0.0)) for p in PROTOCOLS])


def load_profiles(path=None) -> dict[str, AppProfile]:
    if path is None:
        text = resources.files("celltraffic").joinpath("data/profiles.json").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    raw = json.loads(text)
    return {
        name: AppProfile(app=name, **params)
        for name, params in raw.items()
        if not name.startswith("_")
    }


def _as_seed(seed):
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    raise TypeError(f"seed must be an integer, got {type(seed).__name__}")


def _on_periods(profile, duration, rng):
    """Sample ON periods ``[a, b)`` of the two-state process on ``[0, duration)``."""
    if profile.off_mean == 0:
        return np.array([0.0]), np.array([duration])
    on = rng.random() < profile.duty_cycle
    starts, ends = [], []
    t = 0.0
    # draw periods in blocks; each block alternates on/off starting from `on`
    block = max(16, int(2 * duration / (profile.on_mean + profile.off_mean)) + 16)
    while t < duration:
        on_d = rng.exponential(profile.on_mean, size=block)
        off_d = rng.exponential(profile.off_mean, size=block)
        for k in range(block):
            if on:
                a, t = t, t + on_d[k]
                starts.append(a)
                ends.append(min(t, duration))
                t += off_d[k]
            else:
                t += off_d[k]
                a, t = t, t + on_d[k]
                if a < duration:
                    starts.append(a)
                    ends.append(min(t, duration))
            if t >= duration:
                break
    return np.asarray(starts), np.asarray(ends)


def _poisson_times(starts, ends, rate, rng):
    widths = ends - starts
    counts = rng.poisson(rate * widths)
    base = np.repeat(starts, counts)
    span = np.repeat(widths, counts)
    return base + span * rng.random(base.size)


def generate(profile: AppProfile, duration: float, seed: int) -> Trace:
    """Generate ``duration`` seconds of traffic for one application."""
    if not duration > 0:
        raise ValueError(f"duration must be > 0, got {duration}")
    rng = np.random.default_rng(_as_seed(seed))
    starts, ends = _on_periods(profile, float(duration), rng)
    ul_t = _poisson_times(starts, ends, profile.ul_rate, rng)
    dl_t = _poisson_times(starts, ends, profile.dl_rate, rng)
    ts = np.concatenate([ul_t, dl_t])
    direction = np.concatenate([
        np.full(ul_t.size, Direction.UL, dtype=np.int8),
        np.full(dl_t.size, Direction.DL, dtype=np.int8),
    ])
    n = ts.size
    shape = 1.0 / profile.size_cv**2
    sizes = rng.gamma(shape, profile.size_mean / shape, size=n)
    sizes = np.clip(np.rint(sizes), SIZE_MIN, SIZE_MAX).astype(np.int64)
    protos = rng.choice(len(PROTOCOLS), size=n, p=profile.protocol_probabilities)
    ts = np.minimum(ts, np.nextafter(float(duration), 0.0))
    order = np.argsort(ts, kind="stable")
    return Trace(ts[order], direction[order], sizes[order], protos[order], presorted=True)


def _check_schedule(schedule):
    segs = sorted(
        ((float(s), float(e), i) for i, (_, s, e) in enumerate(schedule)),
        key=lambda x: (x[0], x[1]),
    )
    for s, e, _ in segs:
        if not (s >= 0 and e > s):
            raise ValueError(f"bad segment [{s}, {e})")
    for (s0, e0, _), (s1, _, _) in zip(segs, segs[1:]):
        if s1 < e0:
            raise ValueError(f"overlapping segments at t={s1}")


def interval_labels(schedule, tau=DEFAULT_TAU):
    """Label each interval touched by the schedule with its majority-time app.

    Ties go to the segment listed first. Intervals not covered by any segment
    are omitted.
    """
    best = {}
    for order, (profile, start, end) in enumerate(schedule):
        app = profile.app if isinstance(profile, AppProfile) else App(profile)
        first = math.floor(start / tau)
        last = math.ceil(end / tau)
        for k in range(first, last):
            overlap = min(end, (k + 1) * tau) - max(start, k * tau)
            if overlap <= 0:
                continue
            cur = best.get(k)
            if cur is None or overlap > cur[0] or (overlap == cur[0] and order < cur[1]):
                best[k] = (overlap, order, app)
    return [(k, best[k][2].value) for k in sorted(best)]


def generate_mixture(schedule, seed: int, tau: float = DEFAULT_TAU):
    """Generate a multi-app trace from ``[(profile, start_s, end_s), ...]``.

    Returns ``(trace, labels)`` where labels is a list of
    ``(interval_index, app_name)`` at granularity ``tau``.
    """
    _check_schedule(schedule)
    children = np.random.SeedSequence(_as_seed(seed)).spawn(len(schedule))
    parts = []
    for (profile, start, end), child in zip(schedule, children):
        seg = generate(profile, end - start, int(child.generate_state(1)[0]))
        ts = np.minimum(seg.timestamp + start, np.nextafter(float(end), start))
        parts.append(Trace(ts, seg.direction, seg.length, seg.protocol, presorted=True))
    return Trace.concatenate(parts), interval_labels(schedule, tau)


def emit_labels(labels, sink=None):
    text = "".join(f"{k},{app}\n" for k, app in labels)
    if sink is None:
        return text
    sink.write(text)
    return None


def parse_labels(source):
    if isinstance(source, str):
        source = io.StringIO(source)
    out = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line:
            continue
        idx, _, app = line.partition(",")
        try:
            out.append((int(idx), App(app.strip()).value))
        except ValueError:
            raise ValueError(f"line {lineno}: bad label row {line!r}") from None
    return out


# Diurnal usage model of the standard bursty trace. Weights pick the next
# daytime session; durations are exponential means in seconds.
_DAY_START = 7 * 3600.0
_SESSION_WEIGHTS = {
    App.Surfing: 0.35, App.Streaming: 0.25, App.VoiceCall: 0.07,
    App.VideoCall: 0.05, App.Background: 0.28,
}
_SESSION_MEAN_S = {
    App.Surfing: 900.0, App.Streaming: 1800.0, App.VoiceCall: 480.0,
    App.VideoCall: 900.0, App.Background: 1200.0,
}
_MIN_SESSION_S = 60.0


def standard_schedule(days: float, seed: int, profiles=None):
    """Diurnal single-user schedule: background at night, mixed sessions by day."""
    if not days > 0:
        raise ValueError("days must be > 0")
    profiles = profiles or load_profiles()
    rng = np.random.default_rng(_as_seed(seed))
    apps = list(_SESSION_WEIGHTS)
    weights = np.array([_SESSION_WEIGHTS[a] for a in apps])
    total = days * SECONDS_PER_DAY
    schedule = []
    day = 0
    while day * SECONDS_PER_DAY < total:
        d0 = day * SECONDS_PER_DAY
        d1 = min(d0 + SECONDS_PER_DAY, total)
        night_end = min(d0 + _DAY_START, d1)
        schedule.append((profiles[App.Background.value], d0, night_end))
        t = night_end
        while t < d1:
            app = apps[rng.choice(len(apps), p=weights)]
            length = max(_MIN_SESSION_S, rng.exponential(_SESSION_MEAN_S[app]))
            end = min(t + length, d1)
            schedule.append((profiles[app.value], t, end))
            t = end
        day += 1
    return schedule


def standard_trace(days: float = 6.0, seed: int = 0, tau: float = DEFAULT_TAU):
    """The standard bursty trace used by the benchmarks: ``(trace, labels)``."""
    return generate_mixture(standard_schedule(days, seed), seed, tau)


def classification_schedule(hours_per_app: float = 6.0, seed: int = 0,
                            apps=CLASSIFICATION_APPS, segment_s=(600.0, 2400.0),
                            profiles=None):
    """Back-to-back labeled sessions giving each app ``hours_per_app`` hours.

    Session lengths are uniform in ``segment_s`` and the app order is shuffled.
    """
    profiles = profiles or load_profiles()
    rng = np.random.default_rng(_as_seed(seed))
    budget = {App(a): hours_per_app * 3600.0 for a in apps}
    pieces = []
    for app in budget:
        left = budget[app]
        while left > 0:
            length = min(left, rng.uniform(*segment_s))
            pieces.append((app, length))
            left -= length
    order = rng.permutation(len(pieces))
    schedule, t = [], 0.0
    for i in order:
        app, length = pieces[i]
        schedule.append((profiles[app.value], t, t + length))
        t += length
    return schedule
