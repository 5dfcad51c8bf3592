import hashlib

import numpy as np
import pytest

from celltraffic import synth
from celltraffic.ingest import Direction, bin_intervals, emit_trace


def _digest(trace):
    return hashlib.sha256(emit_trace(trace).encode()).hexdigest()


def test_profiles_cover_five_apps(profiles):
    assert set(profiles) == {a.value for a in synth.App}
    for p in profiles.values():
        assert p.ul_rate > 0 and p.dl_rate > 0
        assert abs(sum(p.protocol_mix.values()) - 1.0) <= 1e-9


def test_profile_rejects_bad_mix(profiles):
    base = profiles["Surfing"]
    with pytest.raises(ValueError):
        synth.AppProfile(base.app, base.ul_rate, base.dl_rate, base.on_mean, base.off_mean,
                         base.size_mean, base.size_cv, {"TCP": 0.5, "UDP": 0.4})


def test_same_seed_same_bytes(profiles):
    a = synth.generate(profiles["Surfing"], 600.0, seed=11)
    b = synth.generate(profiles["Surfing"], 600.0, seed=11)
    assert emit_trace(a) == emit_trace(b)


def test_distinct_seeds_differ(profiles):
    a = synth.generate(profiles["Surfing"], 600.0, seed=1)
    b = synth.generate(profiles["Surfing"], 600.0, seed=2)
    assert _digest(a) != _digest(b)


def test_non_positive_duration_rejected(profiles):
    with pytest.raises(ValueError):
        synth.generate(profiles["Surfing"], 0.0, seed=1)


@pytest.mark.parametrize("app", ["Surfing", "Streaming", "Background", "VoiceCall"])
def test_timestamps_inside_duration_and_sorted(profiles, app):
    tr = synth.generate(profiles[app], 500.0, seed=5)
    assert np.all(tr.timestamp >= 0) and np.all(tr.timestamp < 500.0)
    assert np.all(np.diff(tr.timestamp) >= 0)


def test_streaming_downlink_rate_matches_profile(profiles):
    p = profiles["Streaming"]
    tr = synth.generate(p, 1000.0, seed=0)
    # oracle: the long-run DL rate of an on/off source is rate times duty cycle
    expected = p.dl_rate * p.duty_cycle
    observed = np.sum(tr.direction == Direction.DL) / 1000.0
    assert abs(observed - expected) <= 0.10 * expected


def test_background_is_mostly_silent(profiles):
    tr = synth.generate(profiles["Background"], 6 * 3600.0, seed=4)
    s = bin_intervals(tr, 10.0, 6 * 3600.0)
    silent = np.mean((s.ul_count + s.dl_count) == 0)
    assert silent > 0.5


def test_single_segment_labels(profiles):
    trace, labels = synth.generate_mixture([(profiles["VideoCall"], 0.0, 100.0)], seed=1)
    assert [k for k, _ in labels] == list(range(10))
    assert {a for _, a in labels} == {"VideoCall"}
    assert np.all(trace.timestamp < 100.0)


def test_two_segment_label_counts(profiles):
    sched = [(profiles["Surfing"], 0.0, 60.0), (profiles["Streaming"], 60.0, 100.0)]
    _, labels = synth.generate_mixture(sched, seed=1)
    apps = [a for _, a in labels]
    assert apps.count("Surfing") == 6 and apps.count("Streaming") == 4


def test_straddling_interval_takes_majority_segment(profiles):
    sched = [(profiles["Surfing"], 0.0, 13.0), (profiles["Streaming"], 13.0, 30.0)]
    labels = synth.interval_labels(sched, 10.0)
    assert labels == [(0, "Surfing"), (1, "Streaming"), (2, "Streaming")]
    sched = [(profiles["Surfing"], 0.0, 17.0), (profiles["Streaming"], 17.0, 30.0)]
    assert synth.interval_labels(sched, 10.0)[1] == (1, "Surfing")


def test_overlapping_segments_rejected(profiles):
    sched = [(profiles["Surfing"], 0.0, 60.0), (profiles["Streaming"], 50.0, 100.0)]
    with pytest.raises(ValueError):
        synth.generate_mixture(sched, seed=1)


def test_mixture_ratio_differs_by_app():
    sched = synth.classification_schedule(hours_per_app=1.0, seed=2)
    trace, labels = synth.generate_mixture(sched, seed=2)
    s = bin_intervals(trace, 10.0, sched[-1][2])
    ratio = s.ul_dl_ratio
    by_app = {}
    for k, app in labels:
        if s.ul_count[k] + s.dl_count[k] > 0:
            by_app.setdefault(app, []).append(ratio[k])
    means = {a: float(np.mean(v)) for a, v in by_app.items()}
    assert set(means) == {"Surfing", "VideoCall", "VoiceCall", "Streaming"}
    assert abs(means["VoiceCall"] - 1.0) < 0.2
    assert means["Streaming"] < 0.3


def test_labels_round_trip():
    labels = [(0, "Surfing"), (1, "VoiceCall"), (5, "Background")]
    assert synth.parse_labels(synth.emit_labels(labels)) == labels


def test_classification_schedule_budget():
    sched = synth.classification_schedule(hours_per_app=2.0, seed=9)
    total = {}
    for prof, a, b in sched:
        total[prof.app] = total.get(prof.app, 0.0) + (b - a)
    assert set(total) == {a.value for a in synth.CLASSIFICATION_APPS}
    for v in total.values():
        assert v == pytest.approx(7200.0)
    assert all(sched[i][2] == sched[i + 1][1] for i in range(len(sched) - 1))


def test_standard_trace_is_deterministic():
    a, la = synth.standard_trace(days=0.25, seed=3)
    b, lb = synth.standard_trace(days=0.25, seed=3)
    assert a == b and la == lb
