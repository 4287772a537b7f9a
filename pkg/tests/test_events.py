"""Event containers, file round-trips, and the event-volume encoding."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventhull import (
    Event,
    EventStream,
    LABEL_ACE,
    LABEL_NON_ACE,
    LABEL_UNKNOWN,
    build_event_volume,
    read_events,
    write_events,
)
from eventhull.errors import DomainError, ParseError


def random_stream(n, seed=0, width=640, height=480):
    g = np.random.default_rng(seed)
    return EventStream(
        g.integers(0, width, size=n),
        g.integers(0, height, size=n),
        np.sort(g.integers(0, 10_000_000, size=n)) * 1e-6,
        g.choice([-1, 1], size=n),
        g.choice([LABEL_UNKNOWN, LABEL_NON_ACE, LABEL_ACE], size=n),
    )


class TestEventStream:
    def test_single_csv_line(self, tmp_path):
        path = tmp_path / "one.csv"
        path.write_text("x,y,t_us,p,label\n100,50,1500,1,1\n")
        stream = read_events(path)
        assert len(stream) == 1
        assert stream[0] == Event(100, 50, 0.0015, 1, LABEL_ACE)

    def test_empty_file_gives_empty_stream(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        assert len(read_events(path)) == 0

    @pytest.mark.parametrize("fmt", ["csv", "binary"])
    def test_round_trip(self, tmp_path, fmt):
        stream = random_stream(10_000, seed=2)
        path = tmp_path / f"events.{fmt}"
        write_events(stream, path, fmt)
        back = read_events(path, fmt)
        np.testing.assert_array_equal(back.x, stream.x)
        np.testing.assert_array_equal(back.y, stream.y)
        np.testing.assert_array_equal(back.t_us(), stream.t_us())
        np.testing.assert_array_equal(back.p, stream.p)
        np.testing.assert_array_equal(back.label, stream.label)

    def test_bad_polarity_is_parse_error_with_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2,3,1,0\n1,2,4,2,0\n")
        with pytest.raises(ParseError) as exc:
            read_events(path)
        assert exc.value.line == 2

    def test_bad_binary_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"not-an-event-file")
        with pytest.raises(ParseError):
            read_events(path, "binary")

    def test_unsorted_timestamps_rejected(self):
        with pytest.raises(DomainError):
            EventStream([0, 1], [0, 1], [1.0, 0.5], [1, 1])

    def test_sensor_bounds_enforced(self, tmp_path, intr_small):
        path = tmp_path / "oob.csv"
        path.write_text("500,10,100,1,0\n")
        with pytest.raises(DomainError):
            read_events(path, sensor=intr_small)

    def test_event_validation(self):
        with pytest.raises(DomainError):
            Event(0, 0, 0.0, 2)
        with pytest.raises(DomainError):
            Event(0, 0, 0.0, 1, label=7)

    def test_streams_are_immutable(self):
        stream = random_stream(10)
        with pytest.raises(ValueError):
            stream.x[0] = 3

    @given(n=st.integers(0, 300))
    @settings(max_examples=20, deadline=None)
    def test_round_trip_property(self, n, tmp_path_factory):
        stream = random_stream(n, seed=n)
        path = tmp_path_factory.mktemp("evt") / "e.bin"
        write_events(stream, path, "binary")
        back = read_events(path, "binary")
        np.testing.assert_array_equal(back.x, stream.x)
        np.testing.assert_array_equal(back.t_us(), stream.t_us())


class TestEventVolume:
    def test_no_events_zero_volume(self):
        stream = EventStream([], [], [], [])
        vol = build_event_volume(stream, (0.0, 1.0), 4, height=8, width=8)
        assert vol.bins.shape == (4, 8, 8)
        assert np.all(vol.bins == 0)

    def test_event_at_t0_fills_bin_zero(self):
        stream = EventStream([3], [2], [0.0], [1])
        vol = build_event_volume(stream, (0.0, 1.0), 4, height=8, width=8)
        assert vol.bins[0, 2, 3] == 1.0
        assert vol.bins.sum() == 1.0

    def test_half_way_between_bins(self):
        # t* = (B_t - 1)(t - t0)/(t1 - t0) = 1.5 for t=0.5, B_t=4
        stream = EventStream([3], [2], [0.5], [1])
        vol = build_event_volume(stream, (0.0, 1.0), 4, height=8, width=8)
        assert vol.bins[1, 2, 3] == pytest.approx(0.5)
        assert vol.bins[2, 2, 3] == pytest.approx(0.5)
        assert vol.bins.sum() == pytest.approx(1.0)

    def test_mass_conservation(self):
        stream = random_stream(5000, seed=4, width=32, height=24)
        vol = build_event_volume(stream, (0.0, 10.0), 8, height=24, width=32)
        assert vol.bins.sum() == pytest.approx(stream.p.sum(), abs=1e-9)

    def test_linearity_in_polarity(self):
        g = np.random.default_rng(5)
        t = np.sort(g.uniform(0, 1, 100))
        x = g.integers(0, 8, 100)
        y = g.integers(0, 8, 100)
        pos = EventStream(x, y, t, np.ones(100, int))
        neg = EventStream(x, y, t, -np.ones(100, int))
        vp = build_event_volume(pos, (0.0, 1.0), 5, height=8, width=8)
        vn = build_event_volume(neg, (0.0, 1.0), 5, height=8, width=8)
        np.testing.assert_allclose(vn.bins, -vp.bins)

    def test_time_shift_invariance(self):
        g = np.random.default_rng(6)
        t = np.sort(g.uniform(0, 1, 200))
        x = g.integers(0, 8, 200)
        y = g.integers(0, 8, 200)
        p = g.choice([-1, 1], 200)
        a = build_event_volume(EventStream(x, y, t, p), (0.0, 1.0), 6,
                               height=8, width=8)
        b = build_event_volume(EventStream(x, y, t + 5.0, p), (5.0, 6.0), 6,
                               height=8, width=8)
        np.testing.assert_allclose(b.bins, a.bins, atol=1e-9)

    def test_events_outside_window_ignored(self):
        stream = EventStream([1, 2, 3], [1, 2, 3], [0.0, 0.5, 2.0], [1, 1, 1])
        vol = build_event_volume(stream, (0.25, 1.0), 4, height=8, width=8)
        assert vol.bins.sum() == pytest.approx(1.0)

    def test_bad_window_rejected(self):
        stream = EventStream([], [], [], [])
        with pytest.raises(DomainError):
            build_event_volume(stream, (1.0, 1.0), 4, height=8, width=8)
        with pytest.raises(DomainError):
            build_event_volume(stream, (0.0, 1.0), 0, height=8, width=8)
