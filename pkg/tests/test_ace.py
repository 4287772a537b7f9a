"""Geometric ACE oracle: tangency of the contour generator and
image-space event labeling."""

import numpy as np
import pytest

from eventhull import (
    EmitterSpec,
    EventStream,
    LABEL_ACE,
    LABEL_NON_ACE,
    emit_contour_events,
    interpolate_pose,
)
from eventhull.ace import contour_generator, label_events, project_contour
from eventhull.errors import DomainError
from eventhull.geometry import project


class TestContourGenerator:
    def test_tangency_holds_along_trajectory(self, sphere, ring_traj):
        for t in np.linspace(ring_traj.t_start, ring_traj.t_end, 7):
            pose = interpolate_pose(ring_traj, t)
            gen = contour_generator(sphere, pose)
            for pts, nrm in gen.segments:
                resid = np.abs(np.einsum("ij,ij->i", nrm, pts - pose.translation))
                assert resid.max() < 1e-9

    def test_projection_drops_behind_camera_points(self, sphere, ring_traj):
        pose = interpolate_pose(ring_traj, ring_traj.t_start)
        gen = contour_generator(sphere, pose)
        # project with a pose looking the other way: nothing visible
        from eventhull import look_at_pose

        away = look_at_pose(pose.translation, 2.0 * pose.translation)
        class FakeIntr:
            fx = fy = 120.0
            cx, cy = 120.0, 90.0
            width, height = 240, 180
        assert project_contour(gen, away, FakeIntr) == []


class TestLabelEvents:
    def test_event_on_contour_is_ace(self, sphere, ring_traj, intr_small):
        t = 0.5 * (ring_traj.t_start + ring_traj.t_end)
        pose = interpolate_pose(ring_traj, t)
        gen = contour_generator(sphere, pose)
        uv = project(pose.to_camera(gen.segments[0][0][:1]), intr_small)
        x, y = int(round(uv[0, 0])), int(round(uv[0, 1]))
        stream = EventStream([x], [y], [t], [1], sensor=intr_small)
        labeled = label_events(stream, ring_traj, intr_small, sphere)
        assert labeled.label[0] == LABEL_ACE

    def test_event_at_centroid_is_non_ace(self, sphere, ring_traj, intr_small):
        # the sphere center projects to the principal point (look-at orbit)
        t = 0.5 * (ring_traj.t_start + ring_traj.t_end)
        stream = EventStream([120], [90], [t], [1], sensor=intr_small)
        labeled = label_events(stream, ring_traj, intr_small, sphere)
        assert labeled.label[0] == LABEL_NON_ACE

    def test_noise_free_events_all_ace_at_tight_tol(
        self, sphere, ring_traj, intr_small, sphere_events
    ):
        labeled = label_events(
            sphere_events, ring_traj, intr_small, sphere, tol_px=0.6
        )
        assert np.all(labeled.label == LABEL_ACE)

    def test_jittered_events_mostly_ace(self, sphere, ring_traj, intr_small):
        spec = EmitterSpec(event_rate=5000.0, jitter_px=0.5, clutter_rate=0.0, seed=3)
        stream = emit_contour_events(sphere, ring_traj, intr_small, spec)
        labeled = label_events(stream, ring_traj, intr_small, sphere, tol_px=1.5)
        assert np.mean(labeled.label == LABEL_ACE) >= 0.99

    def test_labels_independent_of_partitioning(
        self, sphere, ring_traj, intr_small, sphere_events
    ):
        whole = label_events(sphere_events, ring_traj, intr_small, sphere)
        n = len(sphere_events)
        first = label_events(
            sphere_events.select(np.arange(n) < n // 3),
            ring_traj, intr_small, sphere,
        )
        rest = label_events(
            sphere_events.select(np.arange(n) >= n // 3),
            ring_traj, intr_small, sphere,
        )
        np.testing.assert_array_equal(
            whole.label, np.concatenate([first.label, rest.label])
        )

    def test_out_of_range_timestamps_rejected(self, sphere, ring_traj, intr_small):
        stream = EventStream([10], [10], [ring_traj.t_end + 1.0], [1])
        with pytest.raises(DomainError):
            label_events(stream, ring_traj, intr_small, sphere)

    def test_bad_tolerance_rejected(self, sphere, ring_traj, intr_small):
        stream = EventStream([10], [10], [0.5], [1])
        with pytest.raises(DomainError):
            label_events(stream, ring_traj, intr_small, sphere, tol_px=0.0)

    def test_empty_stream_passthrough(self, sphere, ring_traj, intr_small):
        stream = EventStream([], [], [], [])
        assert len(label_events(stream, ring_traj, intr_small, sphere)) == 0
