"""Shared fixtures: a small sphere scene that every module can afford."""

import json

import numpy as np
import pytest

from eventhull import (
    CameraIntrinsics,
    EmitterSpec,
    OrbitSpec,
    emit_contour_events,
    make_surface,
    make_trajectory,
)


@pytest.fixture(scope="session")
def intr_small():
    return CameraIntrinsics(120.0, 120.0, 120.0, 90.0, 240, 180)


@pytest.fixture(scope="session")
def sphere():
    return make_surface("sphere", radius=1.0, center=[0.0, 0.0, 0.0])


@pytest.fixture(scope="session")
def ring_traj():
    return make_trajectory(
        OrbitSpec(kind="circular", radius=2.0, duration=2.0, pose_rate=200.0)
    )


@pytest.fixture(scope="session")
def sphere_events(sphere, ring_traj, intr_small):
    """Noise-free labeled contour events from the ring orbit."""
    spec = EmitterSpec(event_rate=10_000.0, jitter_px=0.0, clutter_rate=0.0, seed=7)
    return emit_contour_events(sphere, ring_traj, intr_small, spec, n_events=20_000)


def write_scene(path, shape, camera, orbit, emitter=None, n_events=None):
    manifest = {"shape": shape, "camera": camera, "orbit": orbit}
    if emitter is not None:
        manifest["emitter"] = emitter
    if n_events is not None:
        manifest["n_events"] = n_events
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


@pytest.fixture()
def sphere_scene_file(tmp_path):
    """Small sphere scene manifest for pipeline/CLI tests."""
    return write_scene(
        tmp_path / "scene.json",
        shape={"kind": "sphere", "radius": 1.0, "center": [0.0, 0.0, 0.0]},
        camera={"fx": 120.0, "fy": 120.0, "cx": 120.0, "cy": 90.0,
                "width": 240, "height": 180},
        orbit={"kind": "octahedral", "radius": 2.0, "duration": 2.0,
               "pose_rate": 200.0, "seed": 3},
        emitter={"event_rate": 10_000.0, "jitter_px": 0.0,
                 "clutter_rate": 0.0, "seed": 7},
        n_events=20_000,
    )


def rng(seed=0):
    return np.random.default_rng(seed)
