"""Continuous visual-hull 3D reconstruction from apparent-contour events."""

from .ace import ContourGenerator, contour_generator, label_events
from .carving import (
    CarveVolume,
    OccupancyGrid,
    SurfacePointSet,
    bresenham3d,
    carve_event,
    carve_event_stream,
    carve_mask,
    carve_rays,
    extract_high_confidence,
    extract_occupancy,
    load_volume,
    nearest_surface_lookup,
    nonzero_percentile,
    save_volume,
    volume_for_scene,
)
from .events import (
    LABEL_ACE,
    LABEL_NON_ACE,
    LABEL_UNKNOWN,
    Event,
    EventStream,
    EventVolume,
    build_event_volume,
    read_events,
    write_events,
)
from .geometry import (
    CameraIntrinsics,
    Pose,
    Ray,
    Trajectory,
    backproject,
    event_ray,
    event_rays,
    interpolate_pose,
    load_trajectory,
    look_at_pose,
    project,
    save_trajectory,
)
from .meshing import (
    RefineConfig,
    TriMesh,
    default_refine_config,
    icosphere,
    load_mesh,
    marching_cubes,
    refine_loss,
    refine_mesh,
    save_mesh,
)
from .metrics import (
    OrientedPointSet,
    chamfer,
    estimate_normals,
    normal_consistency,
    sample_mesh,
)
from .simulator import (
    EmitterSpec,
    OrbitSpec,
    emit_contour_events,
    make_trajectory,
    render_masks,
)
from .surfaces import Box, Cylinder, MeshSurface, Sphere, Surface, make_surface

__version__ = "0.1.0"
