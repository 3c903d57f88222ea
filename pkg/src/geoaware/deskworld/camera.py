"""Pinhole cameras on a sphere around the workspace, plus a disc-splat renderer.

Cameras use a right-handed look-at frame.  With camera-frame coordinates
(X right, Y down, Z forward), a point projects to

    u = focal * X / Z + c_x,     v = focal * Y / Z + c_y.

The two fixed "seen" cameras (top-down and oblique side) are the training
views; novel evaluation cameras are sampled on the same sphere at a bounded
angular offset from their nearest seen camera.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from geoaware.errors import CameraError
from geoaware.deskworld.world import (
    BACKGROUND_COLOR,
    EE_COLOR,
    OBJECT_COLORS,
    REGION_COLORS,
    SceneState,
    SimConfig,
)

MIN_RENDER_DEPTH = 1e-3     # points at or behind this camera depth are culled
EE_RENDER_RADIUS = 0.02     # meters
OBJECT_RENDER_RADIUS = 0.03

# Angular-offset bands (degrees) between a novel camera and its nearest seen
# camera; the offset is the great-circle angle on the camera sphere.
CATEGORY_BANDS = {
    "novel_small": (10.0, 20.0),
    "novel_medium": (25.0, 40.0),
    "novel_large": (45.0, 60.0),
}
EVAL_CATEGORIES = ("seen",) + tuple(CATEGORY_BANDS)

_ELEVATION_LIMITS = (5.0, 88.0)     # keep novel cameras above the table, off the pole
_SAMPLE_ATTEMPTS = 1000


@dataclass
class CameraPose:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    focal: float
    principal_point: np.ndarray
    image_size: int

    def to_dict(self):
        return {
            "position": self.position.tolist(),
            "look_at": self.look_at.tolist(),
            "up": self.up.tolist(),
            "focal": self.focal,
            "principal_point": self.principal_point.tolist(),
            "image_size": self.image_size,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            position=np.array(d["position"], dtype=float),
            look_at=np.array(d["look_at"], dtype=float),
            up=np.array(d["up"], dtype=float),
            focal=float(d["focal"]),
            principal_point=np.array(d["principal_point"], dtype=float),
            image_size=int(d["image_size"]),
        )

    def same_pose(self, other, tol=1e-9):
        return (
            np.allclose(self.position, other.position, atol=tol)
            and np.allclose(self.look_at, other.look_at, atol=tol)
            and np.allclose(self.up, other.up, atol=tol)
        )


def camera_axes(pose: CameraPose):
    """Rows (right, down, forward) of the world-to-camera rotation."""
    forward = pose.look_at - pose.position
    norm = np.linalg.norm(forward)
    if norm < 1e-9:
        raise CameraError("camera position coincides with its look-at point")
    forward = forward / norm
    right = np.cross(forward, pose.up)
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-9:
        raise CameraError("camera up vector is parallel to the viewing direction")
    right = right / rnorm
    down = np.cross(forward, right)  # completes the right-handed (right, down, forward) triad
    return right, down, forward


def project_points(pose: CameraPose, points, min_depth=MIN_RENDER_DEPTH):
    """Project world points [N, 3] to pixel coordinates.

    Returns (uv [N, 2], depth [N]).  Depth is the raw forward camera
    coordinate; the projection itself divides by max(depth, min_depth), so
    behind-camera points yield finite coordinates and callers decide what to
    do with them (the renderer culls them, the feature stub flags them).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    right, down, forward = camera_axes(pose)
    rel = points - pose.position
    x = rel @ right
    y = rel @ down
    z = rel @ forward
    safe_z = np.maximum(z, min_depth)
    u = pose.focal * x / safe_z + pose.principal_point[0]
    v = pose.focal * y / safe_z + pose.principal_point[1]
    return np.stack([u, v], axis=1), z


def _splat_disc(img, uv, depth, world_radius, color, focal):
    """Alpha-composite an antialiased filled disc onto the image."""
    h, w, _ = img.shape
    radius_px = focal * world_radius / depth
    u, v = uv
    lo_x = max(int(math.floor(u - radius_px - 1)), 0)
    hi_x = min(int(math.ceil(u + radius_px + 1)) + 1, w)
    lo_y = max(int(math.floor(v - radius_px - 1)), 0)
    hi_y = min(int(math.ceil(v + radius_px + 1)) + 1, h)
    if lo_x >= hi_x or lo_y >= hi_y:
        return
    ys, xs = np.mgrid[lo_y:hi_y, lo_x:hi_x]
    dist = np.hypot(xs - u, ys - v)
    alpha = np.clip(radius_px + 0.5 - dist, 0.0, 1.0).astype(np.float32)[..., None]
    patch = img[lo_y:hi_y, lo_x:hi_x]
    patch *= 1.0 - alpha
    patch += alpha * np.asarray(color, dtype=np.float32)


def render_image(scene: SceneState, pose: CameraPose, sim: SimConfig | None = None):
    """Render the scene as colored discs; returns float32 [H, W, 3] in [0, 1].

    Goal regions paint first, objects far-to-near, end-effector last.  Disc
    pixel radius is focal * world_radius / depth; behind-camera points cull.
    """
    h = w = pose.image_size
    img = np.empty((h, w, 3), dtype=np.float32)
    img[:] = np.asarray(BACKGROUND_COLOR, dtype=np.float32)

    regions = [(g.center, g.radius, REGION_COLORS[g.color]) for g in scene.goal_regions]
    objects = [(o.pos, OBJECT_RENDER_RADIUS, OBJECT_COLORS[o.color]) for o in scene.objects]
    ee = [(scene.ee_pos, EE_RENDER_RADIUS, EE_COLOR)]

    for group in (regions, objects, ee):
        if not group:
            continue
        centers = np.array([g[0] for g in group])
        uv, depth = project_points(pose, centers)
        order = np.argsort(-depth)  # far to near within the group
        for i in order:
            if depth[i] <= MIN_RENDER_DEPTH:
                continue  # behind the camera
            _splat_disc(img, uv[i], depth[i], group[i][1], group[i][2], pose.focal)
    return np.clip(img, 0.0, 1.0)


# -- camera placement --------------------------------------------------------


def _pose_on_sphere(position, sim: SimConfig, top_down=False):
    return CameraPose(
        position=np.asarray(position, dtype=float),
        look_at=np.zeros(3),
        up=np.array([0.0, 1.0, 0.0]) if top_down else np.array([0.0, 0.0, 1.0]),
        focal=sim.focal,
        principal_point=np.array([sim.image_size / 2.0, sim.image_size / 2.0]),
        image_size=sim.image_size,
    )


def _spherical_position(azimuth_deg, elevation_deg, radius):
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    return radius * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])


def seen_cameras(sim: SimConfig | None = None):
    """The two fixed training cameras: straight top-down and an oblique side view."""
    sim = sim or SimConfig()
    top = _pose_on_sphere([0.0, 0.0, sim.camera_radius], sim, top_down=True)
    oblique = _pose_on_sphere(_spherical_position(35.0, 40.0, sim.camera_radius), sim)
    return [top, oblique]


def _unit(v):
    return v / np.linalg.norm(v)


def _great_circle_deg(p, q):
    return math.degrees(math.acos(float(np.clip(np.dot(_unit(p), _unit(q)), -1.0, 1.0))))


def nearest_seen_offset(pose: CameraPose, sim: SimConfig | None = None):
    """(index of nearest seen camera, angular offset in degrees) on the sphere."""
    sim = sim or SimConfig()
    offsets = [_great_circle_deg(pose.position, s.position) for s in seen_cameras(sim)]
    idx = int(np.argmin(offsets))
    return idx, offsets[idx]


def sample_viewpoints(category: str, count: int, seed: int, sim: SimConfig | None = None):
    """Cameras for an evaluation category.

    ``seen`` returns the 2 fixed training cameras.  Novel categories draw
    ``count`` cameras whose angular offset from their *nearest* seen camera
    falls in the category band: rotate a randomly chosen seen camera's
    position by an in-band angle around a random tangent axis, rejecting
    draws that leave the elevation limits or land closer to the other seen
    camera than to the base.
    """
    sim = sim or SimConfig()
    if category == "seen":
        return seen_cameras(sim)
    if category not in CATEGORY_BANDS:
        raise CameraError(f"unknown viewpoint category {category!r} (expected one of {sorted(EVAL_CATEGORIES)})")
    lo, hi = CATEGORY_BANDS[category]
    rng = np.random.default_rng([int(seed), list(CATEGORY_BANDS).index(category), 104729])
    bases = [s.position for s in seen_cameras(sim)]

    cameras = []
    while len(cameras) < count:
        for _ in range(_SAMPLE_ATTEMPTS):
            base_idx = int(rng.integers(len(bases)))
            base = _unit(bases[base_idx])
            psi = math.radians(rng.uniform(lo, hi))
            # random unit axis tangent to the sphere at `base`
            helper = np.array([0.0, 0.0, 1.0]) if abs(base[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
            t1 = _unit(np.cross(base, helper))
            t2 = np.cross(base, t1)
            phi = rng.uniform(0.0, 2.0 * math.pi)
            axis = math.cos(phi) * t1 + math.sin(phi) * t2
            # rotate base around `axis` by psi (Rodrigues; axis is orthogonal to base)
            pos = math.cos(psi) * base + math.sin(psi) * np.cross(axis, base)
            elevation = math.degrees(math.asin(float(np.clip(pos[2], -1.0, 1.0))))
            if not (_ELEVATION_LIMITS[0] <= elevation <= _ELEVATION_LIMITS[1]):
                continue
            offsets = [_great_circle_deg(pos, b) for b in bases]
            if int(np.argmin(offsets)) != base_idx:
                continue  # drifted closer to the other training camera
            cameras.append(_pose_on_sphere(pos * sim.camera_radius, sim))
            break
        else:
            raise CameraError(f"viewpoint sampling failed for category {category!r}")
    return cameras
