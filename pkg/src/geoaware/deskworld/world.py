"""Scene state, task templates, kinematic dynamics, and the scripted expert."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from geoaware.errors import GenerationError, InputError, TaskError

# Palette shared by the renderer and the geometric feature stub.  Object and
# region colors come from a closed set; the end-effector color is reserved.
OBJECT_COLORS = {"red": (0.85, 0.12, 0.12), "blue": (0.15, 0.25, 0.90)}
REGION_COLORS = {"green": (0.10, 0.75, 0.20), "yellow": (0.90, 0.82, 0.12)}
EE_COLOR = (0.95, 0.95, 0.95)
BACKGROUND_COLOR = (0.06, 0.06, 0.08)

WORKSPACE_HALF = 0.5        # workspace box is [-0.5, 0.5]^3 in meters
SPAWN_HALF = 0.35           # x/y band for sampled placements
TABLE_Z = 0.02              # resting height of objects and region centers
EE_HOME = (0.0, 0.0, 0.25)
MIN_SEPARATION = 0.08
PLACEMENT_ATTEMPTS = 1000

# Lateral offsets applied to consecutive goals that share a region, so two
# objects placed into one zone do not end up coincident.
_PLACE_OFFSETS = ((0.0, 0.0, 0.0), (0.035, 0.0, 0.0), (-0.035, 0.0, 0.0), (0.0, 0.035, 0.0))


@dataclass
class SimConfig:
    """World constants that downstream modules may override from config files."""

    max_step: float = 0.05          # per-axis translation clip per control step
    grasp_radius: float = 0.03      # gripper must close within this distance
    max_episode_steps: int = 200
    image_size: int = 32
    focal: float = 30.0             # pixels
    camera_radius: float = 1.0      # seen/novel cameras live on this sphere

    def to_dict(self):
        return {
            "max_step": self.max_step,
            "grasp_radius": self.grasp_radius,
            "max_episode_steps": self.max_episode_steps,
            "image_size": self.image_size,
            "focal": self.focal,
            "camera_radius": self.camera_radius,
        }


@dataclass
class ObjectState:
    object_id: str
    color: str
    pos: np.ndarray

    def copy(self):
        return ObjectState(self.object_id, self.color, self.pos.copy())


@dataclass
class GoalRegion:
    region_id: str
    color: str
    center: np.ndarray
    radius: float

    def copy(self):
        return GoalRegion(self.region_id, self.color, self.center.copy(), self.radius)


@dataclass
class SceneState:
    """Full world state: end-effector pose, gripper, objects, goals, held object."""

    ee_pos: np.ndarray
    ee_rot: np.ndarray              # accumulated rotation command; physically inert
    gripper: float                  # +1 open, -1 closed
    objects: list[ObjectState]
    goal_regions: list[GoalRegion]
    held_object: str | None = None

    def copy(self):
        return SceneState(
            ee_pos=self.ee_pos.copy(),
            ee_rot=self.ee_rot.copy(),
            gripper=self.gripper,
            objects=[o.copy() for o in self.objects],
            goal_regions=[g.copy() for g in self.goal_regions],
            held_object=self.held_object,
        )

    def object_by_id(self, object_id) -> ObjectState:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise TaskError(f"no object {object_id!r} in scene")

    def region_by_id(self, region_id) -> GoalRegion:
        for g in self.goal_regions:
            if g.region_id == region_id:
                return g
        raise TaskError(f"no region {region_id!r} in scene")

    def proprio(self):
        """7-vector fed to the policy: ee position, ee rotation, gripper."""
        return np.concatenate([self.ee_pos, self.ee_rot, [self.gripper]])

    def to_dict(self):
        return {
            "ee_pos": self.ee_pos.tolist(),
            "ee_rot": self.ee_rot.tolist(),
            "gripper": self.gripper,
            "held_object": self.held_object,
            "objects": [
                {"object_id": o.object_id, "color": o.color, "pos": o.pos.tolist()} for o in self.objects
            ],
            "goal_regions": [
                {"region_id": g.region_id, "color": g.color, "center": g.center.tolist(), "radius": g.radius}
                for g in self.goal_regions
            ],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            ee_pos=np.array(d["ee_pos"], dtype=float),
            ee_rot=np.array(d["ee_rot"], dtype=float),
            gripper=float(d["gripper"]),
            held_object=d["held_object"],
            objects=[ObjectState(o["object_id"], o["color"], np.array(o["pos"], dtype=float)) for o in d["objects"]],
            goal_regions=[
                GoalRegion(g["region_id"], g["color"], np.array(g["center"], dtype=float), float(g["radius"]))
                for g in d["goal_regions"]
            ],
        )


@dataclass
class Action:
    """Translation delta, rotation delta, and gripper command; flattens to 7 floats."""

    d_pos: np.ndarray
    d_rot: np.ndarray
    gripper_cmd: float

    def as_vector(self):
        return np.concatenate([self.d_pos, self.d_rot, [self.gripper_cmd]])

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=float).reshape(-1)
        if vec.shape != (7,):
            raise InputError(f"action vector must have 7 entries, got shape {vec.shape}")
        return cls(d_pos=vec[:3].copy(), d_rot=vec[3:6].copy(), gripper_cmd=float(vec[6]))

    @classmethod
    def zero(cls):
        return cls(d_pos=np.zeros(3), d_rot=np.zeros(3), gripper_cmd=1.0)


@dataclass
class TaskSpec:
    """One language-conditioned pick-and-place template."""

    index: int
    task_id: str
    instruction: str
    objects: tuple                  # ((object_id, color), ...)
    regions: tuple                  # ((region_id, color, radius), ...)
    goals: tuple                    # ((object_id, region_id), ...) in execution order

    def to_dict(self):
        return {
            "index": self.index,
            "task_id": self.task_id,
            "instruction": self.instruction,
            "objects": [list(o) for o in self.objects],
            "regions": [list(r) for r in self.regions],
            "goals": [list(g) for g in self.goals],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            index=int(d["index"]),
            task_id=d["task_id"],
            instruction=d["instruction"],
            objects=tuple((o[0], o[1]) for o in d["objects"]),
            regions=tuple((r[0], r[1], float(r[2])) for r in d["regions"]),
            goals=tuple((g[0], g[1]) for g in d["goals"]),
        )


def make_tasks():
    """The fixed task set; instructions form the closed policy vocabulary."""
    both = (("red_block", "red"), ("blue_block", "blue"))
    green = ("green_zone", "green", 0.06)
    yellow = ("yellow_zone", "yellow", 0.06)
    return [
        TaskSpec(0, "t0", "put the red block in the green zone", both, (green,), (("red_block", "green_zone"),)),
        TaskSpec(1, "t1", "put the blue block in the green zone", both, (green,), (("blue_block", "green_zone"),)),
        TaskSpec(2, "t2", "put the red block in the yellow zone", both, (green, yellow), (("red_block", "yellow_zone"),)),
        TaskSpec(
            3,
            "t3",
            "put the red block and the blue block in the green zone",
            both,
            (green,),
            (("red_block", "green_zone"), ("blue_block", "green_zone")),
        ),
    ]


def task_by_id(task_id, tasks=None):
    for t in tasks if tasks is not None else make_tasks():
        if t.task_id == task_id:
            return t
    raise TaskError(f"unknown task id {task_id!r}")


def reset(task: TaskSpec, seed: int, sim: SimConfig | None = None) -> SceneState:
    """Sample a scene for the task: regions first, then objects, all separated."""
    rng = np.random.default_rng([int(seed), task.index, 7919])
    placed = []

    def sample_position(label):
        for _ in range(PLACEMENT_ATTEMPTS):
            xy = rng.uniform(-SPAWN_HALF, SPAWN_HALF, size=2)
            pos = np.array([xy[0], xy[1], TABLE_Z])
            if all(np.linalg.norm(pos - q) >= MIN_SEPARATION for q in placed):
                placed.append(pos)
                return pos
        raise GenerationError(f"could not place {label} after {PLACEMENT_ATTEMPTS} attempts (task {task.task_id})")

    regions = [GoalRegion(rid, color, sample_position(rid), radius) for rid, color, radius in task.regions]
    objects = [ObjectState(oid, color, sample_position(oid)) for oid, color in task.objects]
    return SceneState(
        ee_pos=np.array(EE_HOME),
        ee_rot=np.zeros(3),
        gripper=1.0,
        objects=objects,
        goal_regions=regions,
        held_object=None,
    )


def step(scene: SceneState, action: Action, sim: SimConfig | None = None) -> SceneState:
    """Kinematic update.  Grasping happens on the open->closed transition only;
    a held object rigidly tracks the end-effector until released in place."""
    sim = sim or SimConfig()
    vec = action.as_vector()
    if not np.all(np.isfinite(vec)):
        raise InputError("action contains non-finite values")

    out = scene.copy()
    d_pos = np.clip(action.d_pos, -sim.max_step, sim.max_step)
    out.ee_pos = np.clip(scene.ee_pos + d_pos, -WORKSPACE_HALF, WORKSPACE_HALF)
    out.ee_rot = scene.ee_rot + action.d_rot  # tracked but inert
    new_grip = 1.0 if action.gripper_cmd >= 0 else -1.0

    if scene.held_object is not None:
        if new_grip < 0:
            out.object_by_id(scene.held_object).pos = out.ee_pos.copy()
        else:
            out.held_object = None  # release; the object stays where it is
    elif scene.gripper > 0 and new_grip < 0:
        candidates = [
            (float(np.linalg.norm(o.pos - out.ee_pos)), o.object_id)
            for o in out.objects
            if np.linalg.norm(o.pos - out.ee_pos) <= sim.grasp_radius
        ]
        if candidates:
            out.held_object = min(candidates)[1]
            out.object_by_id(out.held_object).pos = out.ee_pos.copy()
    out.gripper = new_grip
    return out


def success(scene: SceneState, task: TaskSpec) -> bool:
    """Every task-designated object inside its region's radius and not held."""
    for i, (object_id, region_id) in enumerate(task.goals):
        obj = scene.object_by_id(object_id)
        region = scene.region_by_id(region_id)
        if scene.held_object == object_id:
            return False
        if np.linalg.norm(obj.pos - region.center) > region.radius:
            return False
    return True


def _place_target(scene: SceneState, task: TaskSpec, goal_index: int) -> np.ndarray:
    _, region_id = task.goals[goal_index]
    center = scene.region_by_id(region_id).center
    return center + np.array(_PLACE_OFFSETS[goal_index % len(_PLACE_OFFSETS)])


GRASP_APPROACH_TOL = 0.02   # close the gripper once within this distance
PLACE_TOL = 0.015           # release once the held object is this close to target


def expert_action(scene: SceneState, task: TaskSpec, sim: SimConfig | None = None) -> Action:
    """Stateless scripted controller: approach -> grasp -> transport -> release
    for each goal in order.  Proportional with per-axis clipping (gain 1)."""
    sim = sim or SimConfig()

    def clipped(delta):
        return np.clip(delta, -sim.max_step, sim.max_step)

    for i, (object_id, region_id) in enumerate(task.goals):
        obj = scene.object_by_id(object_id)
        target = _place_target(scene, task, i)

        if scene.held_object == object_id:
            if np.linalg.norm(scene.ee_pos - target) <= PLACE_TOL:
                return Action(d_pos=np.zeros(3), d_rot=np.zeros(3), gripper_cmd=1.0)  # release
            return Action(d_pos=clipped(target - scene.ee_pos), d_rot=np.zeros(3), gripper_cmd=-1.0)

        if np.linalg.norm(obj.pos - target) <= PLACE_TOL:
            continue  # this goal is done

        if scene.held_object is not None:
            # Holding the wrong object; this cannot arise from the expert's own
            # actions, so treat it as an unreachable state.
            raise TaskError(f"expert is holding {scene.held_object!r} but needs {object_id!r}")

        delta = obj.pos - scene.ee_pos
        if np.linalg.norm(delta) <= GRASP_APPROACH_TOL:
            return Action(d_pos=clipped(delta), d_rot=np.zeros(3), gripper_cmd=-1.0)  # grasp
        return Action(d_pos=clipped(delta), d_rot=np.zeros(3), gripper_cmd=1.0)  # approach

    return Action.zero()  # all goals satisfied
