"""
Minimal rigid-body simulator driven by a pluggable collision detector.

Per substep: gravity, world-AABB broad phase, detector contact query,
penalty impulses, then a semi-implicit Euler pose update. Contacts from the
learned detector push each body down its pose gradient of the collision
probability; geometric detectors push along the sampled penetration normal.
Friction and gyroscopic terms are ignored.
"""
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.exceptions import CheckpointError, EmptyInputError, SimulationError
from app.models.geometry import Obb, Pose, quat_from_axis_angle, quat_multiply, random_quaternion
from app.models.locc import LoccConfig, LoccParams
from app.models.simulation import BodyState, ContactEvent, SdStatistics, Shake, ShakeResult, SimConfig
from app.services.detectors import CollisionDetector, ContactInfo, build_detector
from app.services.detectors.locc import THRESHOLD
from app.services.geometry.mesh import aabb_of
from app.services.geometry.oracle import min_abs_sd, penetration_probe
from app.services.geometry.primitives import ObjectEntry, signed_volume
from app.services.locc import load_checkpoint


logger = logging.getLogger(__name__)

GRADIENT_FLOOR = 1e-12


def body_from_object(entry: ObjectEntry, pose: Pose, density: float, shake: Optional[Shake] = None) -> BodyState:
    """Body at rest with mass from the mesh volume and box-approximated inertia."""
    mass = density * abs(signed_volume(entry.mesh))
    x, y, z = aabb_of(entry.mesh).extents
    inertia = mass / 12.0 * np.diag([y * y + z * z, x * x + z * z, x * x + y * y])
    return BodyState(entry.id, pose, np.zeros(3), np.zeros(3), mass, inertia, shake)


def energy(bodies: Sequence[BodyState], gravity: Sequence[float]) -> float:
    """Kinetic plus gravitational potential energy of the dynamic bodies (J)."""
    g = np.asarray(gravity, dtype=np.float64)
    total = 0.0
    for b in bodies:
        if b.kinematic:
            continue
        w = b.angular_velocity
        total += 0.5 * b.mass * b.linear_velocity @ b.linear_velocity
        total += 0.5 * w @ b.world_inertia() @ w
        total -= b.mass * g @ b.pose.translation
    return float(total)


def _generalized(gradient: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """
    Map d/d(qw, qx, qy, qz, tx, ty, tz) to d/d(translation, world rotation
    vector) for the perturbation q' = exp(w/2) q.
    """
    gw, gv = gradient[0], gradient[1:4]
    w, v = rotation[0], rotation[1:4]
    return np.concatenate([gradient[4:7], 0.5 * (w * gv - gw * v + np.cross(v, gv))])


def _reduced_mass(b1: BodyState, b2: BodyState) -> float:
    if b1.kinematic:
        return b2.mass
    if b2.kinematic:
        return b1.mass
    return b1.mass * b2.mass / (b1.mass + b2.mass)


def _normal_impulses(b1: BodyState, b2: BodyState, depth: float, normal: np.ndarray, point: np.ndarray,
                     cfg: SimConfig) -> Tuple[np.ndarray, np.ndarray]:
    r1 = point - b1.pose.translation
    r2 = point - b2.pose.translation
    v1 = b1.linear_velocity + np.cross(b1.angular_velocity, r1)
    v2 = b2.linear_velocity + np.cross(b2.angular_velocity, r2)
    approach = (v1 - v2) @ normal
    accel = max(cfg.stiffness * depth - cfg.damping * approach, 0.0)
    j = _reduced_mass(b1, b2) * accel * cfg.dt * normal
    return np.concatenate([j, np.cross(r1, j)]), np.concatenate([-j, np.cross(r2, -j)])


def _center_axis(b1: BodyState, b2: BodyState) -> Tuple[np.ndarray, np.ndarray]:
    offset = b1.pose.translation - b2.pose.translation
    norm = np.linalg.norm(offset)
    normal = offset / norm if norm > 1e-15 else np.array([0.0, 0.0, 1.0])
    return normal, 0.5 * (b1.pose.translation + b2.pose.translation)


def _geometric(b1: BodyState, b2: BodyState, info: ContactInfo, cfg: SimConfig):
    if info.normal is None:
        normal, point = _center_axis(b1, b2)
        return _normal_impulses(b1, b2, 0.0, normal, point, cfg)
    return _normal_impulses(b1, b2, info.depth, info.normal, info.point, cfg)


def _gradient_impulse(body: BodyState, other: BodyState, direction: np.ndarray, excess: float,
                      cfg: SimConfig) -> np.ndarray:
    relative = np.concatenate([body.linear_velocity - other.linear_velocity, body.angular_velocity])
    accel = max(cfg.stiffness * excess - cfg.damping * (relative @ direction), 0.0)
    delta = accel * cfg.dt * direction
    return np.concatenate([body.mass * delta[:3], body.world_inertia() @ delta[3:]])


def resolve_contact(b1: BodyState, b2: BodyState, info: ContactInfo, cfg: SimConfig,
                    meshes: Optional[Mapping] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Penalty impulses (linear N·s, angular N·m·s) for both bodies of a
    reported contact; never attractive.

    With pose gradients each body moves down its own gradient of the
    collision probability. A vanishing gradient falls back to the sampled
    penetration normal of the exact meshes.
    """
    if info.gradients is None:
        return _geometric(b1, b2, info, cfg)
    d1 = _generalized(info.gradients[0], b1.pose.rotation)
    d2 = _generalized(info.gradients[1], b2.pose.rotation)
    if np.linalg.norm(d1) < GRADIENT_FLOOR or np.linalg.norm(d2) < GRADIENT_FLOOR:
        if meshes is None:
            normal, point = _center_axis(b1, b2)
            return _normal_impulses(b1, b2, 0.0, normal, point, cfg)
        probe = penetration_probe(meshes[b1.mesh_id], b1.pose, meshes[b2.mesh_id], b2.pose, cfg.sd_samples)
        return _geometric(b1, b2, ContactInfo(probe.depth, probe.depth, probe.normal, probe.point), cfg)
    excess = max(info.score - THRESHOLD, 0.0) * cfg.locc_depth_scale
    j1 = _gradient_impulse(b1, b2, -d1 / np.linalg.norm(d1), excess, cfg)
    j2 = _gradient_impulse(b2, b1, -d2 / np.linalg.norm(d2), excess, cfg)
    return j1, j2


def _apply(body: BodyState, impulse: np.ndarray) -> BodyState:
    if body.kinematic or not np.any(impulse):
        return body
    return BodyState(
        body.mesh_id, body.pose,
        body.linear_velocity + impulse[:3] / body.mass,
        body.angular_velocity + np.linalg.solve(body.world_inertia(), impulse[3:]),
        body.mass, body.inertia, body.shake,
    )


def _gravity(body: BodyState, gravity: np.ndarray, dt: float) -> BodyState:
    if body.kinematic:
        return body
    return BodyState(body.mesh_id, body.pose, body.linear_velocity + gravity * dt, body.angular_velocity,
                     body.mass, body.inertia, body.shake)


def _advance(body: BodyState, dt: float, t_next: float) -> BodyState:
    if body.kinematic:
        return BodyState(body.mesh_id, body.shake.pose(t_next), body.shake.velocity(t_next), np.zeros(3),
                         body.mass, body.inertia, body.shake)
    w = body.angular_velocity
    speed = np.linalg.norm(w)
    rotation = body.pose.rotation
    if speed > 0:
        rotation = quat_multiply(quat_from_axis_angle(w / speed, speed * dt), rotation)
    pose = Pose(rotation, body.pose.translation + body.linear_velocity * dt)
    return BodyState(body.mesh_id, pose, body.linear_velocity, w, body.mass, body.inertia, body.shake)


def event_sd(m1, q1: Sequence[float], m2, q2: Sequence[float], samples: int) -> float:
    """min-|sd| of a logged pair state, from the logged 7-vectors."""
    return min_abs_sd([(m1, Pose.from_vector(q1)), (m2, Pose.from_vector(q2))], [(0, 1)], samples=samples, seed=0)


def step(
    bodies: Sequence[BodyState],
    cfg: SimConfig,
    detector: CollisionDetector,
    t: float,
    index: int,
    env: int = 0,
) -> Tuple[List[BodyState], List[ContactEvent]]:
    """
    Advance the world by cfg.substeps substeps of cfg.dt.

    Returns:
        (bodies at t + substeps * dt, contact events of this step)

    Raises:
        SimulationError: a body state became non-finite
    """
    meshes = {key: entry.mesh for key, entry in detector.objects.items()}
    boxes = {b.mesh_id: aabb_of(meshes[b.mesh_id]) for b in bodies}
    gravity = np.asarray(cfg.gravity, dtype=np.float64)
    bodies = list(bodies)
    first_seen: Dict[Tuple[int, int], dict] = {}
    totals: Dict[Tuple[int, int], List[np.ndarray]] = {}

    for sub in range(cfg.substeps):
        now = t + sub * cfg.dt
        bodies = [_gravity(b, gravity, cfg.dt) for b in bodies]
        world = [Obb(boxes[b.mesh_id], b.pose).world_aabb() for b in bodies]
        impulses = [np.zeros(6) for _ in bodies]
        for i in range(len(bodies)):
            for j in range(i + 1, len(bodies)):
                b1, b2 = bodies[i], bodies[j]
                if b1.kinematic and b2.kinematic:
                    continue
                if not world[i].overlaps(world[j], cfg.broadphase_slack):
                    continue
                info = detector.contact(b1.mesh_id, b1.pose, b2.mesh_id, b2.pose, samples=cfg.sd_samples)
                if info is None:
                    continue
                j1, j2 = resolve_contact(b1, b2, info, cfg, meshes)
                impulses[i] += j1
                impulses[j] += j2
                if (i, j) not in first_seen:
                    q1, q2 = b1.pose.as_vector().tolist(), b2.pose.as_vector().tolist()
                    first_seen[(i, j)] = {
                        "substep": sub, "q1": q1, "q2": q2,
                        "sd": event_sd(meshes[b1.mesh_id], q1, meshes[b2.mesh_id], q2, cfg.sd_samples),
                    }
                    totals[(i, j)] = [np.zeros(6), np.zeros(6)]
                totals[(i, j)][0] += j1
                totals[(i, j)][1] += j2
        bodies = [_advance(_apply(b, impulse), cfg.dt, now + cfg.dt) for b, impulse in zip(bodies, impulses)]
        for b in bodies:
            if not b.finite():
                raise SimulationError(f"body '{b.mesh_id}' became non-finite at step {index}", index)

    events = [
        ContactEvent(
            env=env, step=index, substep=seen["substep"], pair=pair,
            ids=(bodies[pair[0]].mesh_id, bodies[pair[1]].mesh_id),
            q1=seen["q1"], q2=seen["q2"], min_abs_sd=seen["sd"],
            impulse1=totals[pair][0].tolist(), impulse2=totals[pair][1].tolist(),
        )
        for pair, seen in sorted(first_seen.items())
    ]
    return bodies, events


def replay_event(event: ContactEvent, objects: Mapping[str, ObjectEntry], samples: int) -> float:
    """Recompute a logged event's min-|sd| from its recorded poses."""
    return event_sd(objects[event.ids[0]].mesh, event.q1, objects[event.ids[1]].mesh, event.q2, samples)


def simulation_detector(
    objects: Mapping[str, ObjectEntry],
    cfg: SimConfig,
    checkpoint: Optional[Path | str | Tuple[LoccParams, LoccConfig]] = None,
) -> CollisionDetector:
    if cfg.detector == "locc":
        if checkpoint is None:
            raise CheckpointError("the locc detector needs a trained checkpoint")
        params, locc_cfg = load_checkpoint(checkpoint) if isinstance(checkpoint, (str, Path)) else checkpoint
        return build_detector("locc", objects, params=params, cfg=locc_cfg)
    if cfg.detector == "gjk":
        return build_detector("gjk", objects, hull_only=cfg.gjk_hull)
    return build_detector("exact", objects)


def _bounding_radius(entry: ObjectEntry) -> float:
    return float(np.linalg.norm(aabb_of(entry.mesh).extents) / 2.0)


def shake_world(objects: Mapping[str, ObjectEntry], cfg: SimConfig, rng: np.random.Generator) -> List[BodyState]:
    """A shaken kinematic bowl with two bodies stacked above it at random orientations."""
    if cfg.bowl_id not in objects:
        raise ValueError(f"bowl '{cfg.bowl_id}' is not in the object set")
    missing = [key for key in cfg.drop_ids if key not in objects]
    if missing or not cfg.drop_ids:
        raise ValueError(f"drop objects {missing or cfg.drop_ids} are not in the object set")
    bowl = objects[cfg.bowl_id]
    shake = Shake(Pose.identity(), np.array([cfg.shake_amplitude, 0.0, 0.0]), cfg.shake_frequency,
                  float(rng.uniform(0.0, 2 * np.pi)))
    bodies = [body_from_object(bowl, shake.pose(0.0), cfg.density, shake)]
    height = float(aabb_of(bowl.mesh).max[2]) + 0.01
    for key in rng.choice(cfg.drop_ids, size=2):
        entry = objects[str(key)]
        radius = _bounding_radius(entry)
        offset = rng.uniform(-0.01, 0.01, size=2)
        pose = Pose(random_quaternion(rng), [offset[0], offset[1], height + radius])
        bodies.append(body_from_object(entry, pose, cfg.density))
        height += 2 * radius + 0.01
    return bodies


def run_env(
    bodies: Sequence[BodyState],
    cfg: SimConfig,
    detector: CollisionDetector,
    steps: int,
    env: int = 0,
) -> Tuple[List[ContactEvent], List[float], List[BodyState]]:
    """Step one environment; returns its events, per-step energies and final bodies."""
    events: List[ContactEvent] = []
    energies = [energy(bodies, cfg.gravity)]
    bodies = list(bodies)
    for index in range(steps):
        bodies, new = step(bodies, cfg, detector, index * cfg.step_seconds, index, env)
        events.extend(new)
        energies.append(energy(bodies, cfg.gravity))
    return events, energies, bodies


def sd_statistics(values: Sequence[float]) -> SdStatistics:
    """Average, top-10% average and maximum of min-|sd| values."""
    if not len(values):
        raise EmptyInputError("no contact events to summarise")
    ordered = np.sort(np.asarray(values, dtype=np.float64))[::-1]
    top = ordered[:max(1, int(np.ceil(0.1 * len(ordered))))]
    return SdStatistics(events=len(ordered), average=float(ordered.mean()), top10_average=float(top.mean()),
                        maximum=float(ordered[0]))


def run_shake_scenario(
    objects: Mapping[str, ObjectEntry],
    cfg: SimConfig,
    n_envs: int,
    duration: float,
    seed: int,
    checkpoint: Optional[Path | str | Tuple[LoccParams, LoccConfig]] = None,
    detector: Optional[CollisionDetector] = None,
) -> ShakeResult:
    """
    Simulate `n_envs` independent bowl-shaking environments for `duration`
    seconds. Environment e draws its setup from seed [seed, e], so results do
    not depend on scheduling.
    """
    if n_envs < 1:
        raise ValueError(f"n_envs must be >= 1, got {n_envs}")
    if duration < 0:
        raise ValueError(f"duration must be >= 0, got {duration}")
    detector = detector or simulation_detector(objects, cfg, checkpoint)
    steps = int(round(duration / cfg.step_seconds))
    worlds = [shake_world(objects, cfg, np.random.default_rng([seed, env])) for env in range(n_envs)]
    if steps == 0:
        return ShakeResult([[] for _ in worlds], None, 0, 0.0, [[energy(w, cfg.gravity)] for w in worlds])

    logger.info(f"Simulating {n_envs} environments for {steps} steps with the {detector.name} detector")
    start = time.perf_counter()
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        runs = list(pool.map(lambda env: run_env(worlds[env], cfg, detector, steps, env), range(n_envs)))
    elapsed = time.perf_counter() - start

    logs = [events for events, _, _ in runs]
    values = [e.min_abs_sd for events in logs for e in events]
    statistics = sd_statistics(values) if values else None
    if statistics:
        logger.info(f"{statistics.events} contacts: min-|sd| average {statistics.average:.5f}, "
                    f"top-10% {statistics.top10_average:.5f}, max {statistics.maximum:.5f}")
    return ShakeResult(logs, statistics, steps, elapsed / steps, [energies for _, energies, _ in runs])


def scaling_curve(
    objects: Mapping[str, ObjectEntry],
    cfg: SimConfig,
    env_counts: Sequence[int],
    duration: float,
    seed: int,
    checkpoint: Optional[Path | str | Tuple[LoccParams, LoccConfig]] = None,
) -> List[Tuple[int, float]]:
    """Wall seconds per simulated step against the number of environments."""
    detector = simulation_detector(objects, cfg, checkpoint)
    curve = []
    for count in env_counts:
        result = run_shake_scenario(objects, cfg, count, duration, seed, detector=detector)
        curve.append((count, result.seconds_per_step))
        logger.info(f"{count} environments: {result.seconds_per_step * 1e3:.2f} ms per step")
    return curve


def write_event_log(logs: Sequence[Sequence[ContactEvent]], path: Path | str) -> Path:
    """One JSON record per line, environments in order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for events in logs:
            for event in events:
                f.write(event.model_dump_json() + "\n")
    return path


def read_event_log(path: Path | str) -> List[ContactEvent]:
    return [ContactEvent(**json.loads(line)) for line in Path(path).read_text().splitlines() if line.strip()]
