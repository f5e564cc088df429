"""Penalty contacts between the box, the table and the arm capsules."""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from src.sim.scene import BoxState, SceneConfig

TABLE = -1


@dataclass(frozen=True)
class Contact:
    """One contact on the box.

    ``normal`` is the unit direction of the normal force acting on the box;
    ``velocity`` is the velocity of the other body at the contact point.
    """

    point: np.ndarray
    normal: np.ndarray
    penetration: float
    body: int
    velocity: np.ndarray


def _closest_on_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, float]:
    ab = b - a
    t = float(np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0))
    return a + t * ab, t


def _box_signed_distance(box: BoxState, p: np.ndarray) -> Tuple[float, np.ndarray]:
    """Signed distance of ``p`` to the box surface and the outward normal there."""
    local = box.to_local(p[None, :])[0]
    half = np.array([0.5 * box.width, 0.5 * box.height])
    q = np.abs(local) - half
    if np.all(q <= 0):
        axis = int(np.argmax(q))
        n_local = np.zeros(2)
        n_local[axis] = 1.0 if local[axis] >= 0 else -1.0
        distance = float(q[axis])
    else:
        outside = np.maximum(q, 0.0)
        distance = float(np.linalg.norm(outside))
        n_local = np.sign(local) * outside / distance
    return distance, box.rotation() @ n_local


def table_contacts(box: BoxState, scene: SceneConfig) -> List[Contact]:
    contacts = []
    for corner in box.corners():
        pen = scene.table_top - corner[1]
        if pen > 0 and abs(corner[0]) <= scene.table_half_width:
            contacts.append(Contact(corner, np.array([0.0, 1.0]), float(pen), TABLE, np.zeros(2)))
    return contacts


def arm_contacts(box: BoxState, chains: np.ndarray, velocities: np.ndarray, scene: SceneConfig) -> List[Contact]:
    """Contacts of both arms with the box.

    Link interiors are tested against box corners and the joint spheres at
    link ends are tested against the box faces, so each region is counted once.
    """
    r = scene.capsule_radius
    contacts = []
    corners = box.corners()
    for arm in range(chains.shape[0]):
        points, vels = chains[arm], velocities[arm]
        for link in range(points.shape[0] - 1):
            a, b = points[link], points[link + 1]
            for corner in corners:
                closest, t = _closest_on_segment(corner, a, b)
                if t <= 0.0 or t >= 1.0:
                    continue
                gap = corner - closest
                dist = float(np.linalg.norm(gap))
                if 1e-12 < dist < r:
                    v = (1.0 - t) * vels[link] + t * vels[link + 1]
                    contacts.append(Contact(corner.copy(), gap / dist, r - dist, arm, v))
        for j in range(1, points.shape[0]):
            distance, normal = _box_signed_distance(box, points[j])
            if distance < r:
                surface = points[j] - normal * distance
                contacts.append(Contact(surface, -normal, r - distance, arm, vels[j].copy()))
    return contacts


def box_point_velocity(box: BoxState, point: np.ndarray) -> np.ndarray:
    rel = point - np.array([box.x, box.z])
    return np.array([box.vx - box.omega * rel[1], box.vz + box.omega * rel[0]])


def _cross(rel: np.ndarray, vec: np.ndarray) -> float:
    return float(rel[0] * vec[1] - rel[1] * vec[0])


def resolve(box: BoxState, contacts: List[Contact], scene: SceneConfig, dt: float) -> Tuple[BoxState, np.ndarray]:
    """Integrate the box one step under gravity, penalty normals and friction.

    Returns the new box and the normal force magnitude of each contact.
    Friction impulses cancel tangential slip and are clamped to the Coulomb
    cone of the contact's normal force; several sweeps run in a fixed order.
    """
    m, inertia = box.mass, box.inertia
    center = np.array([box.x, box.z])
    force = np.array([0.0, -m * scene.gravity])
    torque = 0.0
    normal_forces = np.zeros(len(contacts))

    for i, c in enumerate(contacts):
        v_rel = box_point_velocity(box, c.point) - c.velocity
        approach = float(v_rel @ c.normal)
        fn = max(0.0, scene.contact_stiffness * c.penetration - scene.contact_damping * approach)
        normal_forces[i] = fn
        f = fn * c.normal
        force += f
        torque += _cross(c.point - center, f)

    damp = 1.0 / (1.0 + scene.box_damping * dt)
    v = (np.array([box.vx, box.vz]) + dt * force / m) * damp
    w = (box.omega + dt * torque / inertia) * damp

    impulses = np.zeros(len(contacts))
    for _ in range(scene.friction_iterations):
        for i, c in enumerate(contacts):
            if normal_forces[i] <= 0.0:
                continue
            tangent = np.array([-c.normal[1], c.normal[0]])
            rel = c.point - center
            point_v = v + w * np.array([-rel[1], rel[0]])
            slip = float((point_v - c.velocity) @ tangent)
            rt = _cross(rel, tangent)
            effective = 1.0 / (1.0 / m + rt * rt / inertia)
            limit = scene.friction * normal_forces[i] * dt
            total = float(np.clip(impulses[i] - effective * slip, -limit, limit))
            delta = total - impulses[i]
            impulses[i] = total
            v = v + delta * tangent / m
            w = w + delta * rt / inertia

    new_box = BoxState(
        x=box.x + dt * v[0],
        z=box.z + dt * v[1],
        theta=box.theta + dt * w,
        width=box.width,
        height=box.height,
        mass=box.mass,
        vx=float(v[0]),
        vz=float(v[1]),
        omega=float(w),
    )
    return new_box, normal_forces


def per_arm_force(contacts: List[Contact], normal_forces: np.ndarray, n_arms: int = 2) -> Tuple[float, ...]:
    totals = np.zeros(n_arms)
    for c, fn in zip(contacts, normal_forces):
        if c.body >= 0:
            totals[c.body] += fn
    return tuple(float(t) for t in totals)


def lateral_reaction(contacts: List[Contact], normal_forces: np.ndarray) -> float:
    """Lateral force the box pushes back onto the robot through the arms."""
    total = 0.0
    for c, fn in zip(contacts, normal_forces):
        if c.body >= 0:
            total -= fn * c.normal[0]
    return float(total)
