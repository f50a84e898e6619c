"""Cartesian simulation of force-controlled path following on a cloth."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .pathplan import IroningPath
from .scene import ClothHeightField


class ControlError(RuntimeError):
    pass


class NoContact(ControlError):
    pass


class TrackingFailure(ControlError):
    def __init__(self, message: str, log: "TrajectoryLog"):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class ForceReading:
    force: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    torque: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def fz(self) -> float:
        return self.force[2]


@dataclass(frozen=True)
class ContactModel:
    """Unilateral linear spring between iron and surface (IU per meter)."""

    stiffness: float = 2.0e5
    board_height: float = 0.80

    def __post_init__(self):
        if not self.stiffness > 0:
            raise ValueError("contact stiffness must be positive")


@dataclass(frozen=True)
class ControllerParams:
    tangential_step: float = 0.002  # c_t, meters per step
    force_gain: float = 2.5e-6  # K_f, meters per IU
    desired_fz: float = -200.0  # f_dz, IU
    contact_threshold: ForceReading = ForceReading((0.0, 0.0, -200.0), (0.0, 25.0, 0.0))
    waypoint_radius: float = 0.004  # rho
    descent_step: float = 0.0005  # x_dz
    dt: float = 0.01
    max_steps: int = 20_000
    crash_margin: float = 0.005

    def __post_init__(self):
        if not (self.tangential_step > 0 and self.force_gain > 0 and self.waypoint_radius > 0):
            raise ValueError("c_t, K_f and waypoint radius must be positive")
        if self.max_steps <= 0 or not self.descent_step > 0:
            raise ValueError("max_steps and descent step must be positive")


@dataclass
class EndEffectorState:
    position: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).copy()
        if not np.all(np.isfinite(self.position)):
            raise ValueError("non-finite end-effector position")

    def moved(self, delta, dt: float) -> "EndEffectorState":
        return EndEffectorState(self.position + np.asarray(delta, dtype=np.float64), self.time + dt)


def read_force(state: EndEffectorState, cloth: ClothHeightField, model: ContactModel) -> ForceReading:
    """Simulated wrist sensor: spring force on penetration, compression negative."""
    x, y, z = state.position
    surface = float(cloth.surface_height(x, y)) if cloth is not None else model.board_height
    penetration = max(0.0, surface - z)
    return ForceReading((0.0, 0.0, -model.stiffness * penetration), (0.0, 0.0, 0.0))


def contact_detected(reading: ForceReading, threshold: ForceReading) -> bool:
    """True when any thresholded force/torque component reaches its limit."""
    for value, limit in zip(reading.force + reading.torque, threshold.force + threshold.torque):
        if limit != 0.0 and abs(value) >= abs(limit):
            return True
    return False


def descend_until_contact(
    state: EndEffectorState,
    cloth: ClothHeightField,
    model: ContactModel,
    params: ControllerParams = ControllerParams(),
) -> Tuple[EndEffectorState, int]:
    """Step straight down by ``descent_step`` until contact is sensed.

    Returns the contact state and the number of steps taken.
    """
    step = np.array([0.0, 0.0, -params.descent_step])
    for k in range(params.max_steps + 1):
        if contact_detected(read_force(state, cloth, model), params.contact_threshold):
            return state, k
        if k == params.max_steps:
            break
        state = state.moved(step, params.dt)
    raise NoContact(f"no contact after {params.max_steps} descent steps")


def control_step(
    position,
    waypoint,
    params: ControllerParams,
    force: ForceReading,
    prev_cz: float,
) -> np.ndarray:
    """Control vector ``(c_x, c_y, c_z)``.

    Planar part: magnitude ``c_t`` toward the waypoint (zero when exactly
    on it, i.e. atan2(0, 0) taken as 0 with no planar motion). Vertical
    part: previous ``c_z`` plus ``K_f`` times the force error.
    """
    dx = float(waypoint[0]) - float(position[0])
    dy = float(waypoint[1]) - float(position[1])
    if dx == 0.0 and dy == 0.0:
        cx = cy = 0.0
    else:
        heading = math.atan2(dy, dx)
        cx = params.tangential_step * math.cos(heading)
        cy = params.tangential_step * math.sin(heading)
    cz = prev_cz + params.force_gain * (params.desired_fz - force.fz)
    return np.array([cx, cy, cz])


@dataclass
class TrajectoryLog:
    steps: List[int] = field(default_factory=list)
    positions: List[np.ndarray] = field(default_factory=list)
    forces: List[Tuple[float, float, float]] = field(default_factory=list)
    waypoint_index: List[int] = field(default_factory=list)
    planar_norms: List[float] = field(default_factory=list)
    completed: bool = False

    def append(self, step, position, reading: ForceReading, wp: int, planar: float):
        self.steps.append(step)
        self.positions.append(np.array(position, dtype=np.float64))
        self.forces.append(tuple(reading.force))
        self.waypoint_index.append(wp)
        self.planar_norms.append(planar)

    def __len__(self) -> int:
        return len(self.steps)

    def position_array(self) -> np.ndarray:
        return np.array(self.positions).reshape(-1, 3)

    def force_array(self) -> np.ndarray:
        return np.array(self.forces).reshape(-1, 3)

    def contact_positions(self) -> np.ndarray:
        pos = self.position_array()
        fz = self.force_array()[:, 2]
        return pos[fz < 0]

    def write_csv(self, filename: str | os.PathLike) -> None:
        lines = ["step,x,y,z,fx,fy,fz,waypoint_index"]
        for s, p, f, w in zip(self.steps, self.positions, self.forces, self.waypoint_index):
            lines.append(
                f"{s},{p[0]:.9f},{p[1]:.9f},{p[2]:.9f},{f[0]:.6f},{f[1]:.6f},{f[2]:.6f},{w}"
            )
        with open(filename, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def follow_path(
    path: IroningPath,
    cloth: ClothHeightField,
    model: ContactModel,
    params: ControllerParams = ControllerParams(),
    state: Optional[EndEffectorState] = None,
) -> Tuple[EndEffectorState, TrajectoryLog]:
    """Track the waypoints in contact with the cloth.

    Starts at ``state`` (default: contact state above the first waypoint,
    which the caller is expected to have reached by descending). A
    waypoint counts as reached inside the planar ``waypoint_radius``.
    The vertical command ``c_z`` is an offset from the contact height, so
    each tick moves the iron by ``K_f`` times the force error.
    """
    wps = np.asarray(path.waypoints, dtype=np.float64)
    if state is None:
        raise ValueError("follow_path needs the contact state")
    log = TrajectoryLog()
    z_contact = float(state.position[2])
    floor = model.board_height - params.crash_margin
    cz = 0.0
    i = 0
    step = 0
    while True:
        while i < len(wps) and np.hypot(*(wps[i, :2] - state.position[:2])) < params.waypoint_radius:
            i += 1
        if i == len(wps):
            log.completed = True
            return state, log
        if step >= params.max_steps:
            raise TrackingFailure(f"tracking failure after {step} steps at waypoint {i}", log)
        reading = read_force(state, cloth, model)
        c = control_step(state.position, wps[i], params, reading, cz)
        cz = c[2]
        new = state.position.copy()
        new[:2] += c[:2]
        new[2] = max(z_contact + cz, floor)
        state = EndEffectorState(new, state.time + params.dt)
        step += 1
        log.append(step, new, read_force(state, cloth, model), i, float(np.hypot(c[0], c[1])))


def ascend(state: EndEffectorState, distance: float, params: ControllerParams = ControllerParams()) -> EndEffectorState:
    """Raise the iron by ``distance`` in ``descent_step`` increments."""
    n = int(math.ceil(distance / params.descent_step - 1e-12)) if distance > 0 else 0
    for k in range(n):
        dz = min(params.descent_step, distance - k * params.descent_step)
        state = state.moved((0.0, 0.0, dz), params.dt)
    return state


def apply_ironing_effect(
    cloth: ClothHeightField,
    contacts: np.ndarray,
    iron_halfwidth: float = 0.04,
    flatten: float = 0.9,
) -> ClothHeightField:
    """Scale heights by ``1 - flatten`` under the union of iron footprints.

    Footprints are squares (Chebyshev radius ``iron_halfwidth``) centered
    on each contact position. Untouched cells are copied unchanged.
    """
    if not 0.0 < flatten <= 1.0:
        raise ValueError("flatten must be in (0, 1]")
    out = cloth.copy()
    contacts = np.asarray(contacts, dtype=np.float64).reshape(-1, 3)
    if len(contacts) == 0:
        return out
    ny, nx = cloth.heights.shape
    x0, y0 = cloth.origin
    touched = np.zeros((ny, nx), dtype=bool)
    xs = x0 + np.arange(nx) * cloth.cell
    ys = y0 + np.arange(ny) * cloth.cell
    for cx, cy, _ in contacts:
        ix = np.flatnonzero(np.abs(xs - cx) <= iron_halfwidth)
        iy = np.flatnonzero(np.abs(ys - cy) <= iron_halfwidth)
        if len(ix) and len(iy):
            touched[iy[0] : iy[-1] + 1, ix[0] : ix[-1] + 1] = True
    out.heights[touched] = cloth.heights[touched] * (1.0 - flatten)
    return out


@dataclass
class IronPass:
    """One descend / follow / ascend cycle."""

    contact_state: EndEffectorState
    final_state: EndEffectorState
    log: TrajectoryLog
    descent_steps: int


def iron_along(
    path: IroningPath,
    cloth: ClothHeightField,
    model: ContactModel,
    params: ControllerParams = ControllerParams(),
    approach_height: float = 0.05,
) -> IronPass:
    """Approach above the first waypoint, descend, follow, ascend."""
    w0 = path.waypoints[0]
    surface = float(cloth.surface_height(w0[0], w0[1]))
    start = EndEffectorState(np.array([w0[0], w0[1], surface + approach_height]))
    contact, n_desc = descend_until_contact(start, cloth, model, params)
    state, log = follow_path(path, cloth, model, params, contact)
    up = ascend(state, approach_height, params)
    return IronPass(contact, up, log, n_desc)
