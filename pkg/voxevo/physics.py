"""Mass-spring time stepping, ground contact and locomotion bookkeeping.

Every step runs in two phases:

1. per spring: the force on the spring's ``i`` end is written to that spring's own
   slot in a scratch buffer (no shared writes);
2. per mass: incident spring forces are gathered in ascending spring index, gravity
   and ground contact are added, then semi-implicit Euler advances the mass.

Both phases only touch per-spring or per-mass slots, and the gather order is fixed,
so results never depend on how the work is split. The kernels are compiled with
``nogil=True`` so independent robots can be simulated on separate threads.
"""

from dataclasses import dataclass
from typing import Optional, Tuple
import logging
import math

import numba
import numpy as np
from pydantic import BaseModel, Field, model_validator

from .errors import Diverged, ZeroLengthSpring
from .morphology import MassSpringSystem, PlaneParams

logger = logging.getLogger(__name__)

MIN_SPRING_LENGTH = 1e-9
DIVERGENCE_LIMIT = 1e6
V_STICK = 1e-4

_OK, _ZERO_LENGTH, _DIVERGED = 0, 1, 2


class SimConfig(BaseModel):
    gravity: float = Field(default=9.81, ge=0)
    dt: float = Field(default=1e-5, gt=0)
    duration: float = Field(default=2.0, ge=0)
    actuation_frequency: float = Field(default=2.0, gt=0)
    v_stick: float = Field(default=V_STICK, gt=0)
    # harness switch: False removes the ground plane entirely
    contact: bool = True

    @model_validator(mode="after")
    def _duration_covers_a_step(self):
        if 0 < self.duration < self.dt:
            raise ValueError("duration must be 0 or at least one time step")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass(frozen=True)
class Actuation:
    sign: float
    amplitude: float
    phase: float


@dataclass(frozen=True)
class Spring:
    i: int
    j: int
    k: float
    rest0: float
    damping_ratio: float
    actuation: Optional[Actuation] = None


@dataclass(frozen=True)
class TrajectorySummary:
    com_start: np.ndarray
    com_end: np.ndarray
    horizontal_displacement: float
    max_speed: float
    diverged: bool
    steps: int
    trajectory: Optional[np.ndarray] = None  # rows of (t, x, y, z)


# ---------------------------------------------------------------------------
# scalar kernels


@numba.njit(cache=True, nogil=True)
def _actuated_rest(rest0, sign, amplitude, phase, t, frequency):
    if sign == 0.0:
        return rest0
    return rest0 * (1.0 + sign * amplitude * math.sin(2.0 * math.pi * frequency * t + phase))


@numba.njit(cache=True, nogil=True)
def _spring_force(dx, dy, dz, dvx, dvy, dvz, k, rest, zeta, mi, mj):
    """Force on the i end; d = x_j - x_i, dv = v_j - v_i"""
    length = math.sqrt(dx * dx + dy * dy + dz * dz)
    if length < MIN_SPRING_LENGTH:
        return 0.0, 0.0, 0.0, False
    nx, ny, nz = dx / length, dy / length, dz / length
    reduced = mi * mj / (mi + mj)
    c = zeta * 2.0 * math.sqrt(k * reduced)
    magnitude = k * (length - rest) + c * (dvx * nx + dvy * ny + dvz * nz)
    return magnitude * nx, magnitude * ny, magnitude * nz, True


@numba.njit(cache=True, nogil=True)
def _ground_force(z, vx, vy, vz, mass, ftx, fty, k_ground, zeta_ground, mu_static, mu_kinetic, v_stick):
    """Penalty normal force plus static/kinetic friction"""
    if z >= 0.0:
        return 0.0, 0.0, 0.0
    c = zeta_ground * 2.0 * math.sqrt(k_ground * mass)
    normal = k_ground * (-z) - c * vz
    if normal < 0.0:
        normal = 0.0
    speed = math.sqrt(vx * vx + vy * vy)
    applied = math.sqrt(ftx * ftx + fty * fty)
    if speed < v_stick and applied <= mu_static * normal:
        return -ftx, -fty, normal
    if speed > 0.0:
        scale = mu_kinetic * normal / speed
        return -scale * vx, -scale * vy, normal
    # at rest but breaking away: oppose the applied force, never exceed it
    scale = min(mu_kinetic * normal, applied) / applied
    return -scale * ftx, -scale * fty, normal


@numba.njit(cache=True, nogil=True)
def _advance(
    pos, vel, mass, spring_i, spring_j, stiffness, rest0, zeta, act_sign, act_amp, act_phase,
    inc_ptr, inc_spring, inc_sign, gravity, contact, k_ground, zeta_ground, mu_static, mu_kinetic,
    v_stick, frequency, t0, dt, n_steps, stride, samples, forces, info,
):
    n_masses = mass.shape[0]
    n_springs = spring_i.shape[0]
    total_mass = 0.0
    for m in range(n_masses):
        total_mass += mass[m]

    max_speed = 0.0
    n_samples = 0
    for step in range(n_steps + 1):
        t = t0 + step * dt
        if stride > 0 and step % stride == 0:
            samples[n_samples, 0] = t
            for a in range(3):
                acc = 0.0
                for m in range(n_masses):
                    acc += mass[m] * pos[m, a]
                samples[n_samples, a + 1] = acc / total_mass
            n_samples += 1
        if step == n_steps:
            break

        # phase 1: per spring
        for s in range(n_springs):
            i = spring_i[s]
            j = spring_j[s]
            rest = _actuated_rest(rest0[s], act_sign[s], act_amp[s], act_phase[s], t, frequency)
            fx, fy, fz, ok = _spring_force(
                pos[j, 0] - pos[i, 0], pos[j, 1] - pos[i, 1], pos[j, 2] - pos[i, 2],
                vel[j, 0] - vel[i, 0], vel[j, 1] - vel[i, 1], vel[j, 2] - vel[i, 2],
                stiffness[s], rest, zeta[s], mass[i], mass[j],
            )
            if not ok:
                info[0] = s
                info[1] = step
                return _ZERO_LENGTH, max_speed, n_samples
            forces[s, 0] = fx
            forces[s, 1] = fy
            forces[s, 2] = fz

        # phase 2: per mass, gather in ascending spring index
        for m in range(n_masses):
            fx = 0.0
            fy = 0.0
            fz = 0.0
            for q in range(inc_ptr[m], inc_ptr[m + 1]):
                s = inc_spring[q]
                sign = inc_sign[q]
                fx += sign * forces[s, 0]
                fy += sign * forces[s, 1]
                fz += sign * forces[s, 2]
            fz -= mass[m] * gravity

            if contact:
                gx, gy, gz = _ground_force(
                    pos[m, 2], vel[m, 0], vel[m, 1], vel[m, 2], mass[m], fx, fy,
                    k_ground, zeta_ground, mu_static, mu_kinetic, v_stick,
                )
                fx += gx
                fy += gy
                fz += gz

            vel[m, 0] += fx / mass[m] * dt
            vel[m, 1] += fy / mass[m] * dt
            vel[m, 2] += fz / mass[m] * dt
            pos[m, 0] += vel[m, 0] * dt
            pos[m, 1] += vel[m, 1] * dt
            pos[m, 2] += vel[m, 2] * dt

            for a in range(3):
                if not abs(pos[m, a]) < DIVERGENCE_LIMIT:
                    info[0] = m
                    info[1] = step
                    return _DIVERGED, max_speed, n_samples

            speed = math.sqrt(vel[m, 0] ** 2 + vel[m, 1] ** 2 + vel[m, 2] ** 2)
            if speed > max_speed:
                max_speed = speed

    return _OK, max_speed, n_samples


# ---------------------------------------------------------------------------
# public operations


def actuated_rest_length(spring: Spring, t: float, frequency: float) -> float:
    if spring.actuation is None:
        return spring.rest0
    a = spring.actuation
    return float(_actuated_rest(spring.rest0, a.sign, a.amplitude, a.phase, t, frequency))


def spring_force(spring: Spring, x_i, x_j, v_i, v_j, m_i: float, m_j: float, t: float, frequency: float):
    """(force_on_i, force_on_j); force_on_j is the exact negation of force_on_i"""
    d = np.asarray(x_j, dtype=np.float64) - np.asarray(x_i, dtype=np.float64)
    dv = np.asarray(v_j, dtype=np.float64) - np.asarray(v_i, dtype=np.float64)
    rest = actuated_rest_length(spring, t, frequency)
    fx, fy, fz, ok = _spring_force(d[0], d[1], d[2], dv[0], dv[1], dv[2],
                                   spring.k, rest, spring.damping_ratio, m_i, m_j)
    if not ok:
        raise ZeroLengthSpring(-1, t)
    force = np.array([fx, fy, fz])
    return force, -force


def ground_contact(position, velocity, mass: float, plane: PlaneParams, applied_force=None,
                   v_stick: float = V_STICK) -> np.ndarray:
    """Contact force on one mass; ``applied_force`` is the sum of all other forces on it"""
    x = np.asarray(position, dtype=np.float64)
    v = np.asarray(velocity, dtype=np.float64)
    f = np.zeros(3) if applied_force is None else np.asarray(applied_force, dtype=np.float64)
    gx, gy, gz = _ground_force(x[2], v[0], v[1], v[2], mass, f[0], f[1],
                                  plane.k_ground, plane.damping_ratio, plane.mu_static, plane.mu_kinetic, v_stick)
    return np.array([gx, gy, gz])


def _run_kernel(system: MassSpringSystem, t0: float, config: SimConfig, n_steps: int, stride: int = 0):
    pos = np.array(system.positions, dtype=np.float64)
    vel = np.array(system.velocities, dtype=np.float64)
    samples = np.zeros((n_steps // stride + 1 if stride > 0 else 0, 4))
    forces = np.zeros((system.num_springs, 3))
    info = np.zeros(2, dtype=np.int64)
    plane = system.plane
    status, max_speed, n_samples = _advance(
        pos, vel, system.masses, system.spring_i, system.spring_j, system.stiffness, system.rest0,
        system.damping_ratio, system.act_sign, system.act_amplitude, system.act_phase,
        system.incident_ptr, system.incident_spring, system.incident_sign,
        config.gravity, config.contact, plane.k_ground, plane.damping_ratio, plane.mu_static, plane.mu_kinetic,
        config.v_stick, config.actuation_frequency, float(t0), config.dt, int(n_steps), int(stride),
        samples, forces, info,
    )
    if status == _ZERO_LENGTH:
        raise ZeroLengthSpring(int(info[0]), t0 + int(info[1]) * config.dt)
    if status == _DIVERGED:
        raise Diverged(t0 + int(info[1]) * config.dt, f"mass {int(info[0])} left the valid range")
    return system.with_state(pos, vel), float(max_speed), samples[:n_samples]


def advance(system: MassSpringSystem, t: float, config: SimConfig, n_steps: int) -> MassSpringSystem:
    """Advance ``n_steps`` steps starting at time ``t``; the input system is not modified"""
    advanced, _, _ = _run_kernel(system, t, config, n_steps)
    return advanced


def step(system: MassSpringSystem, t: float, config: SimConfig) -> MassSpringSystem:
    return advance(system, t, config, 1)


def simulate(system: MassSpringSystem, config: SimConfig, record_stride: int = 0) -> TrajectorySummary:
    """Run ``config.duration`` from t = 0; divergence is flagged, not raised"""
    com_start = system.center_of_mass()
    n_steps = config.n_steps
    try:
        final, max_speed, samples = _run_kernel(system, 0.0, config, n_steps, record_stride)
    except (Diverged, ZeroLengthSpring) as e:
        logger.debug(f"Simulation flagged as diverged: {e}")
        return TrajectorySummary(
            com_start=com_start, com_end=com_start, horizontal_displacement=0.0,
            max_speed=float("inf"), diverged=True, steps=n_steps,
        )

    com_end = final.center_of_mass()
    displacement = float(np.hypot(*(com_end - com_start)[:2]))
    return TrajectorySummary(
        com_start=com_start,
        com_end=com_end,
        horizontal_displacement=displacement,
        max_speed=max_speed,
        diverged=False,
        steps=n_steps,
        trajectory=samples if record_stride > 0 else None,
    )


def mechanical_energy(system: MassSpringSystem, t: float, config: SimConfig) -> float:
    """Kinetic + spring + gravitational + ground penalty energy"""
    v = system.velocities
    kinetic = 0.5 * float(np.sum(system.masses[:, None] * v * v))

    d = system.positions[system.spring_j] - system.positions[system.spring_i]
    length = np.linalg.norm(d, axis=1)
    rest = system.rest0 * (1.0 + system.act_sign * system.act_amplitude
                           * np.sin(2.0 * np.pi * config.actuation_frequency * t + system.act_phase))
    elastic = 0.5 * float(np.sum(system.stiffness * (length - rest) ** 2))

    z = system.positions[:, 2]
    potential = float(np.sum(system.masses * config.gravity * z))
    if config.contact:
        penetration = np.clip(-z, 0.0, None)
        potential += 0.5 * system.plane.k_ground * float(np.sum(penetration ** 2))
    return kinetic + elastic + potential
