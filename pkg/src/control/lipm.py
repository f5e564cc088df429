"""Linear inverted pendulum balance control along the lateral axis.

Covers ZMP reference generation from a footstep plan, discrete preview control
of the CoM jerk, DCM feedback on the commanded ZMP and damping control of the
foot pose. Everything here is a pure function over small value types.
"""
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve_discrete_are

from src.utils.errors import (HorizonExceedsPlan, InvalidConfig, InvalidHorizon,
                              NumericalFailure, PlanEmpty, WindowTooShort)

RICCATI_TOLERANCE = 1e-12
RICCATI_MAX_ITERATIONS = 200000


@dataclass(frozen=True)
class LipmParams:
    """Pendulum constants and the control period."""

    com_height: float = 0.9
    gravity: float = 9.81
    dt: float = 0.002

    def __post_init__(self):
        if self.com_height <= 0 or self.gravity <= 0 or self.dt <= 0:
            raise InvalidConfig("com_height, gravity and dt must be positive")

    @property
    def omega(self) -> float:
        return math.sqrt(self.gravity / self.com_height)


@dataclass(frozen=True)
class LipmState:
    c: float = 0.0
    c_dot: float = 0.0
    c_ddot: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.c, self.c_dot, self.c_ddot])

    @classmethod
    def from_array(cls, x: np.ndarray) -> "LipmState":
        return cls(float(x[0]), float(x[1]), float(x[2]))

    def zmp(self, params: LipmParams) -> float:
        return self.c - self.c_ddot / params.omega ** 2


@dataclass(frozen=True)
class Footstep:
    center: float
    start: float
    end: float


@dataclass(frozen=True)
class FootstepPlan:
    """Support centers with their time windows.

    ``support_half_width`` is the lateral half-extent of each support region.
    """

    steps: Tuple[Footstep, ...]
    transition: float = 0.2
    support_half_width: float = 0.05

    def __post_init__(self):
        previous_end = -math.inf
        for step in self.steps:
            if not step.start < step.end or step.start < previous_end:
                raise InvalidConfig("footstep times must be strictly increasing")
            if self.transition >= step.end - step.start:
                raise InvalidConfig("transition must be shorter than every step")
            previous_end = step.end

    @classmethod
    def stance(cls, center: float, duration: float, **kwargs) -> "FootstepPlan":
        return cls(steps=(Footstep(center, 0.0, duration),), **kwargs)


@dataclass(frozen=True)
class ZmpReference:
    z_ref: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    dt: float

    def __len__(self) -> int:
        return len(self.z_ref)

    def window(self, k: int, length: int) -> np.ndarray:
        """Samples ``k+1 .. k+length``, holding the last sample past the end."""
        idx = np.minimum(np.arange(k + 1, k + 1 + length), len(self.z_ref) - 1)
        return self.z_ref[idx]


@dataclass(frozen=True)
class PreviewGains:
    """State feedback ``k_x``, preview gains ``k_p`` and the held-tail gain.

    ``k_tail`` multiplies the last previewed sample and stands for every
    reference past the window, which is assumed to hold that value.
    """

    k_i: float
    k_x: np.ndarray
    k_p: np.ndarray
    n_preview: int
    k_c: float
    k_tail: float = 0.0
    riccati: np.ndarray = field(repr=False, default=None)


@dataclass(frozen=True)
class DcmFeedbackConfig:
    k_xi: float = 2.0

    def __post_init__(self):
        if self.k_xi <= 1.0:
            raise InvalidConfig("DCM feedback gain must exceed 1")


@dataclass(frozen=True)
class DampingConfig:
    k_w: float = 5e-4

    def __post_init__(self):
        if self.k_w <= 0:
            raise InvalidConfig("damping gain must be positive")


def cart_table_matrices(params: LipmParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Triple integrator with jerk input and ZMP output."""
    dt = params.dt
    A = np.array([[1.0, dt, 0.5 * dt * dt], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
    B = np.array([[dt ** 3 / 6.0], [dt ** 2 / 2.0], [dt]])
    C = np.array([[1.0, 0.0, -1.0 / params.omega ** 2]])
    return A, B, C


def build_zmp_reference(plan: FootstepPlan, params: LipmParams, horizon: float) -> ZmpReference:
    """Sample the ZMP reference of a footstep plan at the control period.

    The reference sits on each support center and ramps linearly across a
    window of ``plan.transition`` seconds centered on each step boundary.

    Raises:
        PlanEmpty: If the plan has no steps
        HorizonExceedsPlan: If the horizon reaches past the last step
    """
    if not plan.steps:
        raise PlanEmpty("footstep plan has no steps")
    t0 = plan.steps[0].start
    coverage = plan.steps[-1].end - t0
    if horizon > coverage + 1e-12:
        raise HorizonExceedsPlan(f"horizon {horizon} s exceeds plan coverage {coverage} s")

    n = int(math.floor(horizon / params.dt + 1e-9)) + 1
    t = t0 + np.arange(n) * params.dt
    hw = plan.support_half_width
    centers = np.array([s.center for s in plan.steps])

    step_idx = np.zeros(n, dtype=int)
    for i, step in enumerate(plan.steps[1:], start=1):
        boundary = 0.5 * (plan.steps[i - 1].end + step.start)
        step_idx[t >= boundary] = i

    z_ref = centers[step_idx].astype(float)
    lo = z_ref - hw
    hi = z_ref + hw

    half = 0.5 * plan.transition
    for i in range(1, len(plan.steps)):
        boundary = 0.5 * (plan.steps[i - 1].end + plan.steps[i].start)
        mask = (t >= boundary - half) & (t <= boundary + half)
        if not mask.any():
            continue
        a, b = centers[i - 1], centers[i]
        alpha = (t[mask] - (boundary - half)) / plan.transition
        z_ref[mask] = a + (b - a) * alpha
        lo[mask] = min(a, b) - hw
        hi[mask] = max(a, b) + hw

    return ZmpReference(z_ref=z_ref, lo=lo, hi=hi, dt=params.dt)


def _riccati_step(P, A, B, Q, R):
    BtP = B.T @ P
    return Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A)


def compute_preview_gains(params: LipmParams, n_preview: int, k_c: float) -> PreviewGains:
    """Preview-control gains for ZMP tracking with jerk weight ``k_c``.

    The cost is the sum over future samples of the squared ZMP tracking error
    plus ``k_c`` times the squared jerk. The infinite preview sum is truncated
    at ``n_preview`` samples; references past the window are taken to hold the
    last previewed value; their weight is kept apart from ``k_p`` as
    ``k_tail`` so the preview gains themselves decay toward the window end.

    Raises:
        InvalidHorizon: If ``n_preview`` < 1
        NumericalFailure: If the Riccati iteration does not converge
    """
    if n_preview < 1:
        raise InvalidHorizon(f"preview horizon must be at least 1, got {n_preview}")
    if k_c <= 0:
        raise InvalidConfig("jerk weight k_c must be positive")

    A, B, C = cart_table_matrices(params)
    Q = C.T @ C
    R = np.array([[k_c]])

    # Seed with the direct solution, then iterate to the stated tolerance.
    try:
        P = solve_discrete_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError):
        P = Q.copy()
    if not np.all(np.isfinite(P)):
        P = Q.copy()

    for _ in range(RICCATI_MAX_ITERATIONS):
        P_next = _riccati_step(P, A, B, Q, R)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise NumericalFailure("Riccati iteration produced non-finite values")
        change = np.linalg.norm(P_next - P) / max(np.linalg.norm(P_next), 1e-300)
        P = P_next
        if change < RICCATI_TOLERANCE:
            break
    else:
        raise NumericalFailure("Riccati iteration did not converge")

    G = 1.0 / float(R[0, 0] + B.T @ P @ B)
    K = G * (B.T @ P @ A)
    Ac = A - B @ K

    k_p = np.empty(n_preview)
    X = C.T.copy()
    for j in range(n_preview):
        k_p[j] = G * float(B.T @ X)
        X = Ac.T @ X
    # Sum of the geometric series Ac'^j X for j >= n_preview.
    k_tail = G * float(B.T @ np.linalg.solve(np.eye(3) - Ac.T, X))

    return PreviewGains(k_i=0.0, k_x=K.ravel(), k_p=k_p, n_preview=n_preview, k_c=k_c, k_tail=k_tail,
                        riccati=P)


def preview_step(state: LipmState, gains: PreviewGains, ref_window: Sequence[float],
                 params: LipmParams) -> Tuple[float, LipmState, float]:
    """Advance the cart-table model by one period under preview control.

    ``ref_window[j]`` is the reference ``j + 1`` samples ahead of ``state``.
    Returns the jerk, the next state and the ZMP of the next state.
    """
    window = np.asarray(ref_window, dtype=float)
    if len(window) < gains.n_preview:
        raise WindowTooShort(f"need {gains.n_preview} reference samples, got {len(window)}")

    x = state.as_array()
    previewed = window[:gains.n_preview]
    jerk = float(-gains.k_x @ x + gains.k_p @ previewed + gains.k_tail * previewed[-1])
    A, B, C = cart_table_matrices(params)
    x_next = A @ x + B[:, 0] * jerk
    z_cmd = float(C @ x_next)
    return jerk, LipmState.from_array(x_next), z_cmd


def track_reference(reference: ZmpReference, gains: PreviewGains, params: LipmParams,
                    initial: Optional[LipmState] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Run preview control along a whole reference; returns (jerks, z_cmd)."""
    state = initial or LipmState(c=float(reference.z_ref[0]))
    n = len(reference)
    jerks = np.empty(n - 1)
    z_cmd = np.empty(n)
    z_cmd[0] = state.zmp(params)
    for k in range(n - 1):
        jerks[k], state, z_cmd[k + 1] = preview_step(
            state, gains, reference.window(k, gains.n_preview), params)
    return jerks, z_cmd


def dcm(state: LipmState, params: LipmParams) -> float:
    """Divergent component of motion."""
    return state.c + state.c_dot / params.omega


def dcm_feedback(z_cmd: float, xi_msr: float, xi_cmd: float, cfg: DcmFeedbackConfig) -> float:
    return z_cmd + cfg.k_xi * (xi_msr - xi_cmd)


def damping_control(p_foot: float, w_msr: float, w_cmd: float, cfg: DampingConfig, dt: float) -> float:
    """Explicit Euler step of the wrench-error admittance on the foot pose."""
    if dt <= 0:
        raise InvalidConfig("dt must be positive")
    return p_foot + dt * cfg.k_w * (w_msr - w_cmd)


def plant_step(state: LipmState, zmp: float, params: LipmParams, dt: Optional[float] = None,
               external_accel: float = 0.0) -> LipmState:
    """Exact LIPM flow over ``dt`` with the ZMP held constant.

    ``external_accel`` is a constant lateral acceleration from external forces.
    """
    dt = params.dt if dt is None else dt
    w = params.omega
    z_eff = zmp - external_accel / w ** 2
    ch, sh = math.cosh(w * dt), math.sinh(w * dt)
    c = z_eff + (state.c - z_eff) * ch + state.c_dot / w * sh
    c_dot = (state.c - z_eff) * w * sh + state.c_dot * ch
    return LipmState(c=c, c_dot=c_dot, c_ddot=w ** 2 * (c - z_eff))


@dataclass(frozen=True)
class BalanceState:
    """Planned and measured pendulum states plus the foot compliance offset."""

    plan: LipmState = LipmState()
    actual: LipmState = LipmState()
    p_foot: float = 0.0
    zmp: float = 0.0
    violations: int = 0


class BalanceController:
    """Standing balance for the torso: preview plan, DCM feedback, damping.

    External lateral forces from arm contacts act on the measured pendulum;
    commanded ZMPs that leave the support interval are counted as violations
    and clipped to the interval before they reach the plant.
    """

    def __init__(self, params: LipmParams, gains: PreviewGains, dcm_cfg: DcmFeedbackConfig,
                 damping_cfg: DampingConfig, center: float = 0.0, support_half_width: float = 0.05,
                 robot_mass: float = 40.0, ground_stiffness: float = 1e4):
        self.params = params
        self.gains = gains
        self.dcm_cfg = dcm_cfg
        self.damping_cfg = damping_cfg
        self.center = center
        self.support_half_width = support_half_width
        self.robot_mass = robot_mass
        self.ground_stiffness = ground_stiffness
        self._window = np.full(gains.n_preview, center)

    def initial_state(self) -> BalanceState:
        start = LipmState(c=self.center)
        return BalanceState(plan=start, actual=start, zmp=self.center)

    def tick(self, state: BalanceState, external_force: float) -> BalanceState:
        _, plan, z_cmd = preview_step(state.plan, self.gains, self._window, self.params)
        z_fb = dcm_feedback(z_cmd, dcm(state.actual, self.params), dcm(plan, self.params), self.dcm_cfg)

        lo = self.center - self.support_half_width
        hi = self.center + self.support_half_width
        violated = not (lo <= z_fb <= hi)
        z_real = min(max(z_fb, lo), hi)

        actual = plant_step(state.actual, z_real, self.params,
                            external_accel=external_force / self.robot_mass)
        w_msr = external_force - self.ground_stiffness * state.p_foot
        p_foot = damping_control(state.p_foot, w_msr, 0.0, self.damping_cfg, self.params.dt)
        return replace(state, plan=plan, actual=actual, p_foot=p_foot, zmp=z_real,
                       violations=state.violations + int(violated))


def support_check(z_cmd: np.ndarray, reference: ZmpReference) -> List[int]:
    """Indices where a commanded ZMP trace leaves its support interval."""
    z = np.asarray(z_cmd)
    return [int(i) for i in np.flatnonzero((z < reference.lo[:len(z)] - 1e-12) |
                                             (z > reference.hi[:len(z)] + 1e-12))]
