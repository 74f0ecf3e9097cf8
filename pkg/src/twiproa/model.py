"""Nonlinear two-wheeled inverted pendulum model.

States are 4-vectors ``[x_w, xdot_w, theta, thetadot]`` (wheel position and
velocity, body pitch and pitch rate); the input is the motor voltage ``u``.
Every function accepts a single state of shape ``(4,)`` or a batch of shape
``(n, 4)`` with matching ``u`` of shape ``()`` or ``(n,)``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.linalg

STATE_NAMES = ("x_w", "xdot_w", "theta", "thetadot")
N_STATES = 4

#: Magnitude above which a simulated state is treated as diverged.
DIVERGENCE_BOUND = 1e6


@dataclass(frozen=True)
class TwipParams:
    """Physical constants of the robot.

    The defaults reproduce the published discrete-time model matrices and LQR
    gain. ``l`` and ``I_2`` differ from the values listed in the parameter
    table of the source publication; see :data:`TABLE_AS_PRINTED`.

    Parameters
    ----------
    d : float
        Wheel separation [m]. Unused by the planar pitch model.
    l : float
        Wheel axle to body centre-of-mass distance [m].
    r : float
        Wheel radius [m].
    m_B : float
        Body mass [kg].
    m_W : float
        Mass of each wheel [kg].
    J : float
        Spin inertia of each wheel [kg m^2].
    g : float
        Gravitational acceleration [m/s^2].
    i_gb : float
        Gearbox ratio.
    K_m : float
        Motor constant [N m/A]. Zero disables the actuator entirely.
    R_M : float
        Motor coil resistance [Ohm].
    I_2 : float
        Body pitch-axis inertia [kg m^2].
    n_motors : int
        Number of driven wheels sharing the voltage ``u``.
    """

    d: float = 0.10
    l: float = 1.0e-2
    r: float = 0.04
    m_B: float = 0.368
    m_W: float = 0.02
    J: float = 2.25e-5
    g: float = 9.81
    i_gb: float = 49.86
    K_m: float = 1.5e-3
    R_M: float = 12.0
    I_2: float = 2.175e-4
    n_motors: int = 2

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v):
                raise ValueError(f"parameter {f.name} must be finite, got {v}")
            if f.name == "K_m":
                if v < 0:
                    raise ValueError(f"K_m must be non-negative, got {v}")
            elif v <= 0:
                raise ValueError(f"parameter {f.name} must be positive, got {v}")
        # d1(theta) is smallest at cos^2(theta) = 1
        if self.d1(0.0) <= 0:
            raise ValueError(
                "inertia coupling is singular: I_O*m_O must exceed a^2 "
                f"(I_O*m_O={self.I_O * self.m_O:.3e}, a^2={self.a**2:.3e})"
            )

    @property
    def a(self) -> float:
        return self.m_B * self.l

    @property
    def I_O(self) -> float:
        return self.I_2 + self.m_B * self.l**2

    @property
    def m_O(self) -> float:
        return self.m_B + self.n_motors * (self.m_W + self.J / self.r**2)

    @property
    def torque_gain(self) -> float:
        """Wheel torque per volt of unopposed motor voltage [N m/V]."""
        return self.n_motors * self.i_gb * self.K_m / self.R_M

    @property
    def back_emf_gain(self) -> float:
        return self.K_m * self.i_gb

    def d1(self, theta):
        return self.I_O * self.m_O - (self.a * np.cos(theta)) ** 2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TwipParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model parameters: {sorted(unknown)}")
        return cls(**data)


#: Parameter table exactly as printed in the source publication. With these
#: values the linearization does not reproduce the published model matrices,
#: and the published LQR gain does not stabilize it.
TABLE_AS_PRINTED = dict(
    d=0.10, l=2.75e-2, r=0.04, m_B=0.368, m_W=0.02, J=2.25e-5, g=9.81,
    i_gb=49.86, K_m=1.5e-3, R_M=12.0, I_2=2.17e-4,
)


@dataclass(frozen=True)
class LinearDiscreteModel:
    """Discrete-time LTI model ``x+ = A x + B u`` sampled every ``Ts`` seconds."""

    A: np.ndarray
    B: np.ndarray
    Ts: float

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B has {B.shape[0]} rows, A has {A.shape[0]}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("A and B must be finite")
        if not self.Ts > 0:
            raise ValueError(f"Ts must be positive, got {self.Ts}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Ts", float(self.Ts))

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    def step(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.ndim == 1:
            return self.A @ x + self.B @ np.atleast_1d(u)
        return x @ self.A.T + np.reshape(u, (len(x), -1)) @ self.B.T


def _rhs(x, u, p: TwipParams):
    xd = x[..., 1]
    th = x[..., 2]
    thd = x[..., 3]
    s = np.sin(th)
    c = np.cos(th)
    a, I_O, m_O, r, g = p.a, p.I_O, p.m_O, p.r, p.g
    d1 = I_O * m_O - a * a * c * c
    T = p.torque_gain * (u - p.back_emf_gain * (xd / r - thd))
    xdd = (a * I_O * thd**2 * s - a * a * g * s * c + T * (I_O / r + a * c)) / d1
    thdd = (-a * a * thd**2 * s * c + a * m_O * g * s - T * (m_O + a / r * c)) / d1
    return np.stack([xd, xdd, thd, thdd], axis=-1)


def continuous_dynamics(x, u, p: TwipParams | None = None) -> np.ndarray:
    """Time derivative ``[xdot_w, xddot_w, thetadot, thetaddot]`` of the state.

    Raises
    ------
    ValueError
        If any component of ``x`` or ``u`` is not finite.
    """
    p = p or TwipParams()
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] != N_STATES:
        raise ValueError(f"state must have {N_STATES} components, got shape {x.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError("state and input must be finite")
    return _rhs(x, u, p)


def linearize(p: TwipParams | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Analytic Jacobians ``(A_c, B_c)`` of the dynamics at ``x = 0, u = 0``."""
    p = p or TwipParams()
    a, I_O, m_O, r, g = p.a, p.I_O, p.m_O, p.r, p.g
    d1 = p.d1(0.0)
    kt, ke = p.torque_gain, p.back_emf_gain
    # linear part of T: kt*u - kt*ke/r * xdot + kt*ke * thetadot
    cx = (I_O / r + a) / d1
    ct = -(m_O + a / r) / d1
    A_c = np.zeros((4, 4))
    A_c[0, 1] = 1.0
    A_c[2, 3] = 1.0
    A_c[1, 1] = -cx * kt * ke / r
    A_c[1, 2] = -a * a * g / d1
    A_c[1, 3] = cx * kt * ke
    A_c[3, 1] = -ct * kt * ke / r
    A_c[3, 2] = a * m_O * g / d1
    A_c[3, 3] = ct * kt * ke
    B_c = np.array([[0.0], [cx * kt], [0.0], [ct * kt]])
    return A_c, B_c


def discretize_zoh(A_c, B_c, Ts: float) -> LinearDiscreteModel:
    """Exact zero-order-hold discretization via the augmented matrix exponential."""
    if not Ts > 0:
        raise ValueError(f"Ts must be positive, got {Ts}")
    A_c = np.atleast_2d(np.asarray(A_c, dtype=float))
    B_c = np.asarray(B_c, dtype=float)
    if B_c.ndim == 1:
        B_c = B_c.reshape(-1, 1)
    n, m = B_c.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A_c
    M[:n, n:] = B_c
    E = scipy.linalg.expm(M * Ts)
    return LinearDiscreteModel(E[:n, :n], E[:n, n:], Ts)


def linear_model(p: TwipParams | None = None, Ts: float = 0.01) -> LinearDiscreteModel:
    """Shorthand for ``discretize_zoh(*linearize(p), Ts)``."""
    return discretize_zoh(*linearize(p), Ts)


def step_nonlinear(x, u, p: TwipParams | None = None, Ts: float = 0.01, substeps: int = 1):
    """Advance the nonlinear dynamics by ``Ts`` with classical RK4 and held ``u``.

    Non-finite intermediate values are propagated rather than raised; callers
    detect them with :func:`is_diverged`.
    """
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    p = p or TwipParams()
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    h = Ts / substeps
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(substeps):
            k1 = _rhs(x, u, p)
            k2 = _rhs(x + 0.5 * h * k1, u, p)
            k3 = _rhs(x + 0.5 * h * k2, u, p)
            k4 = _rhs(x + h * k3, u, p)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def is_diverged(x) -> np.ndarray | bool:
    """True where a state is non-finite or exceeds :data:`DIVERGENCE_BOUND`."""
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore"):
        bad = ~np.isfinite(x) | (np.abs(x) > DIVERGENCE_BOUND)
    return bad.any(axis=-1)


def mechanical_energy(x, p: TwipParams | None = None):
    """Kinetic plus gravitational energy of the wheel-body system [J]."""
    p = p or TwipParams()
    x = np.asarray(x, dtype=float)
    xd, th, thd = x[..., 1], x[..., 2], x[..., 3]
    return (0.5 * p.m_O * xd**2 + p.a * np.cos(th) * xd * thd
            + 0.5 * p.I_O * thd**2 + p.a * p.g * np.cos(th))
