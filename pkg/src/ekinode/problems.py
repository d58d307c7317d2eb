"""Benchmark problems: the damped spiral and pendulum identification tasks
and the scalar linear-dynamics control task, together with their training
data, forward maps, losses, and closed-form oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nnet, ode
from .eki import ForwardMapOutput
from .nnet import MlpSpec
from .ode import IntegrationError, IntegratorConfig, Trajectory, integrate

__all__ = [
    "ObservationSet",
    "SysIdProblem",
    "ControlProblem",
    "spiral_field",
    "spiral_solution",
    "pendulum_field",
    "pendulum_energy",
    "make_observations",
    "make_spiral_problem",
    "make_pendulum_problem",
    "make_control_problem",
    "sysid_trajectory",
    "sysid_forward_map",
    "mse",
    "test_mse",
    "mse_from_states",
    "optimal_control",
    "optimal_state",
    "optimal_energy",
    "control_energy",
    "control_forward_map",
    "control_loss",
    "controller_values",
    "DATA_INTEGRATOR",
]

# Reference trajectories ("discretized solutions") are generated once per
# problem with a tight adaptive tolerance so that data error is negligible
# against the training-error scales under study.
DATA_INTEGRATOR = IntegratorConfig(method="dopri5", rtol=1e-9, atol=1e-12)


def spiral_field(x: np.ndarray, t: float = 0.0) -> np.ndarray:
    """Linear damped-rotation field ((-0.05 x1 + x2), (-x1 - 0.05 x2))."""
    return np.array([-0.05 * x[0] + x[1], -x[0] - 0.05 * x[1]])


def spiral_solution(t) -> np.ndarray:
    """Closed-form spiral solution from (1, 0): (e^{-t/20} cos t, -e^{-t/20} sin t).

    Vectorized over t; returns shape (2,) for scalar t, (len(t), 2) otherwise.
    """
    t = np.asarray(t, dtype=float)
    envelope = np.exp(-t / 20.0)
    out = np.stack([envelope * np.cos(t), -envelope * np.sin(t)], axis=-1)
    return out


def pendulum_field(state: np.ndarray, t: float = 0.0, omega: float = 1.0) -> np.ndarray:
    """Simple pendulum as a first-order system: (v, -omega * sin x)."""
    return np.array([state[1], -omega * np.sin(state[0])])


def pendulum_energy(state: np.ndarray, omega: float = 1.0) -> float:
    """First integral v^2/2 - omega * cos(x); conserved along trajectories."""
    return 0.5 * state[..., 1] ** 2 - omega * np.cos(state[..., 0])


@dataclass
class ObservationSet:
    """Training observations: runs of consecutive reference-grid samples.

    ``train_indices`` index into the reference grid; observation times and
    values are the grid rows at those indices.  The complement of the
    training indices defines the test set.
    """

    times: np.ndarray
    values: np.ndarray
    grid_times: np.ndarray
    grid_states: np.ndarray
    train_indices: np.ndarray
    num_subsets: int
    subset_length: int
    seed: int | None = None

    @property
    def test_indices(self) -> np.ndarray:
        mask = np.ones(self.grid_times.size, dtype=bool)
        mask[self.train_indices] = False
        return np.nonzero(mask)[0]

    def stacked_values(self) -> np.ndarray:
        """Observations as one flat vector (time-major), the EKI target y."""
        return self.values.reshape(-1)


def make_observations(
    grid_times: np.ndarray,
    grid_states: np.ndarray,
    num_subsets: int,
    subset_length: int,
    rng: np.random.Generator,
    seed: int | None = None,
) -> ObservationSet:
    """Select ``num_subsets`` disjoint runs of ``subset_length`` consecutive
    grid points, start indices uniform without replacement.

    Overlapping configurations are excluded up front: the draw is uniform
    over all start-index sets whose runs are pairwise disjoint (equivalent
    to rejection-resampling overlapping draws, without the rejection loop).
    """
    grid_size = grid_times.size
    if num_subsets < 1 or subset_length < 1:
        raise ValueError("num_subsets and subset_length must be positive")
    if num_subsets * subset_length > grid_size:
        raise ValueError(
            f"cannot place {num_subsets} disjoint runs of {subset_length} in {grid_size} points"
        )
    # Bijection trick: disjoint sorted starts s_i correspond to distinct
    # u_i = s_i - (i-1)(L-1) drawn from a shrunken index range.
    slack = grid_size - subset_length - (num_subsets - 1) * (subset_length - 1)
    u = np.sort(rng.choice(slack + 1, size=num_subsets, replace=False))
    starts = u + np.arange(num_subsets) * (subset_length - 1)
    idx = np.sort(np.concatenate([np.arange(s, s + subset_length) for s in starts]))
    if np.unique(idx).size != idx.size:
        raise AssertionError("internal error: observation runs overlap")
    return ObservationSet(
        times=grid_times[idx].copy(),
        values=grid_states[idx].copy(),
        grid_times=grid_times,
        grid_states=grid_states,
        train_indices=idx,
        num_subsets=num_subsets,
        subset_length=subset_length,
        seed=seed,
    )


@dataclass
class SysIdProblem:
    """System-identification task: fit a network vector field to observations.

    ``assembly`` selects how the forward map builds its prediction vector:
    ``"full"`` integrates one trajectory from x0 over the whole horizon,
    ``"shooting"`` re-initializes each observation subset at its first
    observed state and integrates only across that subset.  Shooting keeps
    every residual component bounded by the subset span, which is what makes
    aggressive covariance schedules usable on long horizons.
    """

    name: str
    true_field: ode.VectorField
    x0: np.ndarray
    t_final: float
    observations: ObservationSet
    net: MlpSpec
    integrator: IntegratorConfig
    assembly: str = "full"

    def __post_init__(self):
        n = np.asarray(self.x0).size
        if self.net.in_dim != n or self.net.out_dim != n:
            raise ValueError("network input/output dims must equal the state dimension")
        if self.assembly not in ("full", "shooting"):
            raise ValueError("assembly must be 'full' or 'shooting'")


def _reference_grid(field, x0, t_final, grid_size):
    times = np.linspace(0.0, t_final, grid_size)
    traj = integrate(field, x0, times, DATA_INTEGRATOR)
    return times, traj.states


def make_spiral_problem(
    data_rng: np.random.Generator,
    grid_size: int = 500,
    t_final: float = 40.0,
    num_subsets: int = 10,
    subset_length: int = 10,
    net: MlpSpec | None = None,
    integrator: IntegratorConfig | None = None,
    seed: int | None = None,
    assembly: str = "full",
) -> SysIdProblem:
    """Spiral benchmark: 500-point grid on [0, 40], 10 runs of 10 observations."""
    x0 = np.array([1.0, 0.0])
    times, states = _reference_grid(spiral_field, x0, t_final, grid_size)
    obs = make_observations(times, states, num_subsets, subset_length, data_rng, seed=seed)
    if net is None:
        net = MlpSpec((2, 10, 2), "tanh")
    if integrator is None:
        integrator = IntegratorConfig(method="rk4", dt=times[1] - times[0], divergence_limit=1e3)
    return SysIdProblem("spiral", spiral_field, x0, t_final, obs, net, integrator, assembly)


def make_pendulum_problem(
    data_rng: np.random.Generator,
    grid_size: int = 200,
    t_final: float = 20.0,
    num_subsets: int = 10,
    subset_length: int = 10,
    omega: float = 1.0,
    net: MlpSpec | None = None,
    integrator: IntegratorConfig | None = None,
    seed: int | None = None,
    assembly: str = "full",
) -> SysIdProblem:
    """Pendulum benchmark from (pi/4, 0): 200-point grid on [0, 20].

    The full (angle, velocity) state is observed; the 2-in/2-out network
    needs both components as training signal.
    """
    x0 = np.array([np.pi / 4.0, 0.0])
    field = lambda x, t: pendulum_field(x, t, omega)
    times, states = _reference_grid(field, x0, t_final, grid_size)
    obs = make_observations(times, states, num_subsets, subset_length, data_rng, seed=seed)
    if net is None:
        net = MlpSpec((2, 10, 2), "tanh")
    if integrator is None:
        integrator = IntegratorConfig(method="rk4", dt=times[1] - times[0], divergence_limit=1e3)
    return SysIdProblem("pendulum", field, x0, t_final, obs, net, integrator, assembly)


def _net_field(prob: SysIdProblem, theta: np.ndarray) -> ode.VectorField:
    layers = nnet.unflatten(prob.net, theta)
    act = prob.net.activation
    return lambda x, t: nnet.mlp_apply(layers, x, act)


def sysid_trajectory(theta: np.ndarray, prob: SysIdProblem) -> Trajectory:
    """Integrate the candidate field from the known x0 over the full
    reference grid (single full-horizon trajectory)."""
    return integrate(_net_field(prob, theta), prob.x0, prob.observations.grid_times, prob.integrator)


def _shooting_predictions(theta: np.ndarray, prob: SysIdProblem) -> np.ndarray:
    obs = prob.observations
    field = _net_field(prob, theta)
    L = obs.subset_length
    out = np.empty((obs.train_indices.size, np.asarray(prob.x0).size))
    for s in range(obs.num_subsets):
        seg = obs.train_indices[s * L:(s + 1) * L]
        traj = integrate(field, obs.grid_states[seg[0]], obs.grid_times[seg], prob.integrator)
        out[s * L:(s + 1) * L] = traj.states
    return out


def sysid_forward_map(theta: np.ndarray, prob: SysIdProblem) -> ForwardMapOutput:
    """G(theta): candidate states stacked at the observation times (time-major).

    Integration failures are returned as flagged outputs rather than raised,
    so ensemble updates can freeze the offending member.
    """
    try:
        pred = sysid_predictions(theta, prob)
    except IntegrationError:
        d = prob.observations.train_indices.size * np.asarray(prob.x0).size
        return ForwardMapOutput(g=np.zeros(d), failed=True)
    return ForwardMapOutput(g=pred.reshape(-1))


def mse_from_states(states: np.ndarray, prob: SysIdProblem, indices: np.ndarray) -> float:
    """Mean over the selected grid indices of the squared Euclidean mismatch."""
    diff = states[indices] - prob.observations.grid_states[indices]
    return float(np.mean(np.sum(diff * diff, axis=1)))


def sysid_predictions(theta: np.ndarray, prob: SysIdProblem) -> np.ndarray:
    """Predicted states at the observation times under the problem's assembly
    mode, shaped (M, n).  Raises IntegrationError on divergent candidates."""
    if prob.assembly == "shooting":
        return _shooting_predictions(theta, prob)
    traj = sysid_trajectory(theta, prob)
    return traj.states[prob.observations.train_indices]


def mse(theta: np.ndarray, prob: SysIdProblem) -> float:
    """Training loss: (1/M) sum_l ||xhat(t_l) - x(t_l; theta)||^2.

    The predictions x(t_l; theta) follow the problem's assembly mode, so the
    reported training error is exactly the quantity training minimizes.
    """
    diff = sysid_predictions(theta, prob) - prob.observations.values
    return float(np.mean(np.sum(diff * diff, axis=1)))


def test_mse(theta: np.ndarray, prob: SysIdProblem) -> float:
    """Same error on the reference grid minus the training points."""
    traj = sysid_trajectory(theta, prob)
    return mse_from_states(traj.states, prob, prob.observations.test_indices)


# ---------------------------------------------------------------------------
# Energy-regularized control of scalar linear dynamics xdot = a x + b u(t)


@dataclass
class ControlProblem:
    """Steer ``xdot = a x + b u_theta(t)`` from x0 to x_star at time T with
    small control energy.

    ``mu`` weighs the energy channel, ``gamma``/``gamma_prime`` are the
    data/energy covariance scales of the extended inverse problem.  The
    energy integral uses trapezoidal quadrature on ``quadrature_points``
    uniform intervals.
    """

    a: float = 1.0
    b: float = 1.0
    x0: float = 0.0
    x_star: float = 1.0
    t_final: float = 1.0
    mu: float = 0.001
    gamma: float = 0.3
    gamma_prime: float = 0.01
    controller: MlpSpec = field(default_factory=lambda: MlpSpec((1, 5, 5, 5, 1), "elu"))
    quadrature_points: int = 100
    integrator: IntegratorConfig | None = None

    def __post_init__(self):
        if self.b == 0:
            raise ValueError("b must be nonzero (controllability)")
        if not self.t_final > 0:
            raise ValueError("t_final must be positive")
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if not (self.gamma > 0 and self.gamma_prime > 0):
            raise ValueError("gamma and gamma_prime must be positive")
        if self.integrator is None:
            self.integrator = IntegratorConfig(method="rk4", dt=self.t_final / 100.0, divergence_limit=1e3)

    def quadrature_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.quadrature_points + 1)


def make_control_problem(mu: float = 0.001, **kwargs) -> ControlProblem:
    """Paper setting: x0 = 0 and T = a = b = x_star = 1."""
    return ControlProblem(mu=mu, **kwargs)


def optimal_control(t, a: float, b: float, x0: float, x_star: float, t_final: float):
    """Minimum-energy control u*(t) = a e^{-at} (x* - x0 e^{aT}) / (b sinh aT)."""
    if a == 0:
        raise ValueError("a = 0 needs the sinh limit form; out of scope here")
    t = np.asarray(t, dtype=float)
    return a * np.exp(-a * t) * (x_star - x0 * np.exp(a * t_final)) / (b * np.sinh(a * t_final))


def optimal_state(t, a: float, b: float, x0: float, x_star: float, t_final: float):
    """State under u*: x0 e^{at} + sinh(at)/sinh(aT) (x* - x0 e^{aT})."""
    if a == 0:
        raise ValueError("a = 0 needs the sinh limit form; out of scope here")
    t = np.asarray(t, dtype=float)
    return x0 * np.exp(a * t) + np.sinh(a * t) / np.sinh(a * t_final) * (
        x_star - x0 * np.exp(a * t_final)
    )


def optimal_energy(a: float, b: float, x0: float, x_star: float, t_final: float) -> float:
    """Energy of u*: a (1 - e^{-2aT}) (x* - x0 e^{aT})^2 / (2 b^2 sinh^2 aT)."""
    if a == 0:
        raise ValueError("a = 0 needs the sinh limit form; out of scope here")
    gap = x_star - x0 * np.exp(a * t_final)
    return float(
        a * (1.0 - np.exp(-2.0 * a * t_final)) * gap**2 / (2.0 * b**2 * np.sinh(a * t_final) ** 2)
    )


def controller_values(theta: np.ndarray, prob: ControlProblem, times: np.ndarray) -> np.ndarray:
    """Evaluate u_theta on a time grid (controller input is scalar t)."""
    layers = nnet.unflatten(prob.controller, theta)
    act = prob.controller.activation
    return np.array([nnet.mlp_apply(layers, np.array([t]), act)[0] for t in times])


def control_energy(theta: np.ndarray, prob: ControlProblem) -> float:
    """Trapezoidal quadrature of ||u_theta(t)||^2 over [0, T]."""
    grid = prob.quadrature_grid()
    u = controller_values(theta, prob, grid)
    return float(np.trapezoid(u * u, grid))


def control_forward_map(theta: np.ndarray, prob: ControlProblem) -> ForwardMapOutput:
    """F(theta) = (x(T; theta), sqrt(E_T[u_theta])) for the extended problem."""
    layers = nnet.unflatten(prob.controller, theta)
    act = prob.controller.activation

    def field(x, t):
        return prob.a * x + prob.b * nnet.mlp_apply(layers, np.array([t]), act)

    try:
        traj = integrate(field, np.array([prob.x0]), np.array([0.0, prob.t_final]), prob.integrator)
        energy = control_energy(theta, prob)
    except IntegrationError:
        return ForwardMapOutput(g=np.zeros(1), h=0.0, failed=True)
    return ForwardMapOutput(g=traj.states[-1], h=float(np.sqrt(energy)))


def control_mse(theta: np.ndarray, prob: ControlProblem, times: np.ndarray | None = None) -> float:
    """Mean squared deviation of u_theta from the analytic u* on a time grid.

    Defaults to the quadrature grid; pass a denser grid to probe times the
    training loss never touched.
    """
    if times is None:
        times = prob.quadrature_grid()
    u = controller_values(theta, prob, times)
    u_star = optimal_control(times, prob.a, prob.b, prob.x0, prob.x_star, prob.t_final)
    return float(np.mean((u - u_star) ** 2))


def control_loss(
    theta: np.ndarray,
    prob: ControlProblem,
    gamma: float | None = None,
    gamma_prime: float | None = None,
) -> float:
    """0.5 (x(T) - x*)^2 / Gamma + mu / (2 Gamma') * E_T[u_theta].

    ``gamma``/``gamma_prime`` override the problem's covariance scales (the
    runner drops Gamma on a schedule; the gradient baseline sets both to 1).
    """
    out = control_forward_map(theta, prob)
    if out.failed:
        return float("inf")
    g = prob.gamma if gamma is None else gamma
    gp = prob.gamma_prime if gamma_prime is None else gamma_prime
    miss = out.g[0] - prob.x_star
    return float(0.5 * miss * miss / g + prob.mu / (2.0 * gp) * out.h**2)
