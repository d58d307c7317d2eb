"""Ensemble Kalman inversion: derivative-free parameter updates driven by
empirical cross-covariances between parameters and forward-map outputs.

Two update flavors are provided.  The plain step solves ``y = G(theta) + noise``
and moves every member against its own residual through the parameter/output
cross-covariance.  The regularized step targets the extended problem
``z = (y, 0) = (G(theta), H(theta)) + noise`` with block covariance
``diag(Gamma * I, Gamma' / mu)``, which adds an energy-penalty channel for
optimal-control training.

Updates are deterministic (no perturbed observations) explicit Euler steps in
artificial time; one epoch is one step.  Covariances use the 1/J
normalization throughout.  All reductions run in fixed member order, so runs
are bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .nnet import MlpSpec, mlp_init

__all__ = [
    "Ensemble",
    "CovarianceSchedule",
    "ForwardMapOutput",
    "BlockCovariance",
    "ensemble_mean",
    "output_mean",
    "cross_covariance",
    "eki_step",
    "eki_step_regularized",
    "gamma_at",
    "ensemble_expand",
    "min_loss_member",
    "PENALTY_LOSS",
]

# Finite stand-in loss for members whose forward evaluation failed; keeps
# min/mean reductions well defined without aborting a run.
PENALTY_LOSS = 1e12


@dataclass
class Ensemble:
    """EKI state: member parameter vectors (rows), epoch counter, rng.

    The rng is only consumed by :func:`ensemble_expand`; updates themselves
    are deterministic.  ``events`` records expansions as (epoch, count).
    """

    members: np.ndarray  # (J, N)
    epoch: int = 0
    rng: np.random.Generator | None = None
    events: list = field(default_factory=list)

    def __post_init__(self):
        self.members = np.atleast_2d(np.asarray(self.members, dtype=float))

    @property
    def size(self) -> int:
        return self.members.shape[0]

    @property
    def dim(self) -> int:
        return self.members.shape[1]


@dataclass(frozen=True)
class CovarianceSchedule:
    """Exponential decay of the observational covariance scale.

    ``gamma(m) = gamma0 * exp(-alpha * m')`` where m' is the largest multiple
    of ``period`` not exceeding epoch m, so the value is held constant
    between period boundaries.  Disabled, it returns ``gamma0`` always.
    """

    gamma0: float
    alpha: float
    period: int = 2
    enabled: bool = True

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValueError("gamma0 must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.period < 1:
            raise ValueError("period must be a positive integer")


@dataclass
class ForwardMapOutput:
    """Stacked predictions ``g`` plus the optional regularization channel.

    ``h`` carries sqrt(control energy) for regularized problems and is None
    otherwise.  ``failed`` flags members whose forward evaluation blew up;
    such members are frozen by the update and carry :data:`PENALTY_LOSS`.
    """

    g: np.ndarray
    h: float | None = None
    failed: bool = False

    def __post_init__(self):
        self.g = np.atleast_1d(np.asarray(self.g, dtype=float))

    def stacked(self) -> np.ndarray:
        if self.h is None:
            return self.g
        return np.concatenate([self.g, [self.h]])


@dataclass(frozen=True)
class BlockCovariance:
    """Diagonal block covariance diag(Gamma * I, Gamma' / mu)."""

    gamma: float
    gamma_prime: float
    mu: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.gamma_prime > 0:
            raise ValueError("gamma_prime must be positive")
        if not self.mu > 0:
            raise ValueError("mu must be positive when the energy channel is active")


def ensemble_mean(ens: Ensemble) -> np.ndarray:
    """Arithmetic mean of the members, fixed summation order."""
    if ens.size == 0:
        raise ValueError("empty ensemble")
    return ens.members.mean(axis=0)


def output_mean(outputs: list[ForwardMapOutput]) -> ForwardMapOutput:
    """Mean of forward-map outputs (componentwise; h averaged when present)."""
    if not outputs:
        raise ValueError("empty output list")
    g = np.mean([o.g for o in outputs], axis=0)
    hs = [o.h for o in outputs]
    h = None if hs[0] is None else float(np.mean(hs))
    return ForwardMapOutput(g=g, h=h)


def cross_covariance(ens: Ensemble, outputs: list[ForwardMapOutput]) -> np.ndarray:
    """Empirical parameter/output cross-covariance, 1/J normalized.

    ``(1/J) * sum_j (theta_j - mean) outer (out_j - mean)``; shape (N, d)
    where d is the stacked output dimension (including the h channel when
    present).  Note 1/J exactly, not the unbiased 1/(J-1).
    """
    if len(outputs) != ens.size:
        raise ValueError("outputs must align with members")
    theta = ens.members
    out = np.stack([o.stacked() for o in outputs])
    theta_c = theta - theta.mean(axis=0)
    out_c = out - out.mean(axis=0)
    return theta_c.T @ out_c / ens.size


def eki_step(
    ens: Ensemble,
    outputs: list[ForwardMapOutput],
    y: np.ndarray,
    gamma: float,
    h: float = 1.0,
) -> Ensemble:
    """One deterministic EKI epoch for the plain inverse problem.

    ``theta_j <- theta_j - h * C^{thetaG} * (G(theta_j) - y) / gamma`` for
    every member, with C^{thetaG} the 1/J cross-covariance of the current
    ensemble.  Members flagged as failed are frozen and excluded from the
    covariance statistics for this step.  The epoch counter increments.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if len(outputs) != ens.size:
        raise ValueError("outputs must align with members")
    y = np.asarray(y, dtype=float)
    valid = np.array([not o.failed for o in outputs])
    new_members = ens.members.copy()
    if valid.sum() >= 2:
        theta = ens.members[valid]
        g = np.stack([o.g for o in outputs])[valid]
        theta_c = theta - theta.mean(axis=0)
        g_c = g - g.mean(axis=0)
        resid = (g - y) / gamma
        # Delta_j = -(h/J) Theta_c^T (G_c resid_j): a combination of member
        # deviations, so every update stays in the ensemble's affine span.
        new_members[valid] = theta - (h / theta.shape[0]) * (resid @ g_c.T) @ theta_c
    return replace(ens, members=new_members, epoch=ens.epoch + 1)


def eki_step_regularized(
    ens: Ensemble,
    outputs: list[ForwardMapOutput],
    z: np.ndarray,
    cov: BlockCovariance,
    h: float = 1.0,
) -> Ensemble:
    """One EKI epoch for the energy-regularized problem.

    Targets ``z = (y, 0)`` with stacked outputs ``F = (G, H)``.  Since the
    block covariance is diagonal, the update splits into a data term scaled
    1/Gamma and an energy term scaled mu/Gamma':

    ``theta_j <- theta_j - h * B^{thetaF} Sigma^{-1} (F(theta_j) - z)``.
    """
    if len(outputs) != ens.size:
        raise ValueError("outputs must align with members")
    if any(o.h is None for o in outputs):
        raise ValueError("regularized step needs the energy channel on every output")
    z = np.asarray(z, dtype=float)
    valid = np.array([not o.failed for o in outputs])
    new_members = ens.members.copy()
    if valid.sum() >= 2:
        theta = ens.members[valid]
        f = np.stack([o.stacked() for o in outputs])[valid]
        theta_c = theta - theta.mean(axis=0)
        f_c = f - f.mean(axis=0)
        inv_sigma = np.full(f.shape[1], 1.0 / cov.gamma)
        inv_sigma[-1] = cov.mu / cov.gamma_prime
        resid = (f - z) * inv_sigma
        new_members[valid] = theta - (h / theta.shape[0]) * (resid @ f_c.T) @ theta_c
    return replace(ens, members=new_members, epoch=ens.epoch + 1)


def gamma_at(schedule: CovarianceSchedule, m: int) -> float:
    """Scheduler value at epoch m (held constant between period boundaries)."""
    if m < 0:
        raise ValueError("epoch must be nonnegative")
    if not schedule.enabled:
        return schedule.gamma0
    m_eff = (m // schedule.period) * schedule.period
    return schedule.gamma0 * float(np.exp(-schedule.alpha * m_eff))


def ensemble_expand(
    ens: Ensemble,
    count: int,
    spec: MlpSpec,
    rng: np.random.Generator | None = None,
    mode: str = "fresh",
) -> Ensemble:
    """Append ``count`` new members; existing members untouched.

    ``mode="fresh"`` draws independent initializations, enlarging the affine
    span the iteration can search; ``mode="perturb"`` centers the same draws
    on the current ensemble mean.  Uses the ensemble's own rng unless one is
    passed.  The expansion is recorded in ``events``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if mode not in ("fresh", "perturb"):
        raise ValueError(f"expansion mode must be 'fresh' or 'perturb', got {mode!r}")
    gen = rng if rng is not None else ens.rng
    if gen is None:
        raise ValueError("no rng available for expansion")
    fresh = np.stack([mlp_init(spec, gen) for _ in range(count)])
    if fresh.shape[1] != ens.dim:
        raise ValueError("spec parameter count does not match ensemble dimension")
    if mode == "perturb":
        fresh = fresh + ensemble_mean(ens)
    return replace(
        ens,
        members=np.vstack([ens.members, fresh]),
        events=ens.events + [(ens.epoch, count)],
    )


def min_loss_member(losses) -> tuple[int, float]:
    """Index and value of the smallest loss; ties break to the lowest index."""
    losses = np.asarray(losses, dtype=float)
    if losses.size == 0:
        raise ValueError("empty loss list")
    idx = int(np.argmin(losses))
    return idx, float(losses[idx])
