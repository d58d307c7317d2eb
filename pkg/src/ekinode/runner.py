"""Experiment runner: configs, training loops, logs, reports, tables, plots.

A run is fully described by an :class:`ExperimentConfig` (JSON-serializable,
round-trip safe).  ``run`` executes the training loop, writes a per-epoch CSV
log and a ``report.json`` whose numbers are re-derivable from the serialized
parameters, and returns the :class:`RunReport`.  ``table`` aggregates
replicated runs into a summary table; ``plot_script`` emits plain CSV data
plus a matplotlib script so figures can be regenerated without this package.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from . import eki, gradbase, nnet, problems
from .ode import IntegrationError, IntegratorConfig, integrate

PROBLEMS = ("spiral", "pendulum", "linear_control")
OPTIMIZERS = ("eki", "adam", "sgd")

CSV_HEADER = ["epoch", "gamma", "J", "min_loss", "mean_loss", "train_mse", "test_mse"]


class ConfigError(ValueError):
    """Invalid experiment configuration; carries one message per offense."""

    def __init__(self, messages):
        super().__init__("; ".join(messages))
        self.messages = list(messages)


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class EkiOptions:
    """Ensemble optimizer block.

    ``gamma0``/``alpha``/``schedule_period`` drive the exponential covariance
    scheduler for system identification; ``gamma``/``gamma_prime`` are the
    block covariance scales of the regularized control problem, with
    ``gamma_steps`` applying piecewise drops (epoch, new value).
    ``expansions`` appends members at the given epochs, drawn per
    ``expansion_mode`` (fresh initializations, or the same draws recentered
    on the ensemble mean).

    ``step_size`` is the artificial-time step h.  ``step_cap_rel`` caps the
    first attempted step so no member moves more than that fraction of its
    own scale; on rejection (more failures, or best loss worse than
    ``accept_factor`` times the current best) the step is halved up to
    ``max_backtracks`` times before the epoch stalls.
    """

    ensemble_size: int = 22
    gamma0: float = 0.9
    alpha: float = 0.35
    schedule_period: int = 2
    schedule_enabled: bool = True
    gamma: float = 0.3
    gamma_prime: float = 0.01
    gamma_steps: tuple = ()
    expansions: tuple = ()
    expansion_mode: str = "fresh"
    step_size: float = 1.0
    step_cap_rel: float | None = 0.5
    accept_factor: float = 10.0
    max_backtracks: int = 30


@dataclass(frozen=True)
class GradientOptions:
    eta: float = 0.01


@dataclass(frozen=True)
class ProblemOptions:
    """Problem construction knobs; ``mu`` only applies to linear_control,
    the rest only to system identification."""

    assembly: str = "shooting"
    mu: float = 0.001
    grid_size: int | None = None
    num_subsets: int = 10
    subset_length: int = 10


@dataclass(frozen=True)
class IntegratorOptions:
    """Overrides for the problem's default integrator; None keeps defaults."""

    method: str | None = None
    dt: float | None = None
    rtol: float | None = None
    atol: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "spiral"
    optimizer: str = "eki"
    seed: int = 0
    epochs: int | None = 100
    wall_clock_budget_seconds: float | None = None
    out_dir: str | None = None
    eki: EkiOptions = field(default_factory=EkiOptions)
    gradient: GradientOptions = field(default_factory=GradientOptions)
    problem_options: ProblemOptions = field(default_factory=ProblemOptions)
    integrator: IntegratorOptions = field(default_factory=IntegratorOptions)

    def validate(self) -> None:
        msgs = []
        if self.problem not in PROBLEMS:
            msgs.append(f"problem: {self.problem!r} not in {PROBLEMS}")
        if self.optimizer not in OPTIMIZERS:
            msgs.append(f"optimizer: {self.optimizer!r} not in {OPTIMIZERS}")
        if (self.epochs is None) == (self.wall_clock_budget_seconds is None):
            msgs.append("epochs / wall_clock_budget_seconds: exactly one must be set")
        if self.epochs is not None and self.epochs < 0:
            msgs.append("epochs: must be nonnegative")
        if self.wall_clock_budget_seconds is not None and self.wall_clock_budget_seconds <= 0:
            msgs.append("wall_clock_budget_seconds: must be positive")
        if self.eki.ensemble_size < 2:
            msgs.append("eki.ensemble_size: need at least 2 members")
        if self.eki.expansion_mode not in ("fresh", "perturb"):
            msgs.append("eki.expansion_mode: must be 'fresh' or 'perturb'")
        if self.problem_options.assembly not in ("full", "shooting"):
            msgs.append("problem_options.assembly: must be 'full' or 'shooting'")
        if self.gradient.eta <= 0:
            msgs.append("gradient.eta: must be positive")
        if msgs:
            raise ConfigError(msgs)


def config_to_dict(config: ExperimentConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(data: dict) -> ExperimentConfig:
    def build(cls, block):
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(block) - set(fields)
        if unknown:
            raise ConfigError([f"{cls.__name__}: unknown keys {sorted(unknown)}"])
        kwargs = {}
        for key, value in block.items():
            if key in ("gamma_steps", "expansions") and value is not None:
                value = tuple(tuple(item) for item in value)
            kwargs[key] = value
        return cls(**kwargs)

    data = dict(data)
    for key, cls in (
        ("eki", EkiOptions),
        ("gradient", GradientOptions),
        ("problem_options", ProblemOptions),
        ("integrator", IntegratorOptions),
    ):
        if key in data and isinstance(data[key], dict):
            data[key] = build(cls, data[key])
    return build(ExperimentConfig, data)


def save_config(config: ExperimentConfig, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(config), fh, indent=2)
        fh.write("\n")


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Presets: the paper-default configurations, by name

_MUS = (0.001, 0.0025, 0.005, 0.0075, 0.01)


def _sysid_eki(problem, gamma0, alpha):
    return ExperimentConfig(
        problem=problem,
        optimizer="eki",
        epochs=100,
        eki=EkiOptions(ensemble_size=22, gamma0=gamma0, alpha=alpha),
    )


def _sysid_gradient(problem, optimizer, eta):
    return ExperimentConfig(
        problem=problem,
        optimizer=optimizer,
        epochs=2500,
        gradient=GradientOptions(eta=eta),
    )


def _control(optimizer, mu, eta=0.175):
    if optimizer == "eki":
        opt = EkiOptions(
            ensemble_size=2,
            gamma=0.3,
            gamma_prime=0.01,
            gamma_steps=((3, 0.15),),
            expansions=((3, 20),),
            step_cap_rel=None,
        )
        return ExperimentConfig(
            problem="linear_control",
            optimizer="eki",
            epochs=10,
            eki=opt,
            problem_options=ProblemOptions(mu=mu),
        )
    return ExperimentConfig(
        problem="linear_control",
        optimizer=optimizer,
        epochs=150,
        gradient=GradientOptions(eta=eta),
        problem_options=ProblemOptions(mu=mu),
    )


def presets() -> dict:
    """All built-in configurations, keyed by name."""
    out = {
        "spiral-eki": _sysid_eki("spiral", gamma0=0.9, alpha=0.35),
        "pendulum-eki": _sysid_eki("pendulum", gamma0=2.0, alpha=0.4),
    }
    for problem in ("spiral", "pendulum"):
        for optimizer in ("adam", "sgd"):
            for eta in (0.01, 0.1):
                out[f"{problem}-{optimizer}-{eta:g}"] = _sysid_gradient(problem, optimizer, eta)
    for mu in _MUS:
        out[f"control-eki-mu{mu:g}"] = _control("eki", mu)
        out[f"control-adam-mu{mu:g}"] = _control("adam", mu)
    return out


def preset(name: str) -> ExperimentConfig:
    table = presets()
    if name not in table:
        raise ConfigError([f"preset: unknown name {name!r}; see `eki-node presets`"])
    return table[name]


# ---------------------------------------------------------------------------
# Problem construction and re-evaluation

DENSE_CONTROL_FACTOR = 4


def build_problem(config: ExperimentConfig):
    """Instantiate the configured problem with its data stream."""
    ss_data, _ = np.random.SeedSequence(config.seed).spawn(2)
    data_rng = np.random.default_rng(ss_data)
    po = config.problem_options
    if config.problem == "linear_control":
        return problems.make_control_problem(mu=po.mu, integrator=_integrator_override(config, None))
    kwargs = dict(
        data_rng=data_rng,
        num_subsets=po.num_subsets,
        subset_length=po.subset_length,
        assembly=po.assembly,
        seed=config.seed,
    )
    if po.grid_size is not None:
        kwargs["grid_size"] = po.grid_size
    maker = problems.make_spiral_problem if config.problem == "spiral" else problems.make_pendulum_problem
    prob = maker(**kwargs)
    override = _integrator_override(config, prob.integrator)
    if override is not None:
        prob = dataclasses.replace(prob, integrator=override)
    return prob


def _integrator_override(config: ExperimentConfig, default: IntegratorConfig | None):
    io = config.integrator
    if io.method is None and io.dt is None and io.rtol is None and io.atol is None:
        return default
    base = default if default is not None else IntegratorConfig()
    return dataclasses.replace(
        base,
        method=io.method if io.method is not None else base.method,
        dt=io.dt if io.dt is not None else base.dt,
        rtol=io.rtol if io.rtol is not None else base.rtol,
        atol=io.atol if io.atol is not None else base.atol,
    )


def _dense_control_grid(prob) -> np.ndarray:
    return np.linspace(0.0, prob.t_final, DENSE_CONTROL_FACTOR * prob.quadrature_points + 1)


def reevaluate(config: ExperimentConfig, theta: np.ndarray) -> tuple[float, float]:
    """Train/test errors of a parameter vector under the config's problem.

    This is the report-integrity contract: the numbers in ``report.json``
    must come back identically from the serialized theta.
    """
    prob = build_problem(config)
    theta = np.asarray(theta, dtype=float)
    if config.problem == "linear_control":
        return (
            problems.control_mse(theta, prob),
            problems.control_mse(theta, prob, _dense_control_grid(prob)),
        )
    return _safe(problems.mse, theta, prob), _safe(problems.test_mse, theta, prob)


def _safe(fn, theta, prob) -> float:
    # Divergent parameters get the penalty value rather than killing the run.
    try:
        value = fn(theta, prob)
    except IntegrationError:
        return eki.PENALTY_LOSS
    return value if math.isfinite(value) else eki.PENALTY_LOSS


# ---------------------------------------------------------------------------
# RunReport


@dataclass
class RunReport:
    config: ExperimentConfig
    final_train_error: float
    final_test_error: float
    log_path: str
    theta: np.ndarray
    epochs_run: int
    runtime_seconds: float
    versions: dict
    rng: dict
    events: list
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "config": config_to_dict(self.config),
            "final_train_error": self.final_train_error,
            "final_test_error": self.final_test_error,
            "log_path": self.log_path,
            "theta": [float(v) for v in np.asarray(self.theta)],
            "epochs_run": self.epochs_run,
            "runtime_seconds": self.runtime_seconds,
            "versions": self.versions,
            "rng": self.rng,
            "events": self.events,
            "error": self.error,
        }


def load_report(report_dir: str) -> RunReport:
    path = os.path.join(report_dir, "report.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no report.json under {report_dir}")
    with open(path) as fh:
        raw = json.load(fh)
    return RunReport(
        config=config_from_dict(raw["config"]),
        final_train_error=raw["final_train_error"],
        final_test_error=raw["final_test_error"],
        log_path=raw["log_path"],
        theta=np.asarray(raw["theta"], dtype=float),
        epochs_run=raw["epochs_run"],
        runtime_seconds=raw["runtime_seconds"],
        versions=raw["versions"],
        rng=raw["rng"],
        events=raw["events"],
        error=raw.get("error"),
    )


def _versions() -> dict:
    from . import __version__

    return {
        "ekinode": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


# ---------------------------------------------------------------------------
# EKI loop internals


class _EkiDriver:
    """Shared mechanics for both problem families: evaluate members, log,
    and advance one controlled explicit-Euler step per epoch."""

    def __init__(self, config, prob, init_rng):
        self.config = config
        self.prob = prob
        self.opts = config.eki
        spec = prob.net if hasattr(prob, "net") else prob.controller
        self.spec = spec
        members = np.stack([nnet.mlp_init(spec, init_rng) for _ in range(self.opts.ensemble_size)])
        self.ens = eki.Ensemble(members=members, rng=init_rng)
        self.outputs = None
        self.events = []

    # problem family hooks -------------------------------------------------
    def forward(self, member):
        raise NotImplementedError

    def losses(self, outputs, epoch):
        raise NotImplementedError

    def target(self):
        raise NotImplementedError

    def step(self, outputs, gamma, h):
        raise NotImplementedError

    def gamma_for(self, epoch) -> float:
        raise NotImplementedError

    # shared mechanics -----------------------------------------------------
    def evaluate(self):
        self.outputs = [self.forward(m) for m in self.ens.members]

    def maybe_expand(self):
        done = {ep for ep, _ in self.ens.events}
        for ep, count in self.opts.expansions:
            if self.ens.epoch == ep and ep not in done:
                self.ens = eki.ensemble_expand(
                    self.ens, int(count), self.spec, mode=self.opts.expansion_mode
                )
                self.outputs = None

    def advance(self):
        """One epoch: try the full step, backtrack while it makes the
        ensemble worse, stall if no usable step length remains."""
        opts = self.opts
        epoch = self.ens.epoch
        gamma = self.gamma_for(epoch)
        cur_losses = self.losses(self.outputs, epoch)
        cur_fail = sum(o.failed for o in self.outputs)
        cur_best = min(cur_losses)

        unit = self.step(self.outputs, gamma, 1.0)
        delta = unit.members - self.ens.members
        rel = np.max(np.abs(delta), axis=1) / (np.max(np.abs(self.ens.members), axis=1) + 1.0)
        maxrel = float(rel.max()) if rel.size else 0.0
        if maxrel == 0.0:
            self.ens = unit
            return

        h = opts.step_size
        if opts.step_cap_rel is not None:
            h = min(h, opts.step_cap_rel / maxrel)
        for _ in range(opts.max_backtracks + 1):
            cand = dataclasses.replace(
                self.ens, members=self.ens.members + h * delta, epoch=epoch + 1
            )
            cand_outputs = [self.forward(m) for m in cand.members]
            cand_losses = self.losses(cand_outputs, epoch)
            cand_fail = sum(o.failed for o in cand_outputs)
            if cand_fail <= cur_fail and min(cand_losses) <= opts.accept_factor * cur_best:
                self.ens = cand
                self.outputs = cand_outputs
                return
            h = min(0.5 * h, 1.0 / maxrel)
            if h < 1e-15 / (1.0 + maxrel):
                break
        # No step survived: hold position, burn the epoch.
        self.events.append(("stall", epoch))
        self.ens = dataclasses.replace(self.ens, epoch=epoch + 1)

    def row_stats(self):
        epoch = self.ens.epoch
        losses = self.losses(self.outputs, epoch)
        valid = [l for l, o in zip(losses, self.outputs) if not o.failed]
        pool = valid if valid else losses
        idx, min_loss = eki.min_loss_member(losses)
        mean_loss = float(np.mean(pool))
        return idx, min_loss, mean_loss

    def best_theta(self):
        idx, _, _ = self.row_stats()
        return self.ens.members[idx].copy()


class _SysIdDriver(_EkiDriver):
    def __init__(self, config, prob, init_rng):
        super().__init__(config, prob, init_rng)
        self.y = prob.observations.values.reshape(-1)
        self.m_count = prob.observations.values.shape[0]
        self.schedule = eki.CovarianceSchedule(
            gamma0=self.opts.gamma0,
            alpha=self.opts.alpha,
            period=self.opts.schedule_period,
            enabled=self.opts.schedule_enabled,
        )

    def forward(self, member):
        return problems.sysid_forward_map(member, self.prob)

    def losses(self, outputs, epoch):
        return [
            eki.PENALTY_LOSS if o.failed else float(np.sum((o.g - self.y) ** 2) / self.m_count)
            for o in outputs
        ]

    def gamma_for(self, epoch):
        return eki.gamma_at(self.schedule, epoch)

    def step(self, outputs, gamma, h):
        return eki.eki_step(self.ens, outputs, self.y, gamma, h=h)

    def metrics(self, theta, min_loss):
        # The training MSE of the best member is its loss: same residuals.
        return min_loss, _safe(problems.test_mse, theta, self.prob)


class _ControlDriver(_EkiDriver):
    def __init__(self, config, prob, init_rng):
        super().__init__(config, prob, init_rng)
        self.z = np.array([prob.x_star, 0.0])

    def forward(self, member):
        return problems.control_forward_map(member, self.prob)

    def gamma_for(self, epoch):
        gamma = self.opts.gamma
        for ep, value in self.opts.gamma_steps:
            if epoch >= ep:
                gamma = value
        return gamma

    def losses(self, outputs, epoch):
        gamma = self.gamma_for(epoch)
        scale = self.prob.mu / (2.0 * self.opts.gamma_prime)
        return [
            eki.PENALTY_LOSS
            if o.failed
            else float(0.5 * (o.g[0] - self.prob.x_star) ** 2 / gamma + scale * o.h**2)
            for o in outputs
        ]

    def step(self, outputs, gamma, h):
        cov = eki.BlockCovariance(gamma=gamma, gamma_prime=self.opts.gamma_prime, mu=self.prob.mu)
        return eki.eki_step_regularized(self.ens, outputs, self.z, cov, h=h)

    def metrics(self, theta, min_loss):
        return (
            problems.control_mse(theta, self.prob),
            problems.control_mse(theta, self.prob, _dense_control_grid(self.prob)),
        )


# ---------------------------------------------------------------------------
# Gradient loop internals


class _GradientDriver:
    """Full-batch BPTT with Adam or plain SGD."""

    def __init__(self, config, prob, init_rng):
        self.config = config
        self.prob = prob
        spec = prob.net if hasattr(prob, "net") else prob.controller
        self.theta = nnet.mlp_init(spec, init_rng)
        self.is_control = isinstance(prob, problems.ControlProblem)
        self.adam = (
            gradbase.adam_init(self.theta.size, eta=config.gradient.eta)
            if config.optimizer == "adam"
            else None
        )
        self.loss = None
        self.events = []
        self.epoch = 0

    def evaluate(self):
        # Gradient baseline trains control at unit covariance scales.
        self.loss, self.grad, _ = gradbase.bptt_value_and_gradient(self.theta, self.prob)

    def advance(self):
        if not np.all(np.isfinite(self.grad)):
            raise RuntimeError(f"non-finite gradient at epoch {self.epoch}")
        if self.adam is not None:
            self.adam, self.theta = gradbase.adam_step(self.adam, self.theta, self.grad)
        else:
            self.theta = gradbase.sgd_step(self.theta, self.grad, self.config.gradient.eta)
        self.epoch += 1

    def metrics(self):
        if self.is_control:
            return (
                problems.control_mse(self.theta, self.prob),
                problems.control_mse(self.theta, self.prob, _dense_control_grid(self.prob)),
            )
        return (
            _safe(problems.mse, self.theta, self.prob),
            _safe(problems.test_mse, self.theta, self.prob),
        )


# ---------------------------------------------------------------------------
# run()


def run(config: ExperimentConfig, out_dir: str | None = None) -> RunReport:
    """Execute one training run, writing ``log.csv`` and ``report.json``.

    Deterministic under the epoch-budget stopping mode: identical
    (config, seed) produce bitwise-identical logs and reports.
    """
    config.validate()
    out = out_dir if out_dir is not None else config.out_dir
    if out is None:
        raise ConfigError(["out_dir: no output directory given"])
    os.makedirs(out, exist_ok=True)
    started = time.perf_counter()

    _, ss_init = np.random.SeedSequence(config.seed).spawn(2)
    init_rng = np.random.default_rng(ss_init)
    prob = build_problem(config)

    rows: list[list] = []
    error = None
    if config.optimizer == "eki":
        driver = (
            _ControlDriver(config, prob, init_rng)
            if config.problem == "linear_control"
            else _SysIdDriver(config, prob, init_rng)
        )
        theta, epochs_run = _run_eki(config, driver, rows, started)
        events = [("expansion", ep, c) for ep, c in driver.ens.events] + list(driver.events)
    else:
        driver = _GradientDriver(config, prob, init_rng)
        try:
            theta, epochs_run = _run_gradient(config, driver, rows, started)
        except RuntimeError as exc:
            error = str(exc)
            theta, epochs_run = driver.theta, driver.epoch
        events = driver.events

    log_path = os.path.join(out, "log.csv")
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for epoch, gamma, j, *values in rows:
            writer.writerow(
                [epoch, "" if gamma is None else _fmt(gamma), j] + [_fmt(v) for v in values]
            )

    final_train, final_test = (rows[-1][5], rows[-1][6]) if rows else (float("nan"),) * 2
    report = RunReport(
        config=config,
        final_train_error=final_train,
        final_test_error=final_test,
        log_path=os.path.abspath(log_path),
        theta=theta,
        epochs_run=epochs_run,
        runtime_seconds=time.perf_counter() - started,
        versions=_versions(),
        rng={
            "bit_generator": "PCG64",
            "seed": config.seed,
            "streams": ["data", "init"],
        },
        events=[list(e) for e in events],
        error=error,
    )
    with open(os.path.join(out, "report.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    return report


def _budget(config, started):
    """Yield epoch indices until the configured stopping point."""
    if config.epochs is not None:
        yield from range(config.epochs)
        return
    m = 0
    while time.perf_counter() - started < config.wall_clock_budget_seconds:
        yield m
        m += 1


def _fmt(x: float) -> str:
    return repr(float(x))


def _run_eki(config, driver, rows, started):
    def log_row():
        driver.maybe_expand()
        if driver.outputs is None:
            driver.evaluate()
        idx, min_loss, mean_loss = driver.row_stats()
        train, test = driver.metrics(driver.ens.members[idx], min_loss)
        rows.append(
            [
                driver.ens.epoch,
                driver.gamma_for(driver.ens.epoch),
                driver.ens.size,
                min_loss,
                mean_loss,
                train,
                test,
            ]
        )

    epochs_run = 0
    for _ in _budget(config, started):
        log_row()
        driver.advance()
        epochs_run += 1
    log_row()
    return driver.best_theta(), epochs_run


def _run_gradient(config, driver, rows, started):
    def log_row():
        train, test = driver.metrics()
        rows.append([driver.epoch, None, 1, driver.loss, driver.loss, train, test])

    epochs_run = 0
    for _ in _budget(config, started):
        driver.evaluate()
        if not math.isfinite(driver.loss):
            raise RuntimeError(f"non-finite loss at epoch {driver.epoch}")
        log_row()
        driver.advance()
        epochs_run += 1
    driver.evaluate()
    if not math.isfinite(driver.loss):
        raise RuntimeError(f"non-finite loss at epoch {driver.epoch}")
    log_row()
    return driver.theta, epochs_run


# ---------------------------------------------------------------------------
# table()


def table(configs: list, replicates: int, out_dir: str) -> list[dict]:
    """Run each config ``replicates`` times (seed, seed+1, ...) and summarize.

    Returns one dict per config with median/min train and test errors, and
    writes ``table.csv`` plus an aligned ``table.txt`` under ``out_dir``.
    Failed replicates are counted per cell, not fatal.
    """
    if replicates < 1:
        raise ConfigError(["replicates: must be >= 1"])
    os.makedirs(out_dir, exist_ok=True)
    summary = []
    for i, item in enumerate(configs):
        name, config = _named_config(item, i)
        trains, tests, failures = [], [], 0
        for r in range(replicates):
            rep_config = dataclasses.replace(config, seed=config.seed + r, out_dir=None)
            rep_dir = os.path.join(out_dir, f"{name}-rep{r}")
            try:
                report = run(rep_config, out_dir=rep_dir)
                if report.error is not None:
                    raise RuntimeError(report.error)
                trains.append(report.final_train_error)
                tests.append(report.final_test_error)
            except (RuntimeError, ConfigError):
                failures += 1
        cell = {
            "name": name,
            "problem": config.problem,
            "optimizer": config.optimizer,
            "replicates": replicates,
            "failures": failures,
            "median_train": float(np.median(trains)) if trains else float("nan"),
            "min_train": float(np.min(trains)) if trains else float("nan"),
            "median_test": float(np.median(tests)) if tests else float("nan"),
            "min_test": float(np.min(tests)) if tests else float("nan"),
        }
        summary.append(cell)

    keys = ["name", "problem", "optimizer", "replicates", "failures",
            "median_train", "min_train", "median_test", "min_test"]
    with open(os.path.join(out_dir, "table.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(summary)
    with open(os.path.join(out_dir, "table.txt"), "w") as fh:
        fh.write(format_table(summary) + "\n")
    return summary


def format_table(summary: list[dict]) -> str:
    keys = ["name", "problem", "optimizer", "replicates", "failures",
            "median_train", "min_train", "median_test", "min_test"]

    def cell(value):
        return f"{value:.3e}" if isinstance(value, float) else str(value)

    grid = [keys] + [[cell(row[k]) for k in keys] for row in summary]
    widths = [max(len(r[c]) for r in grid) for c in range(len(keys))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in grid]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _named_config(item, index):
    if isinstance(item, str):
        return item, preset(item)
    if isinstance(item, ExperimentConfig):
        return f"config{index}", item
    if isinstance(item, dict):
        item = dict(item)
        name = item.pop("name", f"config{index}")
        return name, config_from_dict(item)
    raise ConfigError([f"configs[{index}]: expected preset name or config object"])


# ---------------------------------------------------------------------------
# plot_script()

_PLOT_SCRIPT = '''\
"""Regenerate figures from the CSV files next to this script."""
import csv
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def read(name):
    with open(os.path.join(HERE, name)) as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    cols = {h: [float(r[i]) if r[i] else float("nan") for r in data]
            for i, h in enumerate(header)}
    return cols


for name in sorted(os.listdir(HERE)):
    if name.startswith("trajectory") and name.endswith(".csv"):
        cols = read(name)
        fig, ax = plt.subplots()
        t = cols.pop("t")
        for label, series in cols.items():
            style = "--" if "reference" in label or "optimal" in label else "-"
            ax.plot(t, series, style, label=label)
        if os.path.exists(os.path.join(HERE, "observations.csv")):
            obs = read("observations.csv")
            t_obs = obs.pop("t")
            for label, series in obs.items():
                ax.plot(t_obs, series, "r.", ms=4,
                        label=None if label != "obs_x1" else "observations")
        ax.set_xlabel("t")
        ax.legend(fontsize=7)
        fig.savefig(os.path.join(HERE, name.replace(".csv", ".png")), dpi=150)
        plt.close(fig)
    if name.startswith("loss_curve") and name.endswith(".csv"):
        cols = read(name)
        fig, ax = plt.subplots()
        ax.semilogy(cols["epoch"], cols["min_loss"], label="min loss")
        ax.semilogy(cols["epoch"], cols["train_mse"], label="train")
        ax.semilogy(cols["epoch"], cols["test_mse"], label="test")
        ax.set_xlabel("epoch")
        ax.legend(fontsize=7)
        fig.savefig(os.path.join(HERE, name.replace(".csv", ".png")), dpi=150)
        plt.close(fig)
print("wrote figures under", HERE)
'''


def plot_script(report_dirs, out_dir: str) -> list[str]:
    """Emit plot data CSVs plus one matplotlib script under ``out_dir``.

    System-identification reports produce ``trajectory.csv`` (learned vs
    reference states), ``observations.csv`` and ``loss_curve.csv``; control
    reports produce one ``trajectory_mu*.csv`` each (learned and analytic
    control/state) plus shared loss curves.  Returns the written file names.
    """
    if isinstance(report_dirs, str):
        report_dirs = [report_dirs]
    reports = [(d, load_report(d)) for d in report_dirs]
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def emit(name, header, columns):
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in zip(*columns):
                writer.writerow([_fmt(v) for v in row])
        written.append(name)

    for i, (report_dir, report) in enumerate(reports):
        config = report.config
        prob = build_problem(config)
        if config.problem == "linear_control":
            suffix = f"_mu{config.problem_options.mu:g}"
            grid = prob.quadrature_grid()
            u = problems.controller_values(report.theta, prob, grid)
            u_ref = problems.optimal_control(grid, prob.a, prob.b, prob.x0, prob.x_star, prob.t_final)
            x_ref = problems.optimal_state(grid, prob.a, prob.b, prob.x0, prob.x_star, prob.t_final)
            x = _control_trajectory(report.theta, prob, grid)
            emit(
                f"trajectory{suffix}.csv",
                ["t", "u_learned", "u_optimal", "x_learned", "x_optimal"],
                [grid, u, u_ref, x, x_ref],
            )
        else:
            suffix = f"_{i}" if len(reports) > 1 else ""
            obs = prob.observations
            try:
                learned = problems.sysid_trajectory(report.theta, prob).states
            except IntegrationError:
                learned = np.full_like(obs.grid_states, np.nan)
            n = obs.grid_states.shape[1]
            emit(
                f"trajectory{suffix}.csv",
                ["t"]
                + [f"x{i + 1}_learned" for i in range(n)]
                + [f"x{i + 1}_reference" for i in range(n)],
                [obs.grid_times] + [learned[:, i] for i in range(n)] + [obs.grid_states[:, i] for i in range(n)],
            )
            emit(
                f"observations{suffix}.csv",
                ["t"] + [f"obs_x{i + 1}" for i in range(n)],
                [obs.times] + [obs.values[:, i] for i in range(n)],
            )
        log = _read_log(os.path.join(report_dir, report.log_path))
        emit(
            f"loss_curve{suffix}.csv",
            ["epoch", "min_loss", "train_mse", "test_mse"],
            [log["epoch"], log["min_loss"], log["train_mse"], log["test_mse"]],
        )

    script = os.path.join(out_dir, "plot.py")
    with open(script, "w") as fh:
        fh.write(_PLOT_SCRIPT)
    written.append("plot.py")
    return written


def _control_trajectory(theta, prob, grid):
    layers = nnet.unflatten(prob.controller, theta)
    act = prob.controller.activation

    def field(x, t):
        return prob.a * x + prob.b * nnet.mlp_apply(layers, np.array([t]), act)

    try:
        return integrate(field, np.array([prob.x0]), grid, prob.integrator).states[:, 0]
    except IntegrationError:
        return np.full(grid.size, np.nan)


def _read_log(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    return {
        h: np.array([float(r[i]) if r[i] else np.nan for r in data])
        for i, h in enumerate(header)
    }
