"""Link-delay inference: least-squares seeding plus a bounded particle swarm."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flowplan import FlowPlan
from .linalg import gaussian_rank
from .probesim import Campaign


class MeasurementError(ValueError):
    pass


@dataclass
class MeasurementSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    link_index: tuple

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        self.rhs = np.asarray(self.rhs, dtype=float).ravel()
        if self.matrix.shape[0] != self.rhs.size:
            raise MeasurementError(f"{self.matrix.shape[0]} rows but {self.rhs.size} measurements")
        if not np.isin(self.matrix, (0.0, 1.0)).all():
            raise MeasurementError("measurement matrix must be binary")
        if self.link_index is None:
            self.link_index = tuple(range(self.matrix.shape[1]))
        if len(self.link_index) != self.matrix.shape[1]:
            raise MeasurementError("link_index length does not match the column count")

    @property
    def rank(self) -> int:
        return gaussian_rank(self.matrix)

    @property
    def null_space_dim(self) -> int:
        return self.matrix.shape[1] - self.rank


def build_system(plan: FlowPlan, campaign: Campaign) -> MeasurementSystem:
    if len(campaign.eed) != len(plan.flows):
        raise MeasurementError(f"{len(plan.flows)} flows but {len(campaign.eed)} end-to-end delays")
    order = np.argsort([f.id for f in plan.flows], kind="stable")
    return MeasurementSystem(plan.measurement_matrix[order], np.asarray(campaign.eed)[order], plan.link_index)


def least_squares(sys: MeasurementSystem) -> np.ndarray:
    """Minimum-norm minimiser of ||M x - rhs||_2 (LAPACK gelsd via numpy)."""
    x, *_ = np.linalg.lstsq(sys.matrix, sys.rhs, rcond=None)
    return x


def residuals(position, sys: MeasurementSystem) -> np.ndarray:
    return sys.matrix @ np.asarray(position, dtype=float) - sys.rhs


def fitness(position, sys: MeasurementSystem) -> float:
    """Negative L2 residual norm; 0 means the position explains every measurement."""
    return -float(np.linalg.norm(residuals(position, sys)))


def _fitness_batch(positions: np.ndarray, sys: MeasurementSystem) -> np.ndarray:
    return -np.linalg.norm(positions @ sys.matrix.T - sys.rhs, axis=1)


@dataclass(frozen=True)
class SwarmConfig:
    population_size: int = 50
    max_generations: int = 500
    inertia: float = 0.7
    cognitive: float = 1.5
    social: float = 1.5
    stagnation_window: int = 20
    mutation_fraction: float = 0.2
    bounds: tuple[float, float] | None = None
    tolerance: float = 1e-9
    cognitive_uses_personal_best: bool = True

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not 0 < self.inertia < 1:
            raise ValueError("inertia must lie in (0, 1)")
        if self.cognitive <= 0 or self.social <= 0:
            raise ValueError("cognitive and social constants must be positive")
        if self.stagnation_window < 1:
            raise ValueError("stagnation_window must be >= 1")
        if not 0 <= self.mutation_fraction <= 1:
            raise ValueError("mutation_fraction must lie in [0, 1]")
        if self.bounds is not None and not self.bounds[0] < self.bounds[1]:
            raise ValueError("lower bound must be below upper bound")

    def resolve_bounds(self, sys: MeasurementSystem) -> tuple[float, float]:
        if self.bounds is not None:
            return float(self.bounds[0]), float(self.bounds[1])
        top = float(np.max(np.abs(sys.rhs), initial=0.0))
        return 0.0, 10.0 * top if top > 0 else 1.0


@dataclass
class Population:
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_fitness: np.ndarray

    def copy(self) -> "Population":
        return Population(self.position.copy(), self.velocity.copy(),
                          self.best_position.copy(), self.best_fitness.copy())


def mutate_population(pop: Population, cfg: SwarmConfig, rng: np.random.Generator,
                      bounds: tuple[float, float], protect: int) -> Population:
    """Resample positions and velocities of a random ``mutation_fraction`` of particles.

    Particle ``protect`` (the global-best holder) is never touched. Personal
    bests survive mutation.
    """
    n, dim = pop.position.shape
    k = min(int(np.floor(cfg.mutation_fraction * n)), n - 1)
    out = pop.copy()
    if k == 0:
        return out
    pool = np.array([i for i in range(n) if i != protect])
    picked = np.sort(rng.choice(pool, size=k, replace=False))
    lo, hi = bounds
    span = hi - lo
    out.position[picked] = rng.uniform(lo, hi, size=(k, dim))
    out.velocity[picked] = rng.uniform(-span, span, size=(k, dim))
    return out


@dataclass
class SolveResult:
    delays: np.ndarray
    fitness: float
    generations_used: int
    non_unique: bool
    null_space_dim: int
    residuals: np.ndarray
    history: list = field(default_factory=list, repr=False)
    seed_fitness: float = float("nan")


def pso_solve(sys: MeasurementSystem, cfg: SwarmConfig | None = None, seed: int = 0,
              trace=None) -> SolveResult:
    """Infer link delays with a particle swarm seeded by the least-squares solution.

    One particle starts at the least-squares solution clipped into the box;
    the rest start uniformly at random. Each generation evaluates fitness,
    updates personal and global bests, then moves every particle. The swarm
    stops as soon as the best fitness reaches ``-tolerance`` and mutates a
    share of particles whenever the global best stalls for
    ``stagnation_window`` generations.

    ``trace``, if given, is called as ``trace(generation, population)`` after
    every move; it is meant for tests and diagnostics.
    """
    cfg = cfg or SwarmConfig()
    rng = np.random.Generator(np.random.PCG64(seed))
    lo, hi = cfg.resolve_bounds(sys)
    span = hi - lo
    n, dim = cfg.population_size, sys.matrix.shape[1]

    pos = np.empty((n, dim))
    pos[: n - 1] = rng.uniform(lo, hi, size=(n - 1, dim))
    pos[n - 1] = np.clip(least_squares(sys), lo, hi)
    vel = rng.uniform(-span, span, size=(n, dim)) * 0.1
    fit = _fitness_batch(pos, sys)
    pop = Population(pos, vel, pos.copy(), fit.copy())
    seed_fitness = float(fit[n - 1])

    g = int(np.argmax(fit))
    g_pos, g_fit = pos[g].copy(), float(fit[g])
    history = [g_fit]
    stall = 0
    nullity = sys.null_space_dim
    t = 0

    while g_fit < -cfg.tolerance and t < cfg.max_generations:
        t += 1
        r1 = rng.random((n, dim))
        r2 = rng.random((n, dim))
        attract = pop.best_position if cfg.cognitive_uses_personal_best else g_pos
        pop.velocity = (cfg.inertia * pop.velocity
                        + cfg.cognitive * r1 * (attract - pop.position)
                        + cfg.social * r2 * (g_pos - pop.position))
        moved = pop.position + pop.velocity
        clipped = (moved < lo) | (moved > hi)
        pop.position = np.clip(moved, lo, hi)
        pop.velocity[clipped] = 0.0

        fit = _fitness_batch(pop.position, sys)
        better = fit > pop.best_fitness
        pop.best_position[better] = pop.position[better]
        pop.best_fitness[better] = fit[better]
        g = int(np.argmax(pop.best_fitness))
        if pop.best_fitness[g] > g_fit:
            g_pos, g_fit = pop.best_position[g].copy(), float(pop.best_fitness[g])
            stall = 0
        else:
            stall += 1
        history.append(g_fit)
        if trace is not None:
            trace(t, pop)

        if stall >= cfg.stagnation_window and g_fit < -cfg.tolerance:
            # personal bests only improve, so the best holder is the argmax
            holder = int(np.argmax(pop.best_fitness))
            pop = mutate_population(pop, cfg, rng, (lo, hi), protect=holder)
            stall = 0

    return SolveResult(g_pos, g_fit, t, nullity > 0, nullity, residuals(g_pos, sys), history, seed_fitness)
