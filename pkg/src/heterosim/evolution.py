"""Genetic algorithm over the 13-gene forager genome."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .foraging import ForagerParams, ForagingSettings, run_episode
from .streams import Streams

# (name, min, max); order matches ForagerParams
GENOME_SCHEMA = (
    ("omega", 0.0, 1.0),
    ("gamma_crw", 0.0, 3.0),
    ("delta_crw", 0.05, 2.0),
    ("t_p", 0.0, 8.0),
    ("t_f", 0.0, 8.0),
    ("t_h", 0.0, 8.0),
    ("travel_speed", 0.0, 0.3),
    ("search_speed", 0.0, 0.3),
    ("give_up_time", 5.0, 240.0),
    ("fidelity_decay", 0.0, 0.05),
    ("pheromone_decay", 0.0, 0.05),
    ("dispersal_radius", 0.1, 1.8),
    ("crw_interval", 0.2, 3.0),
)
LOWER = np.array([g[1] for g in GENOME_SCHEMA])
UPPER = np.array([g[2] for g in GENOME_SCHEMA])

assert tuple(g[0] for g in GENOME_SCHEMA) == tuple(f.name for f in fields(ForagerParams))


def genome_to_params(genome) -> ForagerParams:
    g = np.asarray(genome, dtype=float)
    if g.shape != (len(GENOME_SCHEMA),):
        raise ValueError(f"genome needs {len(GENOME_SCHEMA)} genes, got shape {g.shape}")
    if np.any(g < LOWER - 1e-12) or np.any(g > UPPER + 1e-12):
        raise ValueError("genome outside its declared bounds")
    return ForagerParams.from_vector(g)


def params_to_genome(params: ForagerParams) -> np.ndarray:
    return np.clip(np.array(params.as_vector(), dtype=float), LOWER, UPPER)


def random_genome(rng) -> np.ndarray:
    return rng.uniform(LOWER, UPPER)


@dataclass(frozen=True)
class GAConfig:
    population_size: int = 20
    generations: int = 30
    tournament_size: int = 3
    crossover_rate: float = 0.7
    mutation_rate: float = 0.15
    mutation_sd: float = 0.1  # fraction of each gene's range
    episodes_per_eval: int = 1
    episode_length: float = 300.0
    seed: int = 0
    clusters: str = "4x8"
    foragers: int = 2
    dt: float = 0.2

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        for name in ("crossover_rate", "mutation_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.tournament_size < 1 or self.generations < 0 or self.episodes_per_eval < 1:
            raise ValueError("tournament_size and episodes_per_eval must be >= 1, generations >= 0")
        if self.mutation_sd < 0 or self.episode_length <= 0:
            raise ValueError("mutation_sd must be >= 0 and episode_length > 0")


def evaluation_seeds(config: GAConfig):
    """Episode seeds shared by every genome so fitness comparisons are paired."""
    rng = Streams(config.seed).get("ga-eval")
    return [int(s) for s in rng.integers(0, 2**31 - 1, size=config.episodes_per_eval)]


def evaluate_genome(genome, config: GAConfig, scenario: ForagingSettings = None, seeds=None) -> float:
    """Mean tags/hour over the evaluation episodes, without the drone."""
    params = genome_to_params(genome)
    scenario = scenario or ForagingSettings()
    seeds = evaluation_seeds(config) if seeds is None else seeds
    rates = [
        run_episode(params, config.clusters, drone=False, n_foragers=config.foragers, duration=config.episode_length,
                    dt=config.dt, seed=s, settings=scenario).tags_per_hour
        for s in seeds
    ]
    return float(np.mean(rates))


def _tournament(rng, fitness, k):
    idx = rng.integers(0, len(fitness), size=k)
    return int(idx[np.argmax(fitness[idx])])


def _crossover(rng, a, b, rate):
    if rng.random() >= rate:
        return a.copy(), b.copy()
    mask = rng.random(len(a)) < 0.5
    return np.where(mask, a, b), np.where(mask, b, a)


def _mutate(rng, g, rate, sd):
    hit = rng.random(len(g)) < rate
    step = rng.normal(0.0, sd, size=len(g)) * (UPPER - LOWER)
    return np.clip(np.where(hit, g + step, g), LOWER, UPPER)


@dataclass
class GAHistory:
    best: list = field(default_factory=list)
    mean: list = field(default_factory=list)
    best_genomes: list = field(default_factory=list)


def ga_run(config: GAConfig, scenario: ForagingSettings = None, initial=None, evaluate=None):
    """Tournament selection, uniform crossover, clipped Gaussian mutation, elitism of one.

    Generation 0 is the initial population; each later generation is bred from the
    previous one. Returns (best_genome, history) with one history entry per generation.
    """
    rng = Streams(config.seed).get("ga")
    seeds = evaluation_seeds(config)
    cache = {}

    def fit(g):
        key = tuple(np.round(g, 12))
        if key not in cache:
            cache[key] = (evaluate or (lambda x: evaluate_genome(x, config, scenario, seeds)))(g)
        return cache[key]

    if initial is not None:
        pop = [np.clip(np.asarray(g, dtype=float), LOWER, UPPER) for g in initial]
        while len(pop) < config.population_size:
            pop.append(random_genome(rng))
        pop = pop[: config.population_size]
    else:
        pop = [random_genome(rng) for _ in range(config.population_size)]
    history = GAHistory()
    fitness = np.array([fit(g) for g in pop])

    def record():
        b = int(np.argmax(fitness))
        history.best.append(float(fitness[b]))
        history.mean.append(float(np.mean(fitness)))
        history.best_genomes.append(pop[b].tolist())
        return b

    elite = record()
    for _ in range(config.generations):
        nxt = [pop[elite].copy()]
        while len(nxt) < config.population_size:
            a = pop[_tournament(rng, fitness, config.tournament_size)]
            b = pop[_tournament(rng, fitness, config.tournament_size)]
            c1, c2 = _crossover(rng, a, b, config.crossover_rate)
            nxt.append(_mutate(rng, c1, config.mutation_rate, config.mutation_sd))
            if len(nxt) < config.population_size:
                nxt.append(_mutate(rng, c2, config.mutation_rate, config.mutation_sd))
        pop = nxt
        fitness = np.array([fit(g) for g in pop])
        elite = record()
    return pop[elite].copy(), history


def genome_dict(genome):
    return {name: float(v) for (name, _, _), v in zip(GENOME_SCHEMA, genome)}


def save_result(path, best, history: GAHistory, config: GAConfig):
    out = {
        "schema_version": 1,
        "ga_config": asdict(config),
        "best_genome": genome_dict(best),
        "best_fitness": history.best[-1] if history.best else None,
        "history": [{"generation": i, "best": b, "mean": m} for i, (b, m) in enumerate(zip(history.best, history.mean))],
        "genome_schema": [{"name": n, "min": lo, "max": hi} for n, lo, hi in GENOME_SCHEMA],
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return out


def load_ga_config(data) -> tuple:
    """Split an ``evolve`` JSON document into (GAConfig, ForagingSettings, output name)."""
    data = dict(data)
    settings = ForagingSettings(**data.pop("foraging", {}))
    out = data.pop("output", "evolved_genome.json")
    data.pop("schema_version", None)
    known = {f.name for f in fields(GAConfig)}
    extra = sorted(set(data) - known)
    if extra:
        raise ValueError(f"unknown GA config key(s) {extra}")
    return GAConfig(**data), settings, out


def is_finite_genome(g):
    return all(math.isfinite(x) for x in g)
