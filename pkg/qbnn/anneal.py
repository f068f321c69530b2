"""
Replica-parallel simulated annealing of QUBO models.

Replicas are evolved together as rows of a state matrix. Each replica draws
its initial state and its acceptance tests from its own random stream,
derived from the master seed and the replica index; the order in which
variables are visited is shared by all replicas. This makes the outcome
independent of how replicas are split among worker processes.
"""
from __future__ import annotations

import hashlib
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.optimize

from . import consts, fields
from .models import Model
from .qubo import QuboModel
from .validation import Validation

log = logging.getLogger("qbnn.anneal")

SWEEP_ORDERS = ("randomized", "sequential")

# Spawn keys of the random streams derived from the master seed
_REPLICA_STREAM = 0
_ORDER_STREAM = 1

# Upper bound on the number of uniform variates buffered per block
_UNIFORM_BUFFER = 4_000_000


def derive_seed(master: int, *parts) -> int:
    """
    Derive a 64 bit seed from a master seed and a sequence of identifiers
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode())
    for part in parts:
        h.update(b"\0")
        h.update(str(part).encode())
    return int.from_bytes(h.digest(), "little")


def default_workers() -> int:
    """
    Number of annealing worker processes: QBNN_WORKERS if set, else the
    number of processors
    """
    value = os.environ.get("QBNN_WORKERS")
    if value:
        try:
            workers = int(value)
        except ValueError:
            raise ValueError(f"QBNN_WORKERS={value!r} is not a number") from None
        if workers < 1:
            raise ValueError(f"QBNN_WORKERS={value!r} must be at least 1")
        return workers
    return os.cpu_count() or 1


class Schedule(Model):
    """
    Geometric cooling from t_max to t_min over n_steps sweeps
    """
    t_max = fields.FloatField(default=1.0 / consts.DEFAULT_BETA_MIN)
    t_min = fields.FloatField(default=1.0 / consts.DEFAULT_BETA_MAX)
    n_steps = fields.IntegerField(min_value=1, default=consts.DEFAULT_STEPS)

    def validate_model(self, validation: Validation):
        if self.t_max is not None and self.t_max <= 0:
            validation.add_error(self._meta["t_max"], "must be positive")
        if self.t_min is not None and self.t_min <= 0:
            validation.add_error(self._meta["t_min"], "must be positive")
        if self.t_max is not None and self.t_min is not None and self.t_min > self.t_max:
            validation.add_error(
                    (self._meta["t_min"], self._meta["t_max"]),
                    f"t_min {self.t_min} is higher than t_max {self.t_max}")

    @classmethod
    def from_inverse(cls, beta_min: float, beta_max: float, n_steps: int = consts.DEFAULT_STEPS) -> "Schedule":
        """
        Build a schedule from initial and final inverse temperatures
        """
        return cls(t_max=1.0 / beta_min, t_min=1.0 / beta_max, n_steps=n_steps)

    def temperatures(self) -> np.ndarray:
        """
        Temperature of each sweep.

        A single sweep runs at t_min.
        """
        if self.n_steps == 1:
            return np.array([self.t_min])
        res = self.t_max * (self.t_min / self.t_max) ** (np.arange(self.n_steps) / (self.n_steps - 1))
        res[0] = self.t_max
        res[-1] = self.t_min
        return res


class AnnealConfig(Model):
    n_replicas = fields.IntegerField(min_value=1, default=consts.DEFAULT_REPLICAS)
    schedule = fields.ModelField(Schedule)
    seed = fields.SeedField()
    sweep_order = fields.StringField(choices=SWEEP_ORDERS, default="randomized")
    workers = fields.IntegerField(min_value=1, null=True, help="worker processes, default from QBNN_WORKERS")


class AnnealOutcome(NamedTuple):
    # Lowest energy state found
    best_state: np.ndarray
    best_energy: float
    # Lowest energy reached by each replica, and the state where it was reached
    per_replica_energies: np.ndarray
    per_replica_states: np.ndarray
    replica_of_best: int
    # Lowest energy over all replicas after each sweep
    trace: np.ndarray
    # Largest relative difference between the incrementally updated energy
    # and a full evaluation at the end of the run
    drift: float


def _replica_generator(seed: int, replica: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(_REPLICA_STREAM, replica))))


def _sweep_orders(seed: int, size: int, n_steps: int, sweep_order: str):
    """
    Generate the visiting order of each sweep
    """
    if sweep_order == "sequential":
        order = np.arange(size)
        for _ in range(n_steps):
            yield order
    else:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(_ORDER_STREAM,))))
        for _ in range(n_steps):
            yield rng.permutation(size)


def _anneal_block(
        q: QuboModel, temperatures: np.ndarray, seed: int, sweep_order: str,
        replicas: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """
    Anneal a block of replicas.

    Return the record energies, record states, the per-sweep minimum record
    energy and the energy drift
    """
    size = q.size
    n_steps = len(temperatures)
    generators = [_replica_generator(seed, r) for r in replicas]
    z = np.array([g.integers(0, 2, size=size) for g in generators], dtype=np.int8)
    fields_ = q.local_fields(z)
    energy = q.energies(z)
    record_energy = energy.copy()
    record_state = z.copy()
    trace = np.empty(n_steps)

    coupling = q.coupling
    indptr, indices, data = coupling.indptr, coupling.indices, coupling.data

    # Uniforms are drawn per replica in chunks of sweeps
    chunk = max(1, _UNIFORM_BUFFER // max(1, len(replicas) * size))
    uniforms = np.empty((0, 0, 0))

    for step, (temperature, order) in enumerate(zip(temperatures, _sweep_orders(seed, size, n_steps, sweep_order))):
        pos_in_chunk = step % chunk
        if pos_in_chunk == 0:
            count = min(chunk, n_steps - step)
            uniforms = np.stack([g.random((count, size)) for g in generators], axis=1)
        sweep_uniforms = uniforms[pos_in_chunk]

        for pos, i in enumerate(order):
            up = 1 - 2 * z[:, i]
            delta = up * fields_[:, i]
            accept = sweep_uniforms[:, pos] < np.exp(np.minimum(-delta / temperature, 0.0))
            if not accept.any():
                continue
            rows = np.flatnonzero(accept)
            energy[rows] += delta[rows]
            z[rows, i] ^= 1
            start, end = indptr[i], indptr[i + 1]
            if start != end:
                fields_[np.ix_(rows, indices[start:end])] += np.outer(up[rows], data[start:end])

        better = energy < record_energy
        if better.any():
            record_energy[better] = energy[better]
            record_state[better] = z[better]
        trace[step] = record_energy.min()

    final = q.energies(z)
    drift = float(np.max(np.abs(final - energy) / np.maximum(1.0, np.abs(final))))
    return q.energies(record_state), record_state, trace, drift


def anneal(q: QuboModel, cfg: Optional[AnnealConfig] = None) -> AnnealOutcome:
    """
    Minimise q by simulated annealing with Metropolis acceptance
    """
    if cfg is None:
        cfg = AnnealConfig()
    cfg.check("annealer configuration")
    if q.size < 1:
        raise ValueError("cannot anneal a model without variables")

    temperatures = cfg.schedule.temperatures()
    workers = cfg.workers or default_workers()
    block_size = math.ceil(cfg.n_replicas / workers)
    blocks = [range(start, min(start + block_size, cfg.n_replicas))
              for start in range(0, cfg.n_replicas, block_size)]

    if len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=len(blocks)) as executor:
            futures = [executor.submit(_anneal_block, q, temperatures, cfg.seed, cfg.sweep_order, block)
                       for block in blocks]
            results = [f.result() for f in futures]
    else:
        results = [_anneal_block(q, temperatures, cfg.seed, cfg.sweep_order, blocks[0])]

    energies = np.concatenate([r[0] for r in results])
    states = np.concatenate([r[1] for r in results]).astype(np.uint8)
    trace = np.min(np.stack([r[2] for r in results]), axis=0)
    drift = max(r[3] for r in results)

    if drift > 1e-6:
        log.warning("energy drift %g between incremental and full evaluation", drift)
    else:
        log.debug("energy drift %g", drift)

    best = int(np.argmin(energies))
    log.info("annealed %d variables with %d replicas × %d sweeps: best energy %g (replica %d)",
             q.size, cfg.n_replicas, len(temperatures), energies[best], best)
    return AnnealOutcome(
            best_state=states[best].copy(),
            best_energy=float(energies[best]),
            per_replica_energies=energies,
            per_replica_states=states,
            replica_of_best=best,
            trace=trace,
            drift=drift)


class _BudgetExhausted(Exception):
    pass


def tune_temperatures(
        q: QuboModel, base: Optional[AnnealConfig] = None,
        budget: int = consts.DEFAULT_TUNE_BUDGET,
        pilot_runs: int = consts.PILOT_RUNS,
        target: Optional[float] = None) -> Schedule:
    """
    Tune t_min and t_max with Nelder-Mead, minimising the mean best energy
    of pilot annealing runs.

    The search runs on (log t_min, log(t_max / t_min)), starting from the
    schedule of base; the absolute value of the second coordinate keeps
    t_min ≤ t_max. At most budget pilot evaluations are made; tuning stops
    early when the objective reaches target.
    """
    if base is None:
        base = AnnealConfig()
    base.check("annealer configuration")
    if budget < consts.MIN_TUNE_BUDGET:
        raise ValueError(f"tuning budget {budget} is lower than {consts.MIN_TUNE_BUDGET}")

    pilot_seeds = [derive_seed(base.seed, "pilot", i) for i in range(pilot_runs)]
    n_steps = base.schedule.n_steps

    def decode(x) -> Schedule:
        t_min = math.exp(x[0])
        return Schedule(t_max=t_min * math.exp(abs(x[1])), t_min=t_min, n_steps=n_steps)

    evaluations: List[Tuple[float, Schedule]] = []

    def objective(x) -> float:
        if len(evaluations) >= budget:
            raise _BudgetExhausted()
        schedule = decode(x)
        energies = []
        for seed in pilot_seeds:
            cfg = base.replace(schedule=schedule, seed=seed)
            energies.append(anneal(q, cfg).best_energy)
        value = float(np.mean(energies))
        evaluations.append((value, schedule))
        log.debug("tuning: t_max=%g t_min=%g: mean best energy %g", schedule.t_max, schedule.t_min, value)
        if target is not None and value <= target:
            raise _BudgetExhausted()
        return value

    x0 = np.array([math.log(base.schedule.t_min), math.log(base.schedule.t_max / base.schedule.t_min)])
    simplex = np.array([x0, x0 + [0.5, 0.0], x0 + [0.0, 0.5]])
    try:
        scipy.optimize.minimize(
                objective, x0, method="Nelder-Mead",
                options={"initial_simplex": simplex, "maxfev": budget, "xatol": 1e-3, "fatol": 1e-9})
    except _BudgetExhausted:
        pass

    # min() keeps the earliest of equally good schedules
    value, best = min(evaluations, key=lambda item: item[0])
    log.info("tuned temperatures after %d evaluations: t_max=%g t_min=%g, mean best energy %g",
             len(evaluations), best.t_max, best.t_min, value)
    return best
