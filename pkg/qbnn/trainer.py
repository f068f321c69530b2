"""
Training runs and experiment matrices.
"""
from __future__ import annotations

import logging
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import builder, consts, fields
from .anneal import AnnealConfig, AnnealOutcome, Schedule, anneal, derive_seed, tune_temperatures
from .dataset import Batch, Dataset, generate_canonical, make_batch
from .evaluator import EvalReport, TrainedNetwork, decode, evaluate
from .models import Model
from .qubo import QuboModel
from .topology import Topology, parse_architecture, remove_nodes
from .validation import Validation

log = logging.getLogger("qbnn.trainer")


class DropoutParams(Model):
    eta = fields.FloatField(
            min_value=0.0, default=0.01,
            help="learning rate of the factors; 0 keeps them at zero, as in the baseline without dropout")
    beta = fields.FloatField(default=consts.DROPOUT_BETA, help="damping per unsatisfied constraint")
    iterations = fields.IntegerField(min_value=1, default=consts.DROPOUT_ITERATIONS)
    input_drop_count = fields.IntegerField(min_value=0, default=consts.DROPOUT_INPUT_DROPS)
    n_drop = fields.IntegerField(min_value=0, default=0, help="hidden nodes dropped per iteration")
    seed = fields.SeedField()
    batch_size = fields.IntegerField(min_value=1, null=True, help="training images per iteration, default all")

    def validate_model(self, validation: Validation):
        if self.beta is not None and not 0 < self.beta <= 1:
            validation.add_error(self._meta["beta"], f"{self.beta} is not in (0, 1]")


def update_factor(a, b, eta: float, beta: float, n_usc: int):
    """
    Factor update: a + η·β^n_usc·b
    """
    return a + eta * beta ** n_usc * b


class FactorState:
    """
    External bias factors, indexed by weight group id and node id of the full
    network
    """
    def __init__(self, t: Topology):
        self.c_w = np.zeros(t.group_count)
        self.c_b = np.zeros(t.node_count)

    def restrict(self, t: Topology) -> Tuple[List[float], List[float]]:
        """
        Return the factors of the parameters of t, in the order used by the
        QUBO builder
        """
        return [float(self.c_w[g]) for g in t.groups], [float(self.c_b[n]) for n in t.non_inputs]

    def update(self, net: TrainedNetwork, eta: float, beta: float, n_usc: int):
        """
        Move the factors of the parameters of net towards their values
        """
        groups = list(net.weights)
        self.c_w[groups] = update_factor(
                self.c_w[groups], np.array([net.weights[g] for g in groups], dtype=float), eta, beta, n_usc)
        nodes = list(net.biases)
        self.c_b[nodes] = update_factor(
                self.c_b[nodes], np.array([net.biases[n] for n in nodes], dtype=float), eta, beta, n_usc)


class Training(NamedTuple):
    q: QuboModel
    vm: builder.VariableMap
    outcome: AnnealOutcome
    network: TrainedNetwork
    report: EvalReport
    schedule: Schedule


def fit(
        t: Topology, ds: Dataset, params: builder.BuildParams, cfg: AnnealConfig,
        tune_budget: Optional[int] = None, batch: Optional[Batch] = None,
        provenance: Optional[Dict[str, Any]] = None) -> Training:
    """
    Build the training QUBO, anneal it and evaluate the best state
    """
    if batch is None:
        batch = make_batch(ds.train)
    q, vm = builder.build(t, batch, params)
    if tune_budget:
        # With no margin or bias terms the minimum energy is 0
        target = 0.0 if not params.gamma and not params.c_w and not params.c_b else None
        cfg = AnnealConfig.clean_value(cfg)
        cfg.schedule = tune_temperatures(q, cfg, tune_budget, target=target)
    outcome = anneal(q, cfg)
    network = decode(vm, outcome.best_state, provenance=provenance)
    report = evaluate(network, ds)
    report.energy = outcome.best_energy
    return Training(q, vm, outcome, network, report, cfg.schedule)


def train_once(
        t: Topology, ds: Dataset, gamma: float, cfg: AnnealConfig,
        tune_budget: Optional[int] = None) -> EvalReport:
    """
    Train on the training images with margin reward gamma, and evaluate on
    the whole dataset
    """
    if gamma < 0:
        raise ValueError(f"gamma {gamma} must not be negative")
    params = builder.BuildParams(alpha=1.0, gamma=gamma)
    res = fit(t, ds, params, cfg, tune_budget=tune_budget,
              provenance={"seed": cfg.seed, "gamma": gamma})
    log.info("%s γ=%g seed=%d: train %.3f test %.3f s1 %d s2 %d unsat %d",
             t.name, gamma, cfg.seed, res.report.train_accuracy, res.report.test_accuracy or 0.0,
             res.report.s1, res.report.s2, res.report.n_unsat)
    return res.report


def _draw_drops(t: Topology, dp: DropoutParams, rng: np.random.Generator) -> List[int]:
    if dp.input_drop_count > len(t.inputs):
        raise ValueError(f"cannot drop {dp.input_drop_count} inputs out of {len(t.inputs)}")
    if dp.n_drop > len(t.hidden):
        raise ValueError(f"cannot drop {dp.n_drop} hidden nodes out of {len(t.hidden)}")
    drop = []
    if dp.input_drop_count:
        drop.extend(int(x) for x in rng.choice(t.inputs, size=dp.input_drop_count, replace=False))
    if dp.n_drop:
        drop.extend(int(x) for x in rng.choice(t.hidden, size=dp.n_drop, replace=False))
    return drop


def _iteration_batch(full: Batch, dp: DropoutParams, iteration: int) -> Batch:
    if not dp.batch_size or dp.batch_size >= len(full):
        return full
    start = iteration * dp.batch_size
    return [full[(start + i) % len(full)] for i in range(dp.batch_size)]


def train_dropout(
        t: Topology, ds: Dataset, dp: DropoutParams, cfg: AnnealConfig,
        tune_budget: Optional[int] = None, gamma: float = 0.0) -> EvalReport:
    """
    Learn external bias factors on randomly reduced networks, then train the
    full network with them
    """
    dp.check("dropout parameters")
    rng = np.random.default_rng(derive_seed(dp.seed, "dropout"))
    factors = FactorState(t)
    full_batch = make_batch(ds.train)
    n_steps = cfg.schedule.n_steps

    for iteration in range(dp.iterations):
        drop = _draw_drops(t, dp, rng)
        reduced = remove_nodes(t, drop)
        c_w, c_b = factors.restrict(reduced)
        q, vm = builder.build(
                reduced, _iteration_batch(full_batch, dp, iteration),
                builder.BuildParams(gamma=gamma, c_w=c_w, c_b=c_b))
        iteration_cfg = cfg.replace(
                schedule=Schedule.from_inverse(consts.DEFAULT_BETA_MIN, consts.DEFAULT_BETA_MAX, n_steps),
                seed=derive_seed(cfg.seed, "dropout", iteration))
        outcome = anneal(q, iteration_cfg)
        net = decode(vm, outcome.best_state)
        n_usc = net.audit["unsat_activation"] + net.audit["unsat_product"]
        if n_usc:
            log.warning("%s dropout iteration %d: %d unsatisfied constraints", t.name, iteration, n_usc)
        factors.update(net, dp.eta, dp.beta, n_usc)
        log.debug("%s dropout iteration %d: dropped %s, energy %g, |c_w| %g, |c_b| %g",
                  t.name, iteration, sorted(drop), outcome.best_energy,
                  float(np.abs(factors.c_w).sum()), float(np.abs(factors.c_b).sum()))

    c_w, c_b = factors.restrict(t)
    res = fit(t, ds, builder.BuildParams(gamma=gamma, c_w=c_w, c_b=c_b), cfg, tune_budget=tune_budget,
              provenance={"seed": cfg.seed, "gamma": gamma, "eta": dp.eta, "n_drop": dp.n_drop})
    log.info("%s η=%g n_drop=%d seed=%d: train %.3f test %.3f unsat %d",
             t.name, dp.eta, dp.n_drop, cfg.seed, res.report.train_accuracy, res.report.test_accuracy or 0.0,
             res.report.n_unsat)
    return res.report


class DropoutGrid(Model):
    etas = fields.ListField(fields.FloatField(min_value=0.0), min_num=1)
    n_drops = fields.ListField(fields.IntegerField(min_value=0), min_num=1)
    beta = fields.FloatField(default=consts.DROPOUT_BETA)
    iterations = fields.IntegerField(min_value=1, default=consts.DROPOUT_ITERATIONS)
    input_drops = fields.IntegerField(min_value=0, default=consts.DROPOUT_INPUT_DROPS)
    batch_size = fields.IntegerField(min_value=1, null=True)
    baseline = fields.BooleanField(default=False, help="also run a cell without dropout")


class AnnealerOverrides(Model):
    n_replicas = fields.IntegerField(min_value=1, null=True)
    n_steps = fields.IntegerField(min_value=1, null=True)
    t_max = fields.FloatField(null=True)
    t_min = fields.FloatField(null=True)
    sweep_order = fields.StringField(choices=("randomized", "sequential"), null=True)
    workers = fields.IntegerField(min_value=1, null=True)

    def apply(self, cfg: AnnealConfig) -> AnnealConfig:
        """
        Return a copy of cfg with the values set in this record
        """
        res = AnnealConfig.clean_value(cfg)
        schedule = Schedule.clean_value(res.schedule)
        for name in ("t_max", "t_min", "n_steps"):
            value = getattr(self, name)
            if value is not None:
                setattr(schedule, name, value)
        res.schedule = schedule
        for name in ("n_replicas", "sweep_order", "workers"):
            value = getattr(self, name)
            if value is not None:
                setattr(res, name, value)
        return res


class ExperimentSpec(Model):
    name = fields.StringField(null=True)
    architectures = fields.ListField(fields.StringField(), min_num=1)
    gammas = fields.ListField(fields.FloatField(min_value=0.0), null=True)
    dropout = fields.ModelField(DropoutGrid, null=True)
    runs = fields.IntegerField(min_value=1, default=1)
    seed = fields.SeedField()
    dataset_seed = fields.SeedField()
    tune_budget = fields.IntegerField(min_value=consts.MIN_TUNE_BUDGET, null=True)
    annealer = fields.ModelField(AnnealerOverrides, null=True)

    def validate_model(self, validation: Validation):
        for arch in self.architectures:
            try:
                parse_architecture(arch)
            except ValueError as e:
                validation.add_error(self._meta["architectures"], str(e))


class RunRecord(Model):
    network = fields.StringField()
    gamma = fields.FloatField()
    eta = fields.FloatField()
    n_drop = fields.IntegerField()
    seed = fields.SeedField(default=None)
    train_acc = fields.FloatField()
    test_acc = fields.FloatField(null=True)
    s1 = fields.IntegerField()
    s2 = fields.IntegerField()
    unsat_frac = fields.FloatField()
    energy = fields.FloatField(null=True)
    feasible = fields.BooleanField()


class SummaryRow(Model):
    network = fields.StringField()
    gamma = fields.FloatField()
    eta = fields.FloatField()
    n_drop = fields.IntegerField()
    runs = fields.IntegerField()
    test_min = fields.FloatField(null=True)
    test_max = fields.FloatField(null=True)
    test_mean = fields.FloatField(null=True)
    test_median = fields.FloatField(null=True)
    train_mean = fields.FloatField()
    unsat_mean = fields.FloatField()
    s1_mean = fields.FloatField()
    s2_mean = fields.FloatField()
    feasible_fraction = fields.FloatField()
    feasible_test_mean = fields.FloatField(null=True)


def summarize(cell: Sequence[RunRecord]) -> SummaryRow:
    """
    Aggregate the runs of one experiment cell
    """
    if not cell:
        raise ValueError("cannot summarize an empty cell")
    first = cell[0]
    test = np.array([r.test_acc for r in cell if r.test_acc is not None])
    feasible_test = [r.test_acc for r in cell if r.feasible and r.test_acc is not None]
    return SummaryRow(
        network=first.network, gamma=first.gamma, eta=first.eta, n_drop=first.n_drop,
        runs=len(cell),
        test_min=float(test.min()) if len(test) else None,
        test_max=float(test.max()) if len(test) else None,
        test_mean=float(test.mean()) if len(test) else None,
        test_median=float(np.median(test)) if len(test) else None,
        train_mean=float(np.mean([r.train_acc for r in cell])),
        unsat_mean=float(np.mean([r.unsat_frac for r in cell])),
        s1_mean=float(np.mean([r.s1 for r in cell])),
        s2_mean=float(np.mean([r.s2 for r in cell])),
        feasible_fraction=sum(1 for r in cell if r.feasible) / len(cell),
        feasible_test_mean=float(np.mean(feasible_test)) if feasible_test else None,
    )


class Cell(NamedTuple):
    network: str
    gamma: float
    # None for cells trained without dropout
    dropout: Optional[DropoutParams]

    @property
    def id(self) -> str:
        if self.dropout is None:
            return f"{self.network}/gamma={self.gamma!r}"
        return f"{self.network}/gamma={self.gamma!r}/eta={self.dropout.eta!r}/n_drop={self.dropout.n_drop}"


def experiment_cells(spec: ExperimentSpec) -> List[Cell]:
    gammas = spec.gammas or [0.0]
    cells = []
    for arch in spec.architectures:
        if spec.dropout is None:
            cells.extend(Cell(arch, gamma, None) for gamma in gammas)
            continue
        grid = spec.dropout
        if grid.baseline:
            cells.append(Cell(arch, gammas[0], None))
        for eta in grid.etas:
            for n_drop in grid.n_drops:
                cells.append(Cell(arch, gammas[0], DropoutParams(
                    eta=eta, beta=grid.beta, iterations=grid.iterations,
                    input_drop_count=grid.input_drops, n_drop=n_drop, batch_size=grid.batch_size)))
    return cells


def run_experiment_matrix(
        spec: ExperimentSpec, runs: Optional[int] = None, seed: Optional[int] = None,
        ds: Optional[Dataset] = None) -> Tuple[List[RunRecord], List[SummaryRow]]:
    """
    Run every cell of an experiment the given number of times.

    Return the per-run records and one summary row per cell
    """
    spec.check("experiment")
    if runs is None:
        runs = spec.runs
    if runs < 1:
        raise ValueError(f"runs {runs} must be at least 1")
    if seed is None:
        seed = spec.seed
    if ds is None:
        ds = generate_canonical(spec.dataset_seed)

    base = AnnealConfig()
    if spec.annealer is not None:
        base = spec.annealer.apply(base)

    records: List[RunRecord] = []
    summaries: List[SummaryRow] = []
    topologies: Dict[str, Topology] = {}
    for cell in experiment_cells(spec):
        t = topologies.get(cell.network)
        if t is None:
            t = topologies[cell.network] = parse_architecture(cell.network)
        # The training QUBO without dropout is the same for every run of a
        # cell, so its temperatures are tuned once
        cell_cfg = AnnealConfig.clean_value(base)
        if cell.dropout is None and spec.tune_budget:
            q, _ = builder.build(t, make_batch(ds.train), builder.BuildParams(gamma=cell.gamma))
            cell_cfg.update(seed=derive_seed(seed, cell.id, "tune"))
            target = 0.0 if not cell.gamma else None
            cell_cfg.schedule = tune_temperatures(q, cell_cfg, spec.tune_budget, target=target)

        cell_records = []
        for run in range(runs):
            cfg = cell_cfg.replace(seed=derive_seed(seed, cell.id, run))
            if cell.dropout is None:
                report = train_once(t, ds, cell.gamma, cfg)
                eta, n_drop = 0.0, 0
            else:
                dp = cell.dropout.replace(seed=derive_seed(seed, cell.id, run, "drop"))
                report = train_dropout(t, ds, dp, cfg, tune_budget=spec.tune_budget, gamma=cell.gamma)
                eta, n_drop = dp.eta, dp.n_drop
            cell_records.append(RunRecord(
                network=cell.network, gamma=cell.gamma, eta=eta, n_drop=n_drop, seed=cfg.seed,
                train_acc=report.train_accuracy, test_acc=report.test_accuracy,
                s1=report.s1, s2=report.s2, unsat_frac=report.unsat_fraction,
                energy=report.energy, feasible=report.feasible))
        summary = summarize(cell_records)
        log.info("%s: %d runs, test mean %s, train mean %.3f, unsat mean %.4f",
                 cell.id, runs, summary.test_mean, summary.train_mean, summary.unsat_mean)
        records.extend(cell_records)
        summaries.append(summary)
    return records, summaries
