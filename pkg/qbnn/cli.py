"""
Command line interface of qbnntool.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Any, List, Optional, Sequence

import numpy as np

from . import builder, codec, consts, dataset, oracle
from .anneal import AnnealConfig, default_workers
from .trainer import AnnealerOverrides, ExperimentSpec, fit, run_experiment_matrix
from .topology import architecture_names, parse_architecture

log = logging.getLogger("qbnntool")

ARCH_HELP = "architecture: fcA, convKxK[xF][+fcA], or net0 to net{} for the reference networks ({})".format(
        len(architecture_names()) - 1, ", ".join(architecture_names()))


class Fail(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    """
    Argument parser that exits with status 1 on usage errors
    """
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _dump(data: Any, file=None):
    json.dump(data, file or sys.stdout, indent=1)
    (file or sys.stdout).write("\n")


class Command:
    NAME: str
    HELP: Optional[str] = None

    def __init__(self, args):
        self.args = args

    def run(self) -> int:
        raise NotImplementedError(f"{self.__class__.__name__}.run is not implemented")

    @classmethod
    def add_subparser(cls, subparsers):
        ap = subparsers.add_parser(cls.NAME, help=cls.HELP)
        ap.set_defaults(handler=cls)
        return ap


class AnnealerOptionsMixin:
    """
    Command line flags for the annealer configuration
    """
    @classmethod
    def add_annealer_arguments(cls, ap):
        ap.add_argument("--seed", type=int, default=0, help="master random seed (default: 0)")
        ap.add_argument("--replicas", type=int, help=f"number of replicas (default: {consts.DEFAULT_REPLICAS})")
        ap.add_argument("--steps", type=int, help=f"sweeps per run (default: {consts.DEFAULT_STEPS})")
        ap.add_argument("--tmax", type=float, help=f"initial temperature (default: 1/{consts.DEFAULT_BETA_MIN})")
        ap.add_argument("--tmin", type=float, help=f"final temperature (default: 1/{consts.DEFAULT_BETA_MAX})")
        ap.add_argument("--workers", type=int, help="worker processes (default: $QBNN_WORKERS or number of CPUs)")
        ap.add_argument("--sweep-order", choices=("randomized", "sequential"), help="variable visiting order")

    def annealer_overrides(self) -> AnnealerOverrides:
        return AnnealerOverrides(
                n_replicas=self.args.replicas, n_steps=self.args.steps,
                t_max=self.args.tmax, t_min=self.args.tmin,
                sweep_order=self.args.sweep_order, workers=self.args.workers)

    def annealer_config(self) -> AnnealConfig:
        cfg = self.annealer_overrides().apply(AnnealConfig(seed=self.args.seed))
        cfg.check("annealer configuration")
        return cfg


class DatasetMixin:
    @classmethod
    def add_dataset_arguments(cls, ap):
        ap.add_argument("--dataset", help="dataset file (.txt, .glyphs, .json or .yaml); default: generated")
        ap.add_argument("--dataset-seed", type=int, default=0, help="seed of the generated dataset (default: 0)")

    def load_dataset(self) -> dataset.Dataset:
        if self.args.dataset:
            return dataset.load(self.args.dataset)
        return dataset.generate_canonical(self.args.dataset_seed)


class DatasetGen(Command):
    """
    generate the canonical dataset
    """
    NAME = "dataset"
    HELP = "generate the canonical glyph dataset"

    def run(self):
        if self.args.action != "gen":
            raise Fail(f"unsupported dataset action {self.args.action!r}")
        ds = dataset.generate_canonical(self.args.seed)
        if self.args.out:
            dataset.save(ds, self.args.out)
        else:
            codec.GlyphText().write_file(ds, sys.stdout)
        log.info("generated %d training and %d test images with seed %d", len(ds.train), len(ds.test), self.args.seed)
        return 0

    @classmethod
    def add_subparser(cls, subparsers):
        ap = super().add_subparser(subparsers)
        ap.add_argument("action", choices=("gen",), help="dataset action")
        ap.add_argument("--seed", type=int, default=0, help="seed used to draw the test images (default: 0)")
        ap.add_argument("--out", help="output file (.txt, .glyphs, .json or .yaml); default: standard output")
        return ap


class Train(AnnealerOptionsMixin, DatasetMixin, Command):
    """
    train one network and print its evaluation
    """
    NAME = "train"
    HELP = "train a network once and print its evaluation as JSON"

    def run(self):
        t = parse_architecture(self.args.arch)
        ds = self.load_dataset()
        cfg = self.annealer_config()
        params = builder.BuildParams(gamma=self.args.gamma)
        params.check("build parameters")
        tune_budget = self.args.tune_budget if self.args.tune else None
        res = fit(t, ds, params, cfg, tune_budget=tune_budget, provenance={"seed": cfg.seed, "gamma": params.gamma})
        report = res.report
        config = {
            "arch": t.name,
            "gamma": params.gamma,
            "dataset": self.args.dataset,
            "dataset_seed": None if self.args.dataset else self.args.dataset_seed,
            "tune_budget": tune_budget,
            "workers": cfg.workers or default_workers(),
            "annealer": cfg.to_jsonable(),
            "schedule": res.schedule.to_jsonable(),
        }
        result = {
            "config": config,
            "report": {
                "train_acc": report.train_accuracy,
                "test_acc": report.test_accuracy,
                "s1": report.s1,
                "s2": report.s2,
                "unsat": report.n_unsat,
                "unsat_frac": report.unsat_fraction,
                "constraints": report.constraints,
                "energy": report.energy,
                "feasible": report.feasible,
            },
        }
        if self.args.network:
            codec.JSON().save(res.network.to_jsonable(), self.args.network)
        _dump(result)
        return 0

    @classmethod
    def add_subparser(cls, subparsers):
        ap = super().add_subparser(subparsers)
        ap.add_argument("--arch", required=True, help=ARCH_HELP)
        ap.add_argument("--gamma", type=float, default=0.0, help="margin reward (default: 0)")
        ap.add_argument("--tune", action="store_true", help="tune temperatures with Nelder-Mead before training")
        ap.add_argument("--tune-budget", type=int, default=consts.DEFAULT_TUNE_BUDGET,
                        help=f"pilot evaluations when tuning (default: {consts.DEFAULT_TUNE_BUDGET})")
        ap.add_argument("--network", help="also save the trained weights and biases to this JSON file")
        cls.add_annealer_arguments(ap)
        cls.add_dataset_arguments(ap)
        return ap


class Matrix(Command):
    """
    run an experiment spec file
    """
    NAME = "matrix"
    HELP = "run an experiment matrix and write per-run and summary CSV files"

    def load_spec(self) -> ExperimentSpec:
        pathname = self.args.spec
        try:
            codec_cls = codec.Codecs(include=(codec.JSON, codec.YAML)).codec_from_filename(pathname)
            spec = codec_cls().load(pathname, model=ExperimentSpec)
        except TypeError as e:
            raise Fail(f"{pathname}: {e}")
        if self.args.runs is not None:
            spec.runs = self.args.runs
        if self.args.seed is not None:
            spec.seed = self.args.seed
        if self.args.tune_budget is not None:
            spec.tune_budget = self.args.tune_budget
        overrides = AnnealerOverrides(
                n_replicas=self.args.replicas, n_steps=self.args.steps, workers=self.args.workers)
        if overrides.has_value():
            if spec.annealer is None:
                spec.annealer = overrides
            else:
                for name in ("n_replicas", "n_steps", "workers"):
                    value = getattr(overrides, name)
                    if value is not None:
                        setattr(spec.annealer, name, value)
        spec.check(pathname)
        return spec

    def run(self):
        spec = self.load_spec()
        _dump({"config": spec.to_jsonable()}, sys.stderr if self.args.out_summary is None else None)
        records, summaries = run_experiment_matrix(spec)
        if self.args.out_runs:
            codec.CSV(consts.RUN_COLUMNS).save(records, self.args.out_runs)
        if self.args.out_summary:
            codec.CSV().save(summaries, self.args.out_summary)
        else:
            codec.CSV().write_file(summaries, sys.stdout)
        return 0

    @classmethod
    def add_subparser(cls, subparsers):
        ap = super().add_subparser(subparsers)
        ap.add_argument("--spec", required=True, help="experiment spec file (.json or .yaml)")
        ap.add_argument("--runs", type=int, help="runs per cell, overriding the spec file")
        ap.add_argument("--seed", type=int, help="master seed, overriding the spec file")
        ap.add_argument("--tune-budget", type=int, help="temperature tuning budget, overriding the spec file")
        ap.add_argument("--replicas", type=int, help="number of replicas, overriding the spec file")
        ap.add_argument("--steps", type=int, help="sweeps per run, overriding the spec file")
        ap.add_argument("--workers", type=int, help="worker processes, overriding the spec file")
        ap.add_argument("--out-runs", help="CSV file with one row per run")
        ap.add_argument("--out-summary", help="CSV file with one row per cell; default: standard output")
        return ap


def random_batch(input_size: int, size: int, seed: int) -> List[tuple]:
    """
    Draw size random bipolar images with random labels
    """
    rng = np.random.default_rng(seed)
    res = []
    for _ in range(size):
        pixels = tuple(int(x) for x in rng.choice((-1, 1), size=input_size))
        label = consts.LABELS[int(rng.integers(len(consts.LABELS)))]
        res.append((pixels, label))
    return res


class Oracle(Command):
    """
    brute force checks on small instances
    """
    NAME = "oracle"
    HELP = "check the QUBO encoding by exhaustive enumeration"

    def run(self):
        if self.args.action == "theorem":
            return self.run_theorem()
        return self.run_verify()

    def run_theorem(self):
        failed = [m for m in range(1, self.args.max_terms + 1) if not oracle.theorem_holds(m)]
        rows = [{"x": list(r.x), "pi": r.pi, "rho": r.rho, "bits": list(r.bits), "activation": r.activation}
                for r in oracle.activation_table(self.args.terms)]
        products = [dict(zip(("v", "y", "psi", "penalty"), row)) for row in oracle.product_penalty_table()]
        _dump({
            "config": {"max_terms": self.args.max_terms, "terms": self.args.terms},
            "theorem_failures": failed,
            "activation_table": rows,
            "product_table": products,
        })
        return 0 if not failed else 2

    def run_verify(self):
        if not self.args.arch:
            raise Fail("oracle verify needs --arch")
        t = parse_architecture(self.args.arch, input_side=self.args.input_side)
        if self.args.dataset:
            images = dataset.load(self.args.dataset).train[:self.args.batch]
            batch = dataset.make_batch(images)
        else:
            batch = random_batch(t.input_size, self.args.batch, self.args.seed)
        params = len(t.groups) + len(t.non_inputs)
        try:
            report = oracle.check_equivalence(t, batch, seed=self.args.seed)
        except oracle.CapacityError as e:
            raise Fail(str(e))
        _dump({
            "config": {"arch": t.name, "input_side": self.args.input_side, "batch": len(batch),
                       "seed": self.args.seed, "dataset": self.args.dataset, "parameters": params},
            "fits": report.fits,
            "zero_states": report.zero_states,
            "exhaustive": report.exhaustive,
            "bad_witnesses": report.bad_witnesses,
            "bad_zero_states": report.bad_zero_states,
            "ok": report.ok,
        })
        return 0 if report.ok else 2

    @classmethod
    def add_subparser(cls, subparsers):
        ap = super().add_subparser(subparsers)
        ap.add_argument("action", choices=("verify", "theorem"), help="oracle action")
        ap.add_argument("--arch", help="architecture to verify")
        ap.add_argument("--batch", type=int, default=2, help="number of training images (default: 2)")
        ap.add_argument("--input-side", type=int, default=2, help="side of the random input images (default: 2)")
        ap.add_argument("--dataset", help="take the training images from this dataset file")
        ap.add_argument("--seed", type=int, default=0, help="seed of the random images (default: 0)")
        ap.add_argument("--max-terms", type=int, default=12, help="largest term count checked by theorem")
        ap.add_argument("--terms", type=int, default=3, help="term count of the activation table (default: 3)")
        return ap


class ExportQubo(DatasetMixin, Command):
    """
    write the training QUBO of a network
    """
    NAME = "export-qubo"
    HELP = "write the training QUBO of a network as a sparse text model"

    def run(self):
        t = parse_architecture(self.args.arch)
        ds = self.load_dataset()
        params = builder.BuildParams(gamma=self.args.gamma, precision=self.args.precision)
        params.check("build parameters")
        q, vm = builder.build(t, dataset.make_batch(ds.train), params)
        counts = vm.counts()
        config = {
            "arch": t.name,
            "dataset": self.args.dataset,
            "dataset_seed": None if self.args.dataset else self.args.dataset_seed,
            "build": params.to_jsonable(),
            "counts": counts,
        }
        # The model goes to standard output when there is no output file
        _dump({"config": config}, sys.stderr if self.args.out is None else None)
        comments = [f"network {t.name} gamma {params.gamma!r}"]
        comments.extend(f"{name} {value}" for name, value in counts.items())
        qubo_codec = codec.QuboText()
        if self.args.out:
            qubo_codec.save(q, self.args.out, comments=comments)
        else:
            qubo_codec.write_file(q, sys.stdout, comments=comments)
        log.info("%s: %d variables, %d couplings", t.name, q.size, len(q.quadratic))
        return 0

    @classmethod
    def add_subparser(cls, subparsers):
        ap = super().add_subparser(subparsers)
        ap.add_argument("--arch", required=True, help=ARCH_HELP)
        ap.add_argument("--gamma", type=float, default=0.0, help="margin reward (default: 0)")
        ap.add_argument("--precision", choices=tuple(builder.PRECISIONS), default="double",
                        help="coefficient precision (default: double)")
        ap.add_argument("--out", help="output .qubo file; default: standard output")
        cls.add_dataset_arguments(ap)
        return ap


COMMANDS = (DatasetGen, Train, Matrix, Oracle, ExportQubo)


def make_parser() -> ArgumentParser:
    parser = ArgumentParser(description="Train binary neural networks as QUBO problems")
    parser.add_argument("--verbose", "-v", action="store_true", help="verbose output")
    parser.add_argument("--debug", action="store_true", help="debug output")
    subparsers = parser.add_subparsers(help="actions", required=True)
    subparsers.dest = "command"
    for cmd in COMMANDS:
        cmd.add_subparser(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)

    log_format = "%(levelname)s %(message)s"
    level = logging.WARN
    if args.debug:
        level = logging.DEBUG
    elif args.verbose:
        level = logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format=log_format)

    handler = args.handler(args)
    try:
        return handler.run()
    except Fail as e:
        log.error("%s", e)
        return 2
    except Exception as e:
        if args.debug:
            log.exception("%s failed", args.command)
        else:
            log.error("%s", e)
        return 2
