import itertools
import os
from unittest import TestCase, mock

import numpy as np

from qbnn import anneal as sa
from qbnn.anneal import AnnealConfig, Schedule
from qbnn.qubo import QuboModel
from qbnn.validation import InvalidModelError


def random_model(size, seed, density=0.4):
    rng = np.random.default_rng(seed)
    quadratic = {}
    for i in range(size):
        for j in range(i + 1, size):
            if rng.random() < density:
                quadratic[(i, j)] = float(rng.integers(-5, 6))
    return QuboModel(size, 0.0, rng.integers(-5, 6, size=size).astype(float), quadratic)


def ground_energy(q):
    states = np.array(list(itertools.product((0, 1), repeat=q.size)), dtype=np.uint8)
    return float(q.energies(states).min())


def small_config(**kw):
    args = dict(
        n_replicas=8,
        schedule=Schedule(t_max=10.0, t_min=0.05, n_steps=100),
        seed=1,
        workers=1,
    )
    args.update(kw)
    return AnnealConfig(**args)


class TestSchedule(TestCase):
    def test_temperatures(self):
        s = Schedule(t_max=4.0, t_min=1.0, n_steps=3)
        self.assertEqual(list(s.temperatures()), [4.0, 2.0, 1.0])

        s = Schedule(t_max=5.0, t_min=0.1, n_steps=1000)
        temps = s.temperatures()
        self.assertEqual(len(temps), 1000)
        self.assertEqual(temps[0], 5.0)
        self.assertEqual(temps[-1], 0.1)
        self.assertTrue(np.all(np.diff(temps) < 0))

        # A single sweep runs at the final temperature
        self.assertEqual(list(Schedule(t_max=5.0, t_min=0.1, n_steps=1).temperatures()), [0.1])

    def test_from_inverse(self):
        s = Schedule.from_inverse(0.2, 8.6, 10)
        self.assertAlmostEqual(s.t_max, 5.0)
        self.assertAlmostEqual(s.t_min, 1 / 8.6)
        self.assertEqual(s.n_steps, 10)

        s = Schedule()
        self.assertAlmostEqual(s.t_max, 5.0)
        self.assertEqual(s.n_steps, 1000)

    def test_validate(self):
        Schedule(t_max=1.0, t_min=1.0).check()
        with self.assertRaises(InvalidModelError):
            Schedule(t_max=1.0, t_min=2.0).check()
        with self.assertRaises(InvalidModelError):
            Schedule(t_max=-1.0, t_min=-2.0).check()
        with self.assertRaises(InvalidModelError):
            Schedule(n_steps=0).check()
        with self.assertRaises(InvalidModelError):
            AnnealConfig(sweep_order="backwards").check()


class TestSeeds(TestCase):
    def test_derive_seed(self):
        self.assertEqual(sa.derive_seed(1, "cell", 3), sa.derive_seed(1, "cell", 3))
        self.assertNotEqual(sa.derive_seed(1, "cell", 3), sa.derive_seed(2, "cell", 3))
        self.assertNotEqual(sa.derive_seed(1, "cell", 3), sa.derive_seed(1, "cell", 4))
        self.assertNotEqual(sa.derive_seed(1, "a", "b"), sa.derive_seed(1, "ab"))
        self.assertLess(sa.derive_seed(0), 2 ** 64)

    def test_default_workers(self):
        with mock.patch.dict(os.environ, {"QBNN_WORKERS": "3"}):
            self.assertEqual(sa.default_workers(), 3)
        for value in ("foo", "0", "-2"):
            with mock.patch.dict(os.environ, {"QBNN_WORKERS": value}):
                with self.assertRaises(ValueError):
                    sa.default_workers()
        with mock.patch.dict(os.environ):
            os.environ.pop("QBNN_WORKERS", None)
            self.assertEqual(sa.default_workers(), os.cpu_count() or 1)


class TestAnneal(TestCase):
    def test_minimum(self):
        for seed in range(3):
            q = random_model(12, seed)
            res = sa.anneal(q, small_config(n_replicas=16, schedule=Schedule(t_max=10.0, t_min=0.05, n_steps=200)))
            self.assertEqual(res.best_energy, ground_energy(q))
            self.assertEqual(q.energy(res.best_state), res.best_energy)

    def test_outcome(self):
        q = random_model(20, 4)
        cfg = small_config()
        res = sa.anneal(q, cfg)
        self.assertEqual(res.per_replica_states.shape, (8, 20))
        self.assertEqual(res.per_replica_energies.shape, (8,))
        self.assertEqual(list(res.per_replica_energies), list(q.energies(res.per_replica_states)))
        self.assertEqual(res.best_energy, res.per_replica_energies.min())
        self.assertEqual(res.per_replica_energies[res.replica_of_best], res.best_energy)
        self.assertTrue(np.array_equal(res.per_replica_states[res.replica_of_best], res.best_state))

        # The trace is the running record over all replicas
        self.assertEqual(len(res.trace), 100)
        self.assertTrue(np.all(np.diff(res.trace) <= 0))
        self.assertEqual(res.trace[-1], res.best_energy)
        self.assertLessEqual(res.drift, 1e-6)

    def test_deterministic(self):
        q = random_model(25, 5)
        a = sa.anneal(q, small_config(n_replicas=6))
        b = sa.anneal(q, small_config(n_replicas=6))
        self.assertTrue(np.array_equal(a.per_replica_states, b.per_replica_states))
        self.assertTrue(np.array_equal(a.trace, b.trace))

        # Splitting replicas among processes does not change the outcome
        c = sa.anneal(q, small_config(n_replicas=6, workers=2))
        d = sa.anneal(q, small_config(n_replicas=6, workers=4))
        for other in (c, d):
            self.assertTrue(np.array_equal(a.per_replica_states, other.per_replica_states))
            self.assertTrue(np.array_equal(a.per_replica_energies, other.per_replica_energies))
            self.assertTrue(np.array_equal(a.trace, other.trace))
            self.assertEqual(a.replica_of_best, other.replica_of_best)

        # Replicas keep their random streams when more are added
        e = sa.anneal(q, small_config(n_replicas=8))
        self.assertTrue(np.array_equal(a.per_replica_states, e.per_replica_states[:6]))

        # Another seed gives another run. Both can end in the same ground
        # state, so the paths are compared
        f = sa.anneal(q, small_config(n_replicas=6, seed=2))
        self.assertFalse(np.array_equal(a.trace, f.trace))

    def test_sweep_order(self):
        q = random_model(10, 6)
        res = sa.anneal(q, small_config(sweep_order="sequential"))
        self.assertEqual(res.best_energy, ground_energy(q))

    def test_single_precision(self):
        q = random_model(15, 7).astype(np.float32)
        res = sa.anneal(q, small_config())
        self.assertLessEqual(res.drift, 1e-6)

    def test_errors(self):
        with self.assertRaises(ValueError):
            sa.anneal(QuboModel(0), small_config())
        with self.assertRaises(InvalidModelError):
            sa.anneal(random_model(4, 0), small_config(n_replicas=0))


class TestTune(TestCase):
    def get_base(self):
        return small_config(n_replicas=4, schedule=Schedule(t_max=10.0, t_min=0.05, n_steps=20))

    def test_tune(self):
        q = random_model(10, 8)
        base = self.get_base()
        with mock.patch("qbnn.anneal.anneal", wraps=sa.anneal) as run:
            schedule = sa.tune_temperatures(q, base, budget=6, pilot_runs=2)
        # Each evaluation is the mean of the pilot runs
        self.assertLessEqual(run.call_count, 6 * 2)
        self.assertEqual(run.call_count % 2, 0)
        self.assertEqual(schedule.n_steps, 20)
        self.assertLessEqual(schedule.t_min, schedule.t_max)
        schedule.check()

        # Tuning is deterministic
        self.assertEqual(sa.tune_temperatures(q, base, budget=6, pilot_runs=2), schedule)

    def test_target(self):
        q = random_model(10, 9)
        base = self.get_base()
        with mock.patch("qbnn.anneal.anneal", wraps=sa.anneal) as run:
            schedule = sa.tune_temperatures(q, base, budget=10, pilot_runs=1, target=1e9)
        # The starting point already reaches the target
        self.assertEqual(run.call_count, 1)
        self.assertAlmostEqual(schedule.t_min, 0.05)
        self.assertAlmostEqual(schedule.t_max, 10.0)

    def test_budget(self):
        with self.assertRaises(ValueError):
            sa.tune_temperatures(random_model(4, 0), self.get_base(), budget=4)
