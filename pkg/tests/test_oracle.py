from unittest import TestCase

import numpy as np

from qbnn import builder, oracle
from qbnn.evaluator import UnsupportedInferenceError
from qbnn.topology import HIDDEN, INPUT, OUTPUT, Topology, convolutional, fully_connected, parse_architecture


def random_batch(t, size, rng):
    labels = ("O", "N", "L", "X")
    return [(tuple(int(x) for x in rng.choice((-1, 1), size=t.input_size)), labels[int(rng.integers(0, 4))])
            for _ in range(size)]


class TestTheorem(TestCase):
    def test_theorem(self):
        for m in range(1, 13):
            with self.subTest(m=m):
                self.assertTrue(oracle.theorem_holds(m))
        with self.assertRaises(ValueError):
            oracle.theorem_holds(0)

    def test_binary_expansion(self):
        self.assertEqual(oracle.binary_expansion(5, 3), (1, 0, 1))
        self.assertEqual(oracle.binary_expansion(0, 2), (0, 0))
        with self.assertRaises(ValueError):
            oracle.binary_expansion(8, 3)
        with self.assertRaises(ValueError):
            oracle.binary_expansion(-1, 3)

    def test_activation_table(self):
        rows = oracle.activation_table(3)
        self.assertEqual(len(rows), 8)
        self.assertEqual(rows[0], oracle.ActivationRow((-1, -1, -1), -3, 0, (0, 0), -1))
        self.assertEqual(rows[-1], oracle.ActivationRow((1, 1, 1), 3, 3, (1, 1), 1))
        self.assertEqual(rows[3], oracle.ActivationRow((-1, 1, 1), 1, 2, (0, 1), 1))
        for row in rows:
            # The top bit is the activation
            self.assertEqual(row.activation, 2 * row.bits[-1] - 1)

        # With an even number of terms, a zero sum gives -1
        for row in oracle.activation_table(4):
            self.assertEqual(row.activation, 1 if row.pi > 0 else -1)
            self.assertEqual(row.activation, 2 * row.bits[-1] - 1)

    def test_product_penalty(self):
        table = oracle.product_penalty_table()
        self.assertEqual(len(table), 8)
        self.assertEqual(table, [
            (0, 0, 0, 0),
            (0, 0, 1, 3),
            (0, 1, 0, 0),
            (0, 1, 1, 1),
            (1, 0, 0, 0),
            (1, 0, 1, 1),
            (1, 1, 0, 1),
            (1, 1, 1, 0),
        ])
        for v, y, psi, penalty in table:
            self.assertEqual(penalty == 0, psi == v * y)


class TestEnumeration(TestCase):
    def test_enumerate_fit(self):
        t = fully_connected(2, 1)
        self.assertEqual(oracle.enumerate_fit(t, [((1, 1), "O"), ((-1, -1), "L")]), (True, 1.0))
        # The same image cannot have two labels
        self.assertEqual(oracle.enumerate_fit(t, [((1, 1), "O"), ((1, 1), "N")]), (False, 0.5))
        self.assertEqual(oracle.enumerate_fit(t, []), (True, 1.0))

    def test_iter_fits(self):
        t = fully_connected(1, 1)
        batch = [((1,), "N"), ((-1,), "N")]
        fits = list(oracle.iter_fits(t, batch))
        self.assertTrue(fits)
        for fit in fits:
            self.assertEqual(set(fit.weights), set(t.groups))
            self.assertEqual(set(fit.biases), set(t.non_inputs))
        self.assertEqual(list(oracle.iter_fits(t, [((1,), "O"), ((1,), "X")])), [])

    def test_capacity(self):
        with self.assertRaises(oracle.CapacityError):
            oracle.enumerate_fit(parse_architecture("fc3"), [])
        with self.assertRaises(oracle.CapacityError):
            oracle.check_equivalence(parse_architecture("fc1"), [(tuple([1] * 25), "O")])
        # fc(3, 2): 6 + 4 weights, 4 biases
        oracle.enumerate_fit(fully_connected(3, 2), [((1, 1, 1), "O")])

    def test_cycles(self):
        t = Topology(
                {0: INPUT, 1: HIDDEN, 2: HIDDEN, 3: OUTPUT},
                [(0, 1, 0), (1, 2, 1), (2, 1, 2), (2, 3, 3)])
        with self.assertRaises(UnsupportedInferenceError):
            list(oracle.iter_fits(t, [((1,), (1,))]))


class TestEquivalence(TestCase):
    def test_random_instances(self):
        # Instances with few variables are searched exhaustively, and each fit
        # induces exactly one zero energy state
        rng = np.random.default_rng(20)
        shapes = [
            (fully_connected(2, 1), (2, 3, 4)),
            (fully_connected(1, 1), (2, 3, 4)),
            (convolutional(2, 2), (2, 3)),
        ]
        checked = 0
        found_fit = False
        for instance in range(8):
            for t, sizes in shapes:
                size = sizes[instance % len(sizes)]
                batch = random_batch(t, size, rng)
                with self.subTest(t=t.name, batch=batch):
                    self.assertLessEqual(len(t.groups) + len(t.non_inputs), 22)
                    report = oracle.check_equivalence(t, batch, seed=instance)
                    self.assertTrue(report.ok)
                    self.assertEqual(report.bad_witnesses, 0)
                    self.assertEqual(report.bad_zero_states, 0)
                    self.assertEqual(report.fits > 0, oracle.enumerate_fit(t, batch)[0])
                    q, vm = builder.build(t, batch)
                    self.assertEqual(report.exhaustive, vm.size <= 22)
                    if report.exhaustive:
                        self.assertEqual(report.fits, report.zero_states)
                    found_fit = found_fit or report.fits > 0
                checked += 1
        self.assertGreaterEqual(checked, 20)
        self.assertTrue(found_fit)

    def test_unfittable(self):
        t = fully_connected(2, 1)
        batch = [((1, -1), "O"), ((1, -1), "L")]
        report = oracle.check_equivalence(t, batch)
        self.assertEqual(report, oracle.EquivalenceReport(0, 0, True, 0, 0))
        self.assertTrue(report.ok)
        self.assertTrue(oracle.verify_equivalence(t, batch))

    def test_annealed(self):
        # Larger instances fall back to annealing, which can only confirm
        # that zero energy states come from fits
        t = fully_connected(1, 1)
        batch = [((1,), "N"), ((-1,), "N"), ((1,), "N")]
        report = oracle.check_equivalence(t, batch, seed=3)
        self.assertFalse(report.exhaustive)
        self.assertTrue(report.ok)
        self.assertGreater(report.fits, 0)

    def test_report(self):
        Report = oracle.EquivalenceReport
        self.assertTrue(Report(3, 3, True, 0, 0).ok)
        self.assertFalse(Report(3, 0, True, 0, 0).ok)
        self.assertFalse(Report(0, 2, True, 0, 0).ok)
        self.assertFalse(Report(3, 3, True, 1, 0).ok)
        self.assertFalse(Report(3, 3, True, 0, 1).ok)
        self.assertTrue(Report(3, 0, False, 0, 0).ok)
        self.assertFalse(Report(0, 1, False, 0, 0).ok)

    def test_witness(self):
        t = fully_connected(2, 1)
        batch = [((1, 1), "O"), ((-1, 1), "X")]
        q, vm = builder.build(t, batch)
        fits = list(oracle.iter_fits(t, batch))
        self.assertTrue(fits)
        for fit in fits:
            z = oracle.construct_witness(vm, fit)
            self.assertEqual(q.energy(z), 0.0)


class TestAudit(TestCase):
    def test_independent_audit(self):
        rng = np.random.default_rng(4)
        for t in (fully_connected(4, 2), parse_architecture("conv2x2+fc2", input_side=3)):
            batch = random_batch(t, 3, rng)
            q, vm = builder.build(t, batch)
            for _ in range(30):
                z = rng.integers(0, 2, size=vm.size).astype(np.uint8)
                self.assertEqual(oracle.independent_audit(vm, z), builder.audit_constraints(vm, z))

    def test_witness_audit(self):
        t = fully_connected(4, 2)
        batch = [((1, 1, -1, -1), "O"), ((-1, 1, -1, 1), "L")]
        q, vm = builder.build(t, batch)
        fits = list(oracle.iter_fits(t, batch))
        self.assertTrue(fits)
        for fit in fits[:10]:
            self.assertEqual(oracle.independent_audit(vm, oracle.construct_witness(vm, fit)), (0, 0))
