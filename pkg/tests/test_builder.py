import itertools
from unittest import TestCase

import numpy as np

from qbnn import builder, consts
from qbnn.dataset import canonical_glyphs, make_batch
from qbnn.evaluator import TrainedNetwork, encode, output_values, preactivations
from qbnn.topology import HIDDEN, INPUT, OUTPUT, Topology, fully_connected, parse_architecture
from qbnn.validation import InvalidModelError


def random_network(t, rng) -> TrainedNetwork:
    return TrainedNetwork(
            t,
            {g: int(rng.choice((-1, 1))) for g in t.groups},
            {n: int(rng.choice((-1, 1))) for n in t.non_inputs})


def fitted_instance(t, batch_size, seed):
    """
    Return a random network and a batch it classifies correctly
    """
    rng = np.random.default_rng(seed)
    net = random_network(t, rng)
    batch = []
    for _ in range(batch_size):
        pixels = tuple(int(x) for x in rng.choice((-1, 1), size=t.input_size))
        activation, pre = preactivations(net, pixels)
        batch.append((pixels, output_values(net, activation)))
    return net, batch


class TestCounts(TestCase):
    def test_reference_networks(self):
        batch = make_batch(canonical_glyphs())
        for arch, (neurons, connections, binary, integer, constraints) in consts.NETWORKS:
            with self.subTest(arch=arch):
                q, vm = builder.build(parse_architecture(arch), batch)
                counts = vm.counts()
                self.assertEqual(counts["binary"], binary)
                self.assertEqual(counts["integer"], integer)
                self.assertEqual(counts["constraints"], constraints)
                self.assertEqual(counts["variables"], q.size)
                self.assertEqual(counts["variables"], binary + counts["slack_bits"])

    def test_fc3(self):
        q, vm = builder.build(parse_architecture("fc3"), make_batch(canonical_glyphs()))
        self.assertEqual(vm.counts(), {
            "weights": 81,
            "biases": 5,
            "activations": 12,
            "products": 24,
            "binary": 122,
            "integer": 20,
            "slack_bits": 12 * 4 + 8 * 2,
            "variables": 186,
            "activation_constraints": 20,
            "product_constraints": 24,
            "constraints": 44,
        })
        self.assertEqual(vm.symbol_name(0), "v[0]")
        self.assertEqual(vm.symbol_name(81), "d[25]")
        self.assertEqual(vm.symbol_name(86), "y[25,0]")
        self.assertEqual(vm.symbol_name(122), "s[25,0,0]")


class TestEncoding(TestCase):
    def test_witness(self):
        # A network that fits its batch induces a zero energy state
        for seed in range(5):
            t = fully_connected(4, 2)
            net, batch = fitted_instance(t, 3, seed)
            q, vm = builder.build(t, batch)
            z = encode(vm, net)
            self.assertEqual(q.energy(z), 0.0)
            self.assertEqual(builder.audit_constraints(vm, z), (0, 0))
            penalties = builder.penalty_values(vm, z)
            self.assertEqual(penalties["h1"], 0.0)
            self.assertEqual(penalties["h2"], 0.0)

    def test_margin_identity(self):
        # On a feasible state, the margin term of each constraint is the
        # absolute pre-activation of its node
        t = parse_architecture("fc2", input_side=3)
        net, batch = fitted_instance(t, 4, 1)
        q, vm = builder.build(t, batch)
        z = encode(vm, net)
        terms = builder.margin_terms(vm, z)
        for res, term in zip(vm.residuals, terms):
            activation, pre = preactivations(net, batch[res.k][0])
            self.assertEqual(term, abs(pre[res.node]))

        s2 = sum(abs(pi) for pixels, target in batch for pi in preactivations(net, pixels)[1].values())
        self.assertEqual(builder.penalty_values(vm, z)["h_som"], s2)

        # The margin reward lowers the energy of the witness by γ·S2
        gamma = 0.02
        qm, vm = builder.build(t, batch, builder.BuildParams(gamma=gamma))
        self.assertAlmostEqual(qm.energy(z), -gamma * s2, places=9)

    def test_energy_identity(self):
        # The expanded model equals the penalties evaluated from their
        # definitions on any state
        t = fully_connected(9, 2)
        rng = np.random.default_rng(7)
        batch = [(tuple(int(x) for x in rng.choice((-1, 1), size=9)), label) for label in consts.LABELS]
        _, vm = builder.build(t, batch)
        c_w = list(rng.normal(size=len(vm.weight)))
        c_b = list(rng.normal(size=len(vm.bias)))
        params = builder.BuildParams(alpha=2.0, gamma=0.05, c_w=c_w, c_b=c_b)
        q, vm = builder.build(t, batch, params)

        for _ in range(50):
            z = rng.integers(0, 2, size=vm.size).astype(np.uint8)
            penalties = builder.penalty_values(vm, z)
            ext = sum(c * (2 * int(z[i]) - 1) for i, c in zip(vm.weight.values(), c_w))
            ext += sum(c * (2 * int(z[i]) - 1) for i, c in zip(vm.bias.values(), c_b))
            expected = penalties["h1"] + 2.0 * penalties["h2"] - 0.05 * penalties["h_som"] - ext
            self.assertAlmostEqual(q.energy(z), expected, places=6)

    def test_residuals(self):
        t = fully_connected(4, 2)
        net, batch = fitted_instance(t, 2, 3)
        q, vm = builder.build(t, batch)
        rng = np.random.default_rng(0)
        for _ in range(20):
            z = rng.integers(0, 2, size=vm.size).astype(np.uint8)
            values = builder.residuals(vm, z)
            self.assertEqual(list(values), [res.expr.evaluate(z) for res in vm.residuals])
            self.assertEqual(
                    builder.audit_constraints(vm, z),
                    (int(np.count_nonzero(values)), int(np.count_nonzero(builder.product_violations(vm, z)))))

    def test_activation_rule(self):
        # With all weights at +1 the activation constraint of each node says
        # that the node fires when most of its inputs (bias included) do
        t = fully_connected(2, 1)
        net = TrainedNetwork(t, {g: 1 for g in t.groups}, {n: 1 for n in t.non_inputs})
        for pixels in itertools.product((-1, 1), repeat=2):
            activation, pre = preactivations(net, pixels)
            self.assertEqual(activation[2], 1 if pixels[0] + pixels[1] + 1 > 0 else -1)
            batch = [(pixels, output_values(net, activation))]
            q, vm = builder.build(t, batch)
            self.assertEqual(q.energy(encode(vm, net)), 0.0)


class TestTerms(TestCase):
    def get_instance(self):
        t = fully_connected(4, 2)
        net, batch = fitted_instance(t, 2, 5)
        q, vm = builder.build(t, batch)
        return t, q, vm

    def test_margin_term(self):
        t, q, vm = self.get_instance()
        self.assertIs(builder.add_margin_term(q, vm, t, 0.0), q)
        with self.assertRaises(ValueError):
            builder.add_margin_term(q, vm, t, -0.1)
        with self.assertRaises(ValueError):
            builder.add_margin_term(q, vm, fully_connected(4, 3), 0.1)

        rng = np.random.default_rng(1)
        qm = builder.add_margin_term(q, vm, t, 0.5)
        for _ in range(20):
            z = rng.integers(0, 2, size=vm.size).astype(np.uint8)
            self.assertAlmostEqual(qm.energy(z), q.energy(z) - 0.5 * builder.margin_terms(vm, z).sum(), places=9)

    def test_external_bias(self):
        t, q, vm = self.get_instance()
        zero = builder.add_external_bias(q, vm, [0.0] * len(vm.weight), [0.0] * len(vm.bias))
        self.assertEqual(zero, q)

        node = t.non_inputs[0]
        c_b = [0.0] * len(vm.bias)
        c_b[0] = 1.0
        biased = builder.add_external_bias(q, vm, [0.0] * len(vm.weight), c_b)
        self.assertEqual(biased.linear[vm.bias[node]], q.linear[vm.bias[node]] - 2)
        self.assertEqual(biased.constant, q.constant + 1)

        with self.assertRaises(ValueError):
            builder.add_external_bias(q, vm, [0.0], c_b)
        with self.assertRaises(ValueError):
            builder.add_external_bias(q, vm, [0.0] * len(vm.weight), [0.0])

    def test_external_bias_minimum(self):
        # A large factor decides a bias that the constraints leave free
        t = fully_connected(1, 1)
        batch = [((1,), (1, 1))]
        q, vm = builder.build(t, batch)
        c_b = [0.0] * len(vm.bias)
        c_b[0] = 100.0
        biased = builder.add_external_bias(q, vm, [0.0] * len(vm.weight), c_b)
        states = np.array(list(itertools.product((0, 1), repeat=vm.size)), dtype=np.uint8)
        best = states[int(np.argmin(biased.energies(states)))]
        self.assertEqual(best[vm.bias[t.non_inputs[0]]], 1)


class TestBuild(TestCase):
    def test_params(self):
        BuildParams = builder.BuildParams
        with self.assertLogs("qbnn.builder", level="WARNING") as logs:
            builder.build(fully_connected(4, 1), [((1, 1, 1, 1), "O")], BuildParams(alpha=0.0))
        self.assertIn("alpha", logs.output[0])

        with self.assertRaises(InvalidModelError):
            BuildParams(gamma=-1.0).check()
        with self.assertRaises(InvalidModelError):
            BuildParams(precision="half").check()

        q, vm = builder.build(fully_connected(4, 1), [((1, 1, 1, 1), "O")], BuildParams(precision="single"))
        self.assertEqual(q.dtype, np.float32)

    def test_batch_errors(self):
        t = fully_connected(4, 1)
        for batch in (
                [],
                [((1, 1, 1), "O")],
                [((1, 1, 1, 0), "O")],
                [((1, 1, 1, 1), "Q")],
                [((1, 1, 1, 1), (1, 1, 1))],
                [((1, 1, 1, 1), (1, 0))]):
            with self.subTest(batch=batch):
                with self.assertRaises(ValueError):
                    builder.build(t, batch)

    def test_labels(self):
        t = fully_connected(4, 1)
        q1, vm1 = builder.build(t, [((1, -1, 1, -1), "X")])
        q2, vm2 = builder.build(t, [((1, -1, 1, -1), (1, -1))])
        self.assertEqual(q1, q2)
        self.assertEqual(vm1.output_bits, [(1, 0)])

    def test_cyclic(self):
        # Cyclic graphs can be compiled, even if they cannot be run
        t = Topology(
                {0: INPUT, 1: HIDDEN, 2: HIDDEN, 3: OUTPUT},
                [(0, 1, 0), (1, 2, 1), (2, 1, 2), (2, 3, 3)])
        q, vm = builder.build(t, [((1,), (1,)), ((-1,), (-1,))])
        counts = vm.counts()
        self.assertEqual(counts["binary"], 4 + 3 + 2 * 2 + 3 * 2)
        self.assertEqual(counts["constraints"], 3 * 2 + 3 * 2)
