import graphlib
from unittest import TestCase

from qbnn import consts
from qbnn.topology import (HIDDEN, INPUT, OUTPUT, NodeWidth, Topology, architecture_names, bit_widths,
                           convolutional, fully_connected, node_width, parse_architecture, remove_nodes)
from qbnn.validation import InvalidModelError


def small_cycle() -> Topology:
    return Topology(
            {0: INPUT, 1: HIDDEN, 2: HIDDEN, 3: OUTPUT},
            [(0, 1, 0), (1, 2, 1), (2, 1, 2), (2, 3, 3)],
            name="cycle")


class TestConstruction(TestCase):
    def test_fully_connected(self):
        t = fully_connected(25, 3)
        self.assertEqual(t.name, "fc3")
        self.assertEqual(len(t.nodes), 30)
        self.assertEqual(len(t.connections), 81)
        self.assertEqual(len(t.groups), 81)
        self.assertEqual(t.inputs, tuple(range(25)))
        self.assertEqual(t.hidden, (25, 26, 27))
        self.assertEqual(t.outputs, (28, 29))
        self.assertEqual(t.non_inputs, (25, 26, 27, 28, 29))
        self.assertEqual(t.in_degree(25), 25)
        self.assertEqual(t.in_degree(28), 3)
        self.assertEqual(t.in_degree(0), 0)
        self.assertEqual(t.input_size, 25)
        self.assertEqual(t.output_size, 2)

        with self.assertRaises(ValueError):
            fully_connected(25, 0)

    def test_convolutional(self):
        t = convolutional(5, 3)
        self.assertEqual(t.name, "conv3x3")
        self.assertEqual(len(t.nodes), 36)
        self.assertEqual(len(t.hidden), 9)
        self.assertEqual(len(t.connections), 99)
        # 9 shared filter weights, plus the output weights
        self.assertEqual(len(t.groups), 9 + 18)
        for node in t.hidden:
            self.assertEqual(sorted(c.group for c in t.predecessors[node]), list(range(9)))
        # The top left position sees the top left 3×3 pixels
        first = t.hidden[0]
        self.assertEqual(sorted(c.src for c in t.predecessors[first]), [0, 1, 2, 5, 6, 7, 10, 11, 12])

        t = convolutional(5, 4, n_filters=2, fc_tail=4)
        self.assertEqual(t.name, "conv4x4x2+fc4")
        # The two filters have separate weights
        groups = {c.group for node in t.hidden[:8] for c in t.predecessors[node]}
        self.assertEqual(groups, set(range(32)))

        with self.assertRaises(ValueError):
            convolutional(5, 6)
        with self.assertRaises(ValueError):
            convolutional(5, 2, n_filters=0)
        with self.assertRaises(ValueError):
            convolutional(5, 2, fc_tail=0)

    def test_reference_networks(self):
        self.assertEqual(len(architecture_names()), 18)
        for idx, (arch, (neurons, connections, binary, integer, constraints)) in enumerate(consts.NETWORKS):
            with self.subTest(arch=arch):
                t = parse_architecture(arch)
                self.assertEqual(len(t.nodes), neurons)
                self.assertEqual(len(t.connections), connections)
                self.assertTrue(t.is_acyclic())
                self.assertEqual(parse_architecture(f"net{idx}"), t)

    def test_parse_architecture(self):
        self.assertEqual(parse_architecture("FC3").name, "fc3")
        self.assertEqual(len(parse_architecture("fc2", input_side=2).inputs), 4)
        self.assertEqual(parse_architecture("conv2x2+fc4"), convolutional(5, 2, fc_tail=4))
        self.assertEqual(parse_architecture("conv3x3x2"), convolutional(5, 3, n_filters=2))
        for arch in ("conv3x2", "fc0", "conv6x6", "rnn3", "net18", "fc3+fc4", "conv2x2+conv2x2", ""):
            with self.subTest(arch=arch):
                with self.assertRaises(ValueError):
                    parse_architecture(arch)

        # The error lists the reference networks
        with self.assertRaisesRegex(ValueError, r"^rnn3: .*reference networks are conv2x2, conv2x2\+fc4, .*, fc10$"):
            parse_architecture("rnn3")

    def test_invalid(self):
        # Self loop
        with self.assertRaises(InvalidModelError):
            Topology({0: INPUT, 1: OUTPUT}, [(0, 1, 0), (1, 1, 1)])
        # Connection into an input
        with self.assertRaises(InvalidModelError):
            Topology({0: INPUT, 1: OUTPUT}, [(0, 1, 0), (1, 0, 1)])
        # No outputs
        with self.assertRaises(InvalidModelError):
            Topology({0: INPUT, 1: HIDDEN}, [(0, 1, 0)])
        # Repeated connection
        with self.assertRaises(InvalidModelError):
            Topology({0: INPUT, 1: OUTPUT}, [(0, 1, 0), (0, 1, 1)])
        # Missing node
        with self.assertRaises(InvalidModelError):
            Topology({0: INPUT, 1: OUTPUT}, [(0, 2, 0)])
        # Invalid kind
        with self.assertRaises(InvalidModelError):
            Topology({0: "pooling", 1: OUTPUT}, [(0, 1, 0)])

    def test_cycles(self):
        # Cyclic graphs are valid networks, but have no topological order
        t = small_cycle()
        self.assertFalse(t.is_acyclic())
        with self.assertRaises(graphlib.CycleError):
            t.topological_order()

        t = fully_connected(4, 2)
        order = t.topological_order()
        self.assertEqual(sorted(order), list(t.nodes))
        position = {node: pos for pos, node in enumerate(order)}
        for conn in t.connections:
            self.assertLess(position[conn.src], position[conn.dst])

    def test_jsonable(self):
        for t in (fully_connected(4, 2), parse_architecture("conv2x2+fc4"), small_cycle()):
            with self.subTest(t=t):
                data = t.to_jsonable()
                self.assertEqual(Topology.from_jsonable(data), t)
                self.assertEqual(len(data["nodes"]), len(t.nodes))

        # Reduced networks keep the positions of their inputs
        t = remove_nodes(fully_connected(4, 2), [1])
        data = t.to_jsonable()
        self.assertEqual(data["input_order"], [0, 1, 2, 3])
        self.assertEqual(Topology.from_jsonable(data), t)


class TestWidths(TestCase):
    def test_node_width(self):
        self.assertEqual(node_width(0), NodeWidth(0, 0))
        self.assertEqual(node_width(1), NodeWidth(1, 1))
        self.assertEqual(node_width(2), NodeWidth(1, 0))
        self.assertEqual(node_width(3), NodeWidth(2, 3))
        self.assertEqual(node_width(25), NodeWidth(4, 5))
        self.assertEqual(node_width(25).offset, 2)
        self.assertEqual(node_width(3).offset, 1)

        for degree in range(200):
            with self.subTest(degree=degree):
                width = node_width(degree)
                # n is the largest integer with 2^n ≤ |P| + 1
                self.assertLessEqual(2 ** width.n, degree + 1)
                self.assertLess(degree + 1, 2 ** (width.n + 1))
                self.assertGreaterEqual(width.kappa, 0)
                # Up to |P| + 1 active inputs plus the offset fit in n + 1 bits
                self.assertLess(degree + 1 + width.offset, 2 ** (width.n + 1))

        with self.assertRaises(ValueError):
            node_width(-1)

    def test_bit_widths(self):
        t = fully_connected(25, 3)
        widths = bit_widths(t)
        self.assertEqual(widths[0], NodeWidth(0, 0))
        self.assertEqual(widths[25], NodeWidth(4, 5))
        self.assertEqual(widths[28], NodeWidth(2, 3))
        # Widths only depend on the in-degree, cycles included
        widths = bit_widths(small_cycle())
        self.assertEqual(widths[1], node_width(2))
        self.assertEqual(widths[3], node_width(1))


class TestRemoveNodes(TestCase):
    def test_remove_hidden(self):
        t = fully_connected(25, 3)
        reduced = remove_nodes(t, [26])
        self.assertEqual(len(reduced.nodes), 29)
        self.assertEqual(len(reduced.connections), 81 - 27)
        self.assertEqual(reduced.hidden, (25, 27))
        # Ids are unchanged, and sizes refer to the full network
        self.assertEqual(reduced.node_count, 30)
        self.assertEqual(reduced.group_count, 81)
        self.assertTrue(set(reduced.groups) < set(t.groups))
        self.assertEqual(reduced.in_degree(28), 2)

        # Dropping the same nodes again changes nothing
        self.assertIs(remove_nodes(reduced, [26]), reduced)
        self.assertIs(remove_nodes(t, []), t)

    def test_remove_inputs(self):
        t = parse_architecture("conv2x2")
        reduced = remove_nodes(t, [0, 7])
        self.assertEqual(reduced.input_size, 25)
        self.assertEqual(len(reduced.inputs), 23)
        self.assertEqual(reduced.pixel(8), 8)
        self.assertEqual(reduced.in_degree(t.hidden[0]), 3)
        self.assertEqual(remove_nodes(reduced, [0, 7]), reduced)

        # Removing more nodes from a reduced network
        more = remove_nodes(reduced, [t.hidden[0]])
        self.assertEqual(len(more.nodes), len(t.nodes) - 3)
        self.assertEqual(more.node_count, t.node_count)

    def assert_same_reduction(self, t, a, b):
        ab = remove_nodes(remove_nodes(t, a), b)
        ba = remove_nodes(remove_nodes(t, b), a)
        both = remove_nodes(t, set(a) | set(b))
        for other in (ba, both):
            self.assertEqual(ab, other)
            self.assertEqual(ab.nodes, other.nodes)
            self.assertEqual(ab.groups, other.groups)
            self.assertEqual(ab.input_order, other.input_order)
            self.assertEqual(ab.output_order, other.output_order)
            self.assertEqual(ab.node_count, other.node_count)
            self.assertEqual(ab.group_count, other.group_count)
        self.assertEqual(ab.node_count, t.node_count)
        self.assertEqual(ab.group_count, t.group_count)
        self.assertEqual(ab.input_order, t.input_order)

    def test_remove_order(self):
        # Disjoint drop sets give the same network in any order, and the same
        # network as dropping them together
        t = fully_connected(25, 3)
        self.assert_same_reduction(t, [26], [0, 4, 12])
        self.assert_same_reduction(t, [1, 2], [25, 27])

        t = parse_architecture("conv2x2+fc4")
        self.assert_same_reduction(t, [t.hidden[0], 3], [t.hidden[-1], 20, 24])
        self.assert_same_reduction(t, [t.hidden[5]], [t.hidden[17], t.hidden[3]])

        t = parse_architecture("conv3x3x2")
        self.assert_same_reduction(t, [0, 1, 2, 3, 4], [t.hidden[1], t.hidden[10]])

    def test_errors(self):
        t = fully_connected(25, 3)
        with self.assertRaises(ValueError):
            remove_nodes(t, [28])
        with self.assertRaises(ValueError):
            remove_nodes(t, [30])
        with self.assertRaises(ValueError):
            remove_nodes(t, [-1])
