"""
Network graphs: neurons, connections, shared weights.

Node ids and weight group ids are dense in the network a Topology was first
built as, and are kept unchanged by remove_nodes, so that per-parameter state
(like dropout factors) can be indexed by the same ids on every reduced
network.
"""
from __future__ import annotations

import graphlib
import logging
import re
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

from . import consts, fields
from .models import Model
from .validation import Validation

log = logging.getLogger("qbnn.topology")

INPUT = "input"
HIDDEN = "hidden"
OUTPUT = "output"
NODE_KINDS = (INPUT, HIDDEN, OUTPUT)


class Connection(NamedTuple):
    src: int
    dst: int
    group: int


class NodeRecord(Model):
    id = fields.IntegerField(min_value=0)
    kind = fields.StringField(choices=NODE_KINDS)


class ConnectionRecord(Model):
    src = fields.IntegerField(min_value=0)
    dst = fields.IntegerField(min_value=0)
    group = fields.IntegerField(min_value=0)


class TopologyRecord(Model):
    """
    JSON document describing a network graph
    """
    name = fields.StringField(null=True)
    nodes = fields.ModelListField(NodeRecord, min_num=1)
    connections = fields.ModelListField(ConnectionRecord, null=True)

    def validate_model(self, validation: Validation):
        kinds: Dict[int, str] = {}
        for node in self.nodes:
            if node.id in kinds:
                validation.add_error(self._meta["nodes"], "node {} is defined more than once".format(node.id))
            kinds[node.id] = node.kind

        if OUTPUT not in kinds.values():
            validation.add_error(self._meta["nodes"], "the network has no output nodes")

        seen = set()
        for conn in self.connections:
            if conn.src not in kinds or conn.dst not in kinds:
                validation.add_error(
                        self._meta["connections"], "connection {}→{} refers to a missing node".format(
                            conn.src, conn.dst))
                continue
            if conn.src == conn.dst:
                validation.add_error(self._meta["connections"], "self-loop on node {}".format(conn.src))
            if kinds[conn.dst] == INPUT:
                validation.add_error(
                        self._meta["connections"], "input node {} has an incoming connection".format(conn.dst))
            if (conn.src, conn.dst) in seen:
                validation.add_error(
                        self._meta["connections"], "connection {}→{} is repeated".format(conn.src, conn.dst))
            seen.add((conn.src, conn.dst))


class Topology:
    """
    Directed graph of binary neurons.

    Input nodes are clamped to image pixels, in increasing id order; output
    nodes are clamped to the training labels, also in increasing id order.
    Every connection refers to a weight group: connections of the same group
    share one weight. Every non-input node has its own bias.
    """
    def __init__(
            self,
            kinds: Dict[int, str],
            connections: Iterable[Tuple[int, int, int]],
            name: Optional[str] = None,
            input_order: Optional[Sequence[int]] = None,
            output_order: Optional[Sequence[int]] = None,
            node_count: Optional[int] = None,
            group_count: Optional[int] = None):
        record = TopologyRecord(
                name=name,
                nodes=[NodeRecord(id=i, kind=k) for i, k in sorted(kinds.items())],
                connections=[ConnectionRecord(src=s, dst=d, group=g) for s, d, g in connections])
        record.check("topology")

        self.name = name
        self.kind: Dict[int, str] = dict(sorted(kinds.items()))
        self.nodes: Tuple[int, ...] = tuple(self.kind)
        self.connections: Tuple[Connection, ...] = tuple(
                Connection(c.src, c.dst, c.group) for c in record.connections)

        self.inputs = tuple(i for i in self.nodes if self.kind[i] == INPUT)
        self.hidden = tuple(i for i in self.nodes if self.kind[i] == HIDDEN)
        self.outputs = tuple(i for i in self.nodes if self.kind[i] == OUTPUT)
        self.non_inputs = tuple(i for i in self.nodes if self.kind[i] != INPUT)
        self.groups = tuple(sorted({c.group for c in self.connections}))

        # Position of each input in the image, and of each output in the
        # label vector. Reduced networks inherit them from the full network.
        if input_order is None:
            input_order = self.inputs
        if output_order is None:
            output_order = self.outputs
        self.input_order: Tuple[int, ...] = tuple(input_order)
        self.output_order: Tuple[int, ...] = tuple(output_order)

        # Sizes of the network this one was reduced from
        self._node_count = node_count if node_count is not None else max([*self.nodes, *self.input_order]) + 1
        self._group_count = group_count if group_count is not None else (self.groups[-1] + 1 if self.groups else 0)

        self.predecessors: Dict[int, List[Connection]] = {i: [] for i in self.nodes}
        for conn in self.connections:
            self.predecessors[conn.dst].append(conn)

    @property
    def input_size(self) -> int:
        """
        Number of pixels an input image must have
        """
        return len(self.input_order)

    @property
    def output_size(self) -> int:
        return len(self.output_order)

    @property
    def group_count(self) -> int:
        """
        Size of an array indexed by weight group id
        """
        return self._group_count

    @property
    def node_count(self) -> int:
        """
        Size of an array indexed by node id
        """
        return self._node_count

    def pixel(self, node: int) -> int:
        """
        Return the image position that feeds an input node
        """
        return self.input_order.index(node)

    def in_degree(self, node: int) -> int:
        return len(self.predecessors[node])

    def topological_order(self) -> List[int]:
        """
        Return all nodes in an order where each node comes after its
        predecessors.

        Raises graphlib.CycleError if the graph has cycles
        """
        sorter = graphlib.TopologicalSorter()
        for node in self.nodes:
            sorter.add(node, *(c.src for c in self.predecessors[node]))
        return list(sorter.static_order())

    def is_acyclic(self) -> bool:
        try:
            self.topological_order()
        except graphlib.CycleError:
            return False
        return True

    def to_jsonable(self):
        res = TopologyRecord(
                name=self.name,
                nodes=[NodeRecord(id=i, kind=k) for i, k in self.kind.items()],
                connections=[ConnectionRecord(src=c.src, dst=c.dst, group=c.group) for c in self.connections],
        ).to_jsonable()
        if self.input_order != self.inputs:
            res["input_order"] = list(self.input_order)
        if self.output_order != self.outputs:
            res["output_order"] = list(self.output_order)
        return res

    @classmethod
    def from_jsonable(cls, data) -> "Topology":
        data = dict(data)
        input_order = data.pop("input_order", None)
        output_order = data.pop("output_order", None)
        record = TopologyRecord(**data)
        record.check("topology")
        return cls(
                {n.id: n.kind for n in record.nodes},
                [(c.src, c.dst, c.group) for c in record.connections],
                name=record.name,
                input_order=input_order,
                output_order=output_order)

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return (self.kind == other.kind
                and sorted(self.connections) == sorted(other.connections)
                and self.input_order == other.input_order
                and self.output_order == other.output_order)

    __hash__ = None

    def __repr__(self):
        return "Topology({}, nodes={}, connections={}, groups={})".format(
                self.name or "custom", len(self.nodes), len(self.connections), len(self.groups))


class NodeWidth(NamedTuple):
    # Number of slack bits
    n: int
    kappa: int

    @property
    def offset(self) -> int:
        """
        Constant added to the count of active inputs so that the top bit of
        its (n+1)-bit expansion is the activation
        """
        return self.kappa // 2


def node_width(in_degree: int) -> NodeWidth:
    """
    Compute n and κ for a node with the given number of predecessors
    """
    if in_degree < 0:
        raise ValueError(f"in_degree {in_degree} must not be negative")
    n = (in_degree + 1).bit_length() - 1
    return NodeWidth(n, 2 ** (n + 1) - in_degree - 2)


class BitWidths(Dict[int, NodeWidth]):
    """
    Map node ids to their NodeWidth
    """
    pass


def bit_widths(t: Topology) -> BitWidths:
    res = BitWidths()
    for node in t.nodes:
        if t.kind[node] == INPUT:
            res[node] = NodeWidth(0, 0)
        else:
            res[node] = node_width(t.in_degree(node))
    return res


class _LayerBuilder:
    """
    Accumulate the nodes and connections of a layered network
    """
    def __init__(self, input_count: int):
        self.kinds: Dict[int, str] = {i: INPUT for i in range(input_count)}
        self.connections: List[Tuple[int, int, int]] = []
        self.next_group = 0
        self.last_layer: List[int] = list(range(input_count))

    def add_nodes(self, count: int, kind: str) -> List[int]:
        start = len(self.kinds)
        ids = list(range(start, start + count))
        for i in ids:
            self.kinds[i] = kind
        return ids

    def add_dense(self, count: int, kind: str):
        layer = self.add_nodes(count, kind)
        for dst in layer:
            for src in self.last_layer:
                self.connections.append((src, dst, self.next_group))
                self.next_group += 1
        self.last_layer = layer

    def add_conv(self, side: int, filter: int, n_filters: int):
        positions = side - filter + 1
        layer = []
        for f in range(n_filters):
            base_group = self.next_group + f * filter * filter
            for row in range(positions):
                for col in range(positions):
                    dst = self.add_nodes(1, HIDDEN)[0]
                    layer.append(dst)
                    for a in range(filter):
                        for b in range(filter):
                            src = self.last_layer[(row + a) * side + col + b]
                            self.connections.append((src, dst, base_group + a * filter + b))
        self.next_group += n_filters * filter * filter
        self.last_layer = layer

    def build(self, name: str) -> Topology:
        return Topology(self.kinds, self.connections, name=name)


def fully_connected(input_count: int, hidden: int, outputs: int = 2, name: Optional[str] = None) -> Topology:
    """
    Build a network with one hidden layer, fully connected to the inputs and
    to the outputs. Every connection has its own weight.
    """
    for argname, value in (("input_count", input_count), ("hidden", hidden), ("outputs", outputs)):
        if value < 1:
            raise ValueError(f"{argname} must be at least 1, not {value}")
    builder = _LayerBuilder(input_count)
    builder.add_dense(hidden, HIDDEN)
    builder.add_dense(outputs, OUTPUT)
    return builder.build(name or f"fc{hidden}")


def convolutional(
        input_side: int, filter: int, n_filters: int = 1,
        fc_tail: Optional[int] = None, outputs: int = 2, name: Optional[str] = None) -> Topology:
    """
    Build a network with a convolutional layer over a square image.

    Convolutions have stride 1 and no padding. Connections from the same
    filter cell share one weight across all positions; every position has its
    own bias. The optional fully connected layer of fc_tail neurons sits
    between the convolution and the outputs.
    """
    for argname, value in (("input_side", input_side), ("filter", filter),
                           ("n_filters", n_filters), ("outputs", outputs)):
        if value < 1:
            raise ValueError(f"{argname} must be at least 1, not {value}")
    if filter > input_side:
        raise ValueError(f"filter size {filter} is larger than the input side {input_side}")
    if fc_tail is not None and fc_tail < 1:
        raise ValueError(f"fc_tail must be at least 1, not {fc_tail}")

    if name is None:
        name = f"conv{filter}x{filter}"
        if n_filters > 1:
            name += f"x{n_filters}"
        if fc_tail is not None:
            name += f"+fc{fc_tail}"

    builder = _LayerBuilder(input_side * input_side)
    builder.add_conv(input_side, filter, n_filters)
    if fc_tail is not None:
        builder.add_dense(fc_tail, HIDDEN)
    builder.add_dense(outputs, OUTPUT)
    return builder.build(name)


re_fc = re.compile(r"^fc(\d+)$")
re_conv = re.compile(r"^conv(\d+)x(\d+)(?:x(\d+))?$")
re_net = re.compile(r"^net(\d+)$")


def architecture_names() -> List[str]:
    return [name for name, counts in consts.NETWORKS]


def parse_architecture(arch: str, input_side: int = consts.IMAGE_SIDE, outputs: int = 2) -> Topology:
    """
    Build a Topology from an architecture string.

    Accepted forms are ``fcA``, ``convKxK``, ``convKxKxF`` (F filters),
    ``convKxK+fcA``, ``convKxKxF+fcA``, and ``netN`` for the N-th reference
    network.
    """
    arch = arch.strip().lower()
    if mo := re_net.match(arch):
        idx = int(mo.group(1))
        if idx >= len(consts.NETWORKS):
            raise ValueError(f"{arch}: only net0 to net{len(consts.NETWORKS) - 1} are defined")
        arch = consts.NETWORKS[idx][0]

    parts = arch.split("+")
    if len(parts) == 1 and (mo := re_fc.match(parts[0])):
        return fully_connected(input_side * input_side, int(mo.group(1)), outputs, name=arch)

    if len(parts) in (1, 2) and (mo := re_conv.match(parts[0])):
        rows, cols = int(mo.group(1)), int(mo.group(2))
        if rows != cols:
            raise ValueError(f"{arch}: only square filters are supported")
        n_filters = int(mo.group(3)) if mo.group(3) else 1
        fc_tail = None
        if len(parts) == 2:
            if not (tail := re_fc.match(parts[1])):
                raise ValueError(f"{arch}: a convolution can only be followed by a fully connected layer")
            fc_tail = int(tail.group(1))
        return convolutional(input_side, rows, n_filters, fc_tail, outputs, name=arch)

    raise ValueError(
            f"{arch}: unsupported architecture string; reference networks are {', '.join(architecture_names())}")


def remove_nodes(t: Topology, drop: Iterable[int]) -> Topology:
    """
    Return a copy of t without the given nodes and the connections that
    touch them.

    Ids already missing from t are ignored, so that dropping the same set
    twice gives the same network.
    """
    drop = set(drop)
    for node in drop:
        if node < 0 or node >= t.node_count:
            raise ValueError(f"cannot drop node {node}: the network has nodes 0 to {t.node_count - 1}")
        if t.kind.get(node) == OUTPUT:
            raise ValueError(f"cannot drop node {node}: output nodes are never removed")
    if not drop & set(t.nodes):
        return t

    kinds = {i: k for i, k in t.kind.items() if i not in drop}
    connections = [c for c in t.connections if c.src not in drop and c.dst not in drop]
    log.debug("%s: dropped %d nodes, %d connections left", t.name, len(t.nodes) - len(kinds), len(connections))
    return Topology(kinds, connections, name=t.name, input_order=t.input_order, output_order=t.output_order,
                    node_count=t.node_count, group_count=t.group_count)
