"""
Turn annealer states into networks, and measure them.
"""
from __future__ import annotations

import graphlib
import logging
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from . import builder, fields
from .dataset import Dataset, Image, outputs_to_label
from .models import Model
from .topology import INPUT, Topology
from .validation import Validation

log = logging.getLogger("qbnn.evaluator")

Pixels = Sequence[int]


class UnsupportedInferenceError(RuntimeError):
    """
    Raised when running inference on a network with cycles
    """
    pass


class TrainedNetwork:
    """
    Bipolar weights and biases of a network, with the audit of the state
    they were decoded from
    """
    def __init__(
            self,
            topology: Topology,
            weights: Dict[int, int],
            biases: Dict[int, int],
            provenance: Optional[Dict[str, Any]] = None,
            audit: Optional[Dict[str, Any]] = None):
        missing = set(topology.groups) - set(weights)
        if missing:
            raise ValueError(f"missing weights for groups {sorted(missing)}")
        missing = set(topology.non_inputs) - set(biases)
        if missing:
            raise ValueError(f"missing biases for nodes {sorted(missing)}")
        for value in (*weights.values(), *biases.values()):
            if value not in (-1, 1):
                raise ValueError(f"parameter value {value} is not -1 or 1")
        self.topology = topology
        self.weights = dict(weights)
        self.biases = dict(biases)
        self.provenance = dict(provenance or {})
        self.audit = dict(audit or {})

    def to_jsonable(self):
        return {
            "weights": {str(k): v for k, v in sorted(self.weights.items())},
            "biases": {str(k): v for k, v in sorted(self.biases.items())},
            "provenance": self.provenance,
            "audit": self.audit,
        }


class EvalReport(Model):
    train_accuracy = fields.FloatField(min_value=0.0, max_value=1.0)
    test_accuracy = fields.FloatField(min_value=0.0, max_value=1.0, null=True)
    s1 = fields.IntegerField(min_value=0)
    s2 = fields.IntegerField(min_value=0)
    unsat_fraction = fields.FloatField(min_value=0.0, max_value=1.0, default=0.0)
    n_unsat = fields.IntegerField(min_value=0, default=0)
    constraints = fields.IntegerField(min_value=0, default=0)
    energy = fields.FloatField(null=True)
    feasible = fields.BooleanField(null=True)

    def validate_model(self, validation: Validation):
        if self.s1 is not None and self.s2 is not None and self.s1 > self.s2:
            validation.add_error((self._meta["s1"], self._meta["s2"]), f"s1 {self.s1} is larger than s2 {self.s2}")


def decode(vm: "builder.VariableMap", z, provenance: Optional[Dict[str, Any]] = None) -> TrainedNetwork:
    """
    Read weights and biases from a state, whether or not it satisfies the
    constraints
    """
    z = vm.check_state(z)
    weights = {group: 2 * int(z[idx]) - 1 for group, idx in vm.weight.items()}
    biases = {node: 2 * int(z[idx]) - 1 for node, idx in vm.bias.items()}
    n_activation, n_product = builder.audit_constraints(vm, z)
    counts = vm.counts()
    audit = {
        "unsat_activation": n_activation,
        "unsat_product": n_product,
        "constraints": counts["constraints"],
    }
    audit.update(builder.penalty_values(vm, z))
    return TrainedNetwork(vm.topology, weights, biases, provenance=provenance, audit=audit)


def _pixels(image: Union[Image, Pixels, Tuple[Pixels, Any]]) -> Tuple[int, ...]:
    if isinstance(image, Image):
        return tuple(image.pixels)
    if len(image) == 2 and not isinstance(image[0], (int, np.integer)):
        # (pixels, label) datapoint
        return tuple(image[0])
    return tuple(image)


def preactivations(net: TrainedNetwork, image) -> Tuple[Dict[int, int], Dict[int, int]]:
    """
    Run the network on an image.

    Return the bipolar activation of every node and the pre-activation of
    every non-input node
    """
    t = net.topology
    pixels = _pixels(image)
    if len(pixels) != t.input_size:
        raise ValueError(f"image has {len(pixels)} pixels, but the network takes {t.input_size}")
    try:
        order = t.topological_order()
    except graphlib.CycleError as e:
        raise UnsupportedInferenceError(f"{t.name}: cannot run inference on a network with cycles") from e

    activation: Dict[int, int] = {}
    pre: Dict[int, int] = {}
    for node in order:
        if t.kind[node] == INPUT:
            activation[node] = int(pixels[t.pixel(node)])
            continue
        pi = net.biases[node] + sum(net.weights[c.group] * activation[c.src] for c in t.predecessors[node])
        pre[node] = pi
        activation[node] = 1 if pi > 0 else -1
    return activation, pre


def output_values(net: TrainedNetwork, activation: Dict[int, int]) -> Tuple[int, ...]:
    return tuple(activation[node] for node in net.topology.output_order)


def forward(net: TrainedNetwork, image) -> Tuple[str, Dict[int, int]]:
    """
    Classify an image, returning the label and the activation of every node
    """
    activation, pre = preactivations(net, image)
    return outputs_to_label(output_values(net, activation)), activation


def margins(net: TrainedNetwork, batch: Sequence) -> Tuple[int, int]:
    """
    Return (s1, s2): the sum over non-input nodes of the smallest absolute
    pre-activation over the batch, and the sum of all absolute
    pre-activations
    """
    if not batch:
        raise ValueError("cannot compute margins on an empty batch")
    per_node = {node: [] for node in net.topology.non_inputs}
    for image in batch:
        activation, pre = preactivations(net, image)
        for node, pi in pre.items():
            per_node[node].append(abs(pi))
    s1 = sum(min(values) for values in per_node.values())
    s2 = sum(sum(values) for values in per_node.values())
    return s1, s2


def accuracy(net: TrainedNetwork, images: Sequence[Image]) -> Optional[float]:
    """
    Fraction of images whose label is predicted exactly
    """
    if not images:
        return None
    correct = sum(1 for image in images if forward(net, image)[0] == image.label)
    return correct / len(images)


def evaluate(net: TrainedNetwork, ds: Dataset, audit: Optional[Tuple[int, int]] = None) -> EvalReport:
    """
    Measure accuracies on the dataset and margins on its training images.

    audit is (unsatisfied constraints, total constraints); if missing, it is
    taken from the audit of the decoded state.
    """
    if audit is None:
        n_unsat = net.audit.get("unsat_activation", 0) + net.audit.get("unsat_product", 0)
        total = net.audit.get("constraints", 0)
    else:
        n_unsat, total = audit
    s1, s2 = margins(net, ds.train)
    report = EvalReport(
            train_accuracy=accuracy(net, ds.train),
            test_accuracy=accuracy(net, ds.test),
            s1=s1, s2=s2,
            unsat_fraction=n_unsat / total if total else 0.0,
            n_unsat=n_unsat,
            constraints=total,
            feasible=n_unsat == 0)
    return report


def encode(vm: "builder.VariableMap", net: TrainedNetwork) -> np.ndarray:
    """
    Build the QUBO state of a network on the batch of vm.

    Activations come from forward passes, products from their factors, and
    slack bits from the binary expansion of the active input count.
    Activations of clamped outputs keep their clamped value, so the state
    satisfies all constraints exactly when the network fits the batch.
    """
    t = vm.topology
    z = np.zeros(vm.size, dtype=np.uint8)
    for group, idx in vm.weight.items():
        z[idx] = (net.weights[group] + 1) // 2
    for node, idx in vm.bias.items():
        z[idx] = (net.biases[node] + 1) // 2

    for k in range(vm.batch_size):
        pixels = [2 * b - 1 for b in vm.input_bits[k]]
        activation, pre = preactivations(net, pixels)
        for node in t.hidden:
            z[vm.activations[(node, k)]] = (activation[node] + 1) // 2
        for node in t.non_inputs:
            width = vm.widths[node]
            y_index, y_const = vm.activation(node, k)
            y = (activation[node] + 1) // 2 if y_index is not None else y_const
            # Active inputs, bias included
            count = (pre[node] + t.in_degree(node) + 1) // 2
            chi = count + width.offset - (y << width.n)
            for bit, s in enumerate(vm.slack[(node, k)]):
                z[s] = (chi >> bit) & 1 if chi >= 0 else 0
    for p in vm.product_list:
        z[p.psi] = z[p.v] * z[p.y]
    return z
