"""
Compile a network and a batch of training data into a QUBO model.

Every non-input node j and datapoint k give one activation constraint,
stating that the number of active inputs of j (bias included), plus the
node's offset, has the activation of j as top bit of its binary expansion
and the slack bits of j as lower bits. The squared residuals of these
constraints form H1. Products between a weight and a variable activation are
replaced by ψ variables, kept consistent by the penalty H2.
"""
from __future__ import annotations

import logging
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse

from . import fields
from .dataset import label_to_outputs
from .models import Model
from .qubo import Affine, QuboAccumulator, QuboModel
from .topology import INPUT, OUTPUT, NodeWidth, Topology, bit_widths
from .validation import Validation

log = logging.getLogger("qbnn.builder")

# A datapoint: input pixels, and either a label or the bipolar output values
Datapoint = Tuple[Sequence[int], Union[str, Sequence[int]]]

PRECISIONS = {"double": np.float64, "single": np.float32}


class BuildParams(Model):
    """
    Hyper-parameters of the training Hamiltonian
    """
    alpha = fields.FloatField(min_value=0.0, default=1.0, help="weight of the product penalty H2")
    gamma = fields.FloatField(min_value=0.0, default=0.0, help="weight of the margin reward")
    c_w = fields.ListField(fields.FloatField(), null=True, help="external bias of each weight group")
    c_b = fields.ListField(fields.FloatField(), null=True, help="external bias of each non-input node")
    precision = fields.StringField(choices=tuple(PRECISIONS), default="double")

    def validate_model(self, validation: Validation):
        if self.alpha == 0:
            validation.add_warning(self._meta["alpha"], "with alpha = 0 the products are not constrained")


class Residual(NamedTuple):
    """
    Activation constraint of a node on a datapoint
    """
    node: int
    k: int
    # Residual as an affine function of the QUBO variables: zero when the
    # constraint is satisfied
    expr: Affine
    # Index of the activation variable, or None if it is clamped to y_const
    y_index: Optional[int]
    y_const: int
    slack: Tuple[int, ...]
    width: NodeWidth
    in_degree: int


class Product(NamedTuple):
    """
    Product constraint ψ = v·y
    """
    psi: int
    v: int
    y: int
    connection: int
    k: int


class VariableMap:
    """
    Assignment of QUBO variable indices to the symbols of the training model.

    Variables are numbered in this order: weights (one per weight group),
    biases (one per non-input node), activations of hidden nodes per
    datapoint, products per connection from a hidden node and datapoint,
    slack bits per non-input node and datapoint.
    """
    def __init__(self, t: Topology, inputs: Sequence[Sequence[int]], outputs: Sequence[Sequence[int]]):
        self.topology = t
        self.widths = bit_widths(t)
        # Clamped values as 0/1 bits
        self.input_bits = [tuple((x + 1) // 2 for x in row) for row in inputs]
        self.output_bits = [tuple((x + 1) // 2 for x in row) for row in outputs]
        self.batch_size = len(inputs)
        self._input_pos = {node: pos for pos, node in enumerate(t.input_order)}
        self._output_pos = {node: pos for pos, node in enumerate(t.output_order)}

        self.symbols: List[tuple] = []
        self.weight: Dict[int, int] = {}
        self.bias: Dict[int, int] = {}
        self.activations: Dict[Tuple[int, int], int] = {}
        self.products: Dict[Tuple[int, int], int] = {}
        self.slack: Dict[Tuple[int, int], Tuple[int, ...]] = {}

        for group in t.groups:
            self.weight[group] = self._add("v", group)
        for node in t.non_inputs:
            self.bias[node] = self._add("d", node)
        for node in t.hidden:
            for k in range(self.batch_size):
                self.activations[(node, k)] = self._add("y", node, k)
        for idx, conn in enumerate(t.connections):
            if (conn.src, 0) not in self.activations:
                continue
            for k in range(self.batch_size):
                self.products[(idx, k)] = self._add("psi", idx, k)
        self.binary_count = len(self.symbols)
        for node in t.non_inputs:
            for k in range(self.batch_size):
                self.slack[(node, k)] = tuple(
                        self._add("s", node, k, bit) for bit in range(self.widths[node].n))

        self.residuals: List[Residual] = []
        self.product_list: List[Product] = []
        self._residual_matrix: Optional[scipy.sparse.csr_matrix] = None
        self._residual_const: Optional[np.ndarray] = None
        self._compile_constraints()

    def _add(self, *symbol) -> int:
        self.symbols.append(symbol)
        return len(self.symbols) - 1

    @property
    def size(self) -> int:
        return len(self.symbols)

    def symbol_name(self, index: int) -> str:
        kind, *key = self.symbols[index]
        return "{}[{}]".format(kind, ",".join(str(x) for x in key))

    def activation(self, node: int, k: int) -> Tuple[Optional[int], int]:
        """
        Return (index, 0) for a variable activation, (None, value) for an
        activation clamped to a 0/1 value
        """
        kind = self.topology.kind[node]
        if kind == INPUT:
            return None, self.input_bits[k][self._input_pos[node]]
        elif kind == OUTPUT:
            return None, self.output_bits[k][self._output_pos[node]]
        return self.activations[(node, k)], 0

    def _compile_constraints(self):
        t = self.topology
        for node in t.non_inputs:
            width = self.widths[node]
            preds = [(idx, conn) for idx, conn in enumerate(t.connections) if conn.dst == node]
            for k in range(self.batch_size):
                expr = Affine(width.offset)
                expr.add(self.bias[node], 1)
                for idx, conn in preds:
                    v = self.weight[conn.group]
                    src_index, src_const = self.activation(conn.src, k)
                    if src_index is None:
                        # (2v-1)(2a-1) + 1 over 2 is linear in v for clamped a
                        expr.add(v, 2 * src_const - 1)
                        expr.const += 1 - src_const
                    else:
                        psi = self.products[(idx, k)]
                        expr.add(psi, 2)
                        expr.add(v, -1)
                        expr.add(src_index, -1)
                        expr.const += 1
                        self.product_list.append(Product(psi, v, src_index, idx, k))
                y_index, y_const = self.activation(node, k)
                expr.add(y_index, -2 ** width.n, y_const)
                slack = self.slack[(node, k)]
                for bit, s in enumerate(slack):
                    expr.add(s, -2 ** bit)
                self.residuals.append(Residual(node, k, expr, y_index, y_const, slack, width, len(preds)))
        self.product_list.sort()

    @property
    def residual_matrix(self) -> Tuple[scipy.sparse.csr_matrix, np.ndarray]:
        """
        Return (M, c) so that the residuals of all activation constraints at
        state z are M @ z + c
        """
        if self._residual_matrix is None:
            rows, cols, data = [], [], []
            for pos, res in enumerate(self.residuals):
                for i, coeff in res.expr.terms.items():
                    rows.append(pos)
                    cols.append(i)
                    data.append(coeff)
            self._residual_matrix = scipy.sparse.csr_matrix(
                    (data, (rows, cols)), shape=(len(self.residuals), self.size))
            self._residual_const = np.array([res.expr.const for res in self.residuals], dtype=np.float64)
        return self._residual_matrix, self._residual_const

    def counts(self) -> Dict[str, int]:
        """
        Sizes of the training model
        """
        slack_bits = sum(len(bits) for bits in self.slack.values())
        return {
            "weights": len(self.weight),
            "biases": len(self.bias),
            "activations": len(self.activations),
            "products": len(self.products),
            "binary": self.binary_count,
            "integer": len(self.slack),
            "slack_bits": slack_bits,
            "variables": self.size,
            "activation_constraints": len(self.residuals),
            "product_constraints": len(self.product_list),
            "constraints": len(self.residuals) + len(self.product_list),
        }

    def check_state(self, z) -> np.ndarray:
        z = np.asarray(z)
        if z.shape != (self.size,):
            raise ValueError(f"state has shape {z.shape} instead of ({self.size},)")
        return z


def _normalise_batch(t: Topology, batch: Sequence[Datapoint]) -> Tuple[List[Tuple[int, ...]], List[Tuple[int, ...]]]:
    if not batch:
        raise ValueError("the training batch is empty")
    inputs, outputs = [], []
    for k, (pixels, target) in enumerate(batch):
        pixels = tuple(int(x) for x in pixels)
        if len(pixels) != t.input_size:
            raise ValueError(f"datapoint {k} has {len(pixels)} inputs, but the network takes {t.input_size}")
        if any(x not in (-1, 1) for x in pixels):
            raise ValueError(f"datapoint {k} has inputs that are not -1 or 1")
        if isinstance(target, str):
            target = label_to_outputs(target)
        target = tuple(int(x) for x in target)
        if len(target) != t.output_size:
            raise ValueError(f"datapoint {k} has {len(target)} outputs, but the network has {t.output_size}")
        if any(x not in (-1, 1) for x in target):
            raise ValueError(f"datapoint {k} has outputs that are not -1 or 1")
        inputs.append(pixels)
        outputs.append(target)
    return inputs, outputs


def build(t: Topology, batch: Sequence[Datapoint], p: Optional[BuildParams] = None) -> Tuple[QuboModel, VariableMap]:
    """
    Build the training Hamiltonian H1 + αH2 − γH_som − H_ext for the batch
    """
    if p is None:
        p = BuildParams()
    validation = p.check("build parameters")
    for warning in validation.warnings:
        log.warning("%s", warning)

    inputs, outputs = _normalise_batch(t, batch)
    vm = VariableMap(t, inputs, outputs)

    acc = QuboAccumulator(vm.size)
    for res in vm.residuals:
        acc.add_square(res.expr)
    if p.alpha:
        for prod in vm.product_list:
            # v·y − 2v·ψ − 2y·ψ + 3ψ
            acc.add_quadratic(prod.v, prod.y, p.alpha)
            acc.add_quadratic(prod.v, prod.psi, -2 * p.alpha)
            acc.add_quadratic(prod.y, prod.psi, -2 * p.alpha)
            acc.add_linear(prod.psi, 3 * p.alpha)
    q = acc.to_model()

    if p.gamma:
        q = add_margin_term(q, vm, t, p.gamma)
    if p.c_w or p.c_b:
        q = add_external_bias(
                q, vm,
                p.c_w or [0.0] * len(vm.weight),
                p.c_b or [0.0] * len(vm.bias))

    counts = vm.counts()
    log.info("%s: %d datapoints, %d binary variables, %d slack bits, %d constraints, %d couplings",
             t.name, vm.batch_size, counts["binary"], counts["slack_bits"], counts["constraints"], len(q.quadratic))
    return q.astype(PRECISIONS[p.precision]), vm


def add_margin_term(q: QuboModel, vm: VariableMap, t: Topology, gamma: float) -> QuboModel:
    """
    Subtract γ times the sum over nodes and datapoints of (2y−1)·π, where π is
    the pre-activation written in terms of the activation and slack bits.

    At a state satisfying the activation constraints, each summand is |π|.
    """
    if gamma < 0:
        raise ValueError(f"gamma {gamma} must not be negative")
    if t is not vm.topology and t != vm.topology:
        raise ValueError("the variable map was built for a different topology")
    if gamma == 0:
        return q

    acc = QuboAccumulator.from_model(q)
    for res in vm.residuals:
        # π = A·y + 2χ − B
        A = 2 ** (res.width.n + 1)
        B = 2 * res.width.offset + res.in_degree + 1
        if res.y_index is None:
            sign = 2 * res.y_const - 1
            acc.add_constant(-gamma * sign * (A * res.y_const - B))
            for bit, s in enumerate(res.slack):
                acc.add_linear(s, -gamma * sign * 2 * 2 ** bit)
        else:
            # (2y−1)(Ay + 2χ − B) = (A − 2B)y + 4yχ − 2χ + B
            acc.add_linear(res.y_index, -gamma * (A - 2 * B))
            acc.add_constant(-gamma * B)
            for bit, s in enumerate(res.slack):
                acc.add_quadratic(res.y_index, s, -gamma * 4 * 2 ** bit)
                acc.add_linear(s, gamma * 2 * 2 ** bit)
    return acc.to_model(dtype=q.dtype)


def add_external_bias(q: QuboModel, vm: VariableMap, c_w: Sequence[float], c_b: Sequence[float]) -> QuboModel:
    """
    Subtract Σ c_b·b + Σ c_w·w, with the bipolar parameters b = 2d − 1 and
    w = 2v − 1.

    c_w is indexed like the weight groups of the network, c_b like its
    non-input nodes.
    """
    if len(c_w) != len(vm.weight):
        raise ValueError(f"c_w has {len(c_w)} values, but the network has {len(vm.weight)} weight groups")
    if len(c_b) != len(vm.bias):
        raise ValueError(f"c_b has {len(c_b)} values, but the network has {len(vm.bias)} biases")

    acc = QuboAccumulator.from_model(q)
    for index, coeff in zip(vm.weight.values(), c_w):
        acc.add_linear(index, -2 * coeff)
        acc.add_constant(coeff)
    for index, coeff in zip(vm.bias.values(), c_b):
        acc.add_linear(index, -2 * coeff)
        acc.add_constant(coeff)
    return acc.to_model(dtype=q.dtype)


def residuals(vm: VariableMap, z) -> np.ndarray:
    """
    Residuals of all activation constraints at state z
    """
    z = vm.check_state(z)
    matrix, const = vm.residual_matrix
    return matrix @ z.astype(np.float64) + const


def product_violations(vm: VariableMap, z) -> np.ndarray:
    """
    Boolean array telling which product constraints ψ = v·y are violated
    """
    z = vm.check_state(z)
    if not vm.product_list:
        return np.zeros(0, dtype=bool)
    idx = np.array([(p.psi, p.v, p.y) for p in vm.product_list])
    return z[idx[:, 0]] != z[idx[:, 1]] * z[idx[:, 2]]


def audit_constraints(vm: VariableMap, z) -> Tuple[int, int]:
    """
    Count the violated activation and product constraints at state z
    """
    n_activation = int(np.count_nonzero(np.abs(residuals(vm, z)) > 0.5))
    n_product = int(np.count_nonzero(product_violations(vm, z)))
    return n_activation, n_product


def margin_terms(vm: VariableMap, z) -> np.ndarray:
    """
    Value of (2y−1)·π for each activation constraint, in the order of
    vm.residuals
    """
    z = vm.check_state(z)
    res = np.empty(len(vm.residuals))
    for pos, r in enumerate(vm.residuals):
        y = r.y_const if r.y_index is None else int(z[r.y_index])
        chi = sum(int(z[s]) << bit for bit, s in enumerate(r.slack))
        pi = 2 * ((y << r.width.n) + chi - r.width.offset) - r.in_degree - 1
        res[pos] = (2 * y - 1) * pi
    return res


def penalty_values(vm: VariableMap, z) -> Dict[str, float]:
    """
    Evaluate H1, H2 and H_som at state z from their definitions
    """
    z = vm.check_state(z)
    h2 = 0.0
    for p in vm.product_list:
        v, y, psi = int(z[p.v]), int(z[p.y]), int(z[p.psi])
        h2 += v * y - 2 * v * psi - 2 * y * psi + 3 * psi
    return {
        "h1": float(np.sum(residuals(vm, z) ** 2)),
        "h2": h2,
        "h_som": float(np.sum(margin_terms(vm, z))),
    }
