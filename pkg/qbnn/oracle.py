"""
Brute force reference for small instances.

Everything here is computed by exhaustive enumeration, independently of the
annealer, to check that the QUBO encoding has zero-energy states exactly
when the network can fit its training batch.
"""
from __future__ import annotations

import graphlib
import itertools
import logging
from typing import Dict, Iterator, List, NamedTuple, Tuple

import numpy as np

from . import builder, consts
from .anneal import AnnealConfig, Schedule, anneal, derive_seed
from .evaluator import TrainedNetwork, UnsupportedInferenceError, decode, encode, preactivations
from .topology import INPUT, Topology, node_width

log = logging.getLogger("qbnn.oracle")

# Number of assignments evaluated at once
_CHUNK = 1 << 16


class CapacityError(RuntimeError):
    """
    Raised when an instance is too large for exhaustive enumeration
    """
    pass


class Fit(NamedTuple):
    weights: Dict[int, int]
    biases: Dict[int, int]


def _check_capacity(t: Topology):
    params = len(t.groups) + len(t.non_inputs)
    if params > consts.ORACLE_CAPACITY:
        raise CapacityError(
                f"{t.name}: {params} parameters exceed the enumeration limit of {consts.ORACLE_CAPACITY}")
    return params


def _targets(t: Topology, batch) -> Tuple[List[Tuple[int, ...]], List[Tuple[int, ...]]]:
    if not batch:
        return [], []
    # Reuse the checks made when building the QUBO
    return builder._normalise_batch(t, batch)


def _enumerate(t: Topology, batch) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """
    Generate (assignments, correct) chunks: assignments is a matrix of bipolar
    parameters (weight groups first, then biases), correct counts the
    datapoints each assignment classifies right
    """
    params = _check_capacity(t)
    inputs, outputs = _targets(t, batch)
    try:
        order = t.topological_order()
    except graphlib.CycleError as e:
        raise UnsupportedInferenceError(f"{t.name}: cannot enumerate fits of a network with cycles") from e

    group_col = {group: pos for pos, group in enumerate(t.groups)}
    bias_col = {node: len(t.groups) + pos for pos, node in enumerate(t.non_inputs)}
    total = 1 << params

    for start in range(0, total, _CHUNK):
        codes = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
        assignments = (((codes[:, None] >> np.arange(params)) & 1) * 2 - 1).astype(np.int64)
        correct = np.zeros(len(codes), dtype=np.int64)
        for pixels, target in zip(inputs, outputs):
            activation: Dict[int, np.ndarray] = {}
            for node in order:
                if t.kind[node] == INPUT:
                    activation[node] = np.full(len(codes), pixels[t.pixel(node)], dtype=np.int64)
                    continue
                pi = assignments[:, bias_col[node]].copy()
                for conn in t.predecessors[node]:
                    pi += assignments[:, group_col[conn.group]] * activation[conn.src]
                activation[node] = np.where(pi > 0, 1, -1)
            ok = np.ones(len(codes), dtype=bool)
            for node, value in zip(t.output_order, target):
                ok &= activation[node] == value
            correct += ok
        yield assignments, correct


def _to_fit(t: Topology, row: np.ndarray) -> Fit:
    weights = {group: int(row[pos]) for pos, group in enumerate(t.groups)}
    biases = {node: int(row[len(t.groups) + pos]) for pos, node in enumerate(t.non_inputs)}
    return Fit(weights, biases)


def enumerate_fit(t: Topology, batch) -> Tuple[bool, float]:
    """
    Try every bipolar assignment of weights and biases.

    Return whether some assignment classifies the whole batch correctly, and
    the best training accuracy reached
    """
    if not batch:
        _check_capacity(t)
        return True, 1.0
    best = 0
    for assignments, correct in _enumerate(t, batch):
        best = max(best, int(correct.max()))
        if best == len(batch):
            break
    return best == len(batch), best / len(batch)


def iter_fits(t: Topology, batch) -> Iterator[Fit]:
    """
    Generate all the assignments that fit the batch
    """
    for assignments, correct in _enumerate(t, batch):
        for row in assignments[correct == len(batch)]:
            yield _to_fit(t, row)


def construct_witness(vm: "builder.VariableMap", fit: Fit) -> np.ndarray:
    """
    Build the QUBO state induced by a fitting assignment
    """
    return encode(vm, TrainedNetwork(vm.topology, fit.weights, fit.biases))


def zero_energy_states(
        q, vm: "builder.VariableMap", seed: int = 0, tolerance: float = 1e-9) -> Tuple[List[np.ndarray], bool]:
    """
    Look for states with zero energy.

    Return the states found, and whether the search was exhaustive
    """
    if vm.size <= consts.ORACLE_EXHAUSTIVE_VARIABLES:
        found = []
        total = 1 << vm.size
        for start in range(0, total, _CHUNK):
            codes = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
            states = ((codes[:, None] >> np.arange(vm.size)) & 1).astype(np.uint8)
            energies = q.energies(states)
            found.extend(states[np.abs(energies) <= tolerance])
        return found, True

    cfg = AnnealConfig(
            n_replicas=64, seed=derive_seed(seed, "oracle"),
            schedule=Schedule(n_steps=300), workers=1)
    outcome = anneal(q, cfg)
    found = [state for state, energy in zip(outcome.per_replica_states, outcome.per_replica_energies)
             if abs(energy) <= tolerance]
    return found, False


class EquivalenceReport(NamedTuple):
    fits: int
    zero_states: int
    exhaustive: bool
    # Fits whose induced state does not have zero energy
    bad_witnesses: int
    # Zero energy states that do not decode to a fitting network
    bad_zero_states: int

    @property
    def ok(self) -> bool:
        if self.bad_witnesses or self.bad_zero_states:
            return False
        if self.exhaustive:
            return (self.fits > 0) == (self.zero_states > 0)
        # Without an exhaustive search, zero energy states can only be found
        # when a fit exists
        return self.fits > 0 or self.zero_states == 0


def _fits_batch(net: TrainedNetwork, vm: "builder.VariableMap") -> bool:
    for k in range(vm.batch_size):
        pixels = [2 * b - 1 for b in vm.input_bits[k]]
        activation, pre = preactivations(net, pixels)
        target = tuple(2 * b - 1 for b in vm.output_bits[k])
        if tuple(activation[node] for node in vm.topology.output_order) != target:
            return False
    return True


def check_equivalence(t: Topology, batch, seed: int = 0) -> EquivalenceReport:
    """
    Compare the fitting assignments of a network with the zero energy states
    of its training QUBO
    """
    _check_capacity(t)
    q, vm = builder.build(t, batch)

    fits = 0
    bad_witnesses = 0
    for fit in iter_fits(t, batch):
        fits += 1
        z = construct_witness(vm, fit)
        if q.energy(z) != 0 or builder.audit_constraints(vm, z) != (0, 0):
            log.debug("%s: fit %s does not induce a zero energy state", t.name, fit)
            bad_witnesses += 1

    states, exhaustive = zero_energy_states(q, vm, seed=seed)
    bad_zero_states = 0
    for z in states:
        net = decode(vm, z)
        if builder.audit_constraints(vm, z) != (0, 0) or not _fits_batch(net, vm):
            bad_zero_states += 1

    report = EquivalenceReport(fits, len(states), exhaustive, bad_witnesses, bad_zero_states)
    log.info("%s: %d fits, %d zero energy states (%s search)", t.name, fits, len(states),
             "exhaustive" if exhaustive else "annealed")
    return report


def verify_equivalence(t: Topology, batch, seed: int = 0) -> bool:
    """
    Check that a fitting assignment exists exactly when the training QUBO has
    a zero energy state
    """
    return check_equivalence(t, batch, seed=seed).ok


def binary_expansion(value: int, bits: int) -> Tuple[int, ...]:
    """
    Bits of value, least significant first
    """
    if value < 0 or value >= 1 << bits:
        raise ValueError(f"{value} does not fit in {bits} bits")
    return tuple((value >> bit) & 1 for bit in range(bits))


def theorem_holds(m: int) -> bool:
    """
    Check, for every x in {-1, 1}^m, that the top bit of the (n+1)-bit
    expansion of the number of +1 values plus ⌊κ/2⌋ is set exactly when
    Σx ≥ 1
    """
    if m < 1:
        raise ValueError(f"m={m} must be at least 1")
    width = node_width(m - 1)
    codes = np.arange(1 << m, dtype=np.int64)
    active = ((codes[:, None] >> np.arange(m)) & 1).sum(axis=1)
    total = active + width.offset
    if total.max() >= 1 << (width.n + 1):
        return False
    top = (total >> width.n) & 1
    return bool(np.array_equal(top == 1, 2 * active - m >= 1))


class ActivationRow(NamedTuple):
    x: Tuple[int, ...]
    # Σx
    pi: int
    # Number of +1 values
    rho: int
    # Bits of rho + ⌊κ/2⌋, least significant first
    bits: Tuple[int, ...]
    activation: int


def activation_table(m: int = 3) -> List[ActivationRow]:
    """
    Activation of a node for every combination of m bipolar terms
    """
    width = node_width(m - 1)
    rows = []
    for x in itertools.product((-1, 1), repeat=m):
        rho = sum((xi + 1) // 2 for xi in x)
        pi = sum(x)
        rows.append(ActivationRow(
            x, pi, rho, binary_expansion(rho + width.offset, width.n + 1), 1 if pi > 0 else -1))
    return rows


def product_penalty(v: int, y: int, psi: int) -> int:
    return v * y - 2 * v * psi - 2 * y * psi + 3 * psi


def product_penalty_table() -> List[Tuple[int, int, int, int]]:
    """
    (v, y, ψ, penalty) for all binary values
    """
    return [(v, y, psi, product_penalty(v, y, psi)) for v, y, psi in itertools.product((0, 1), repeat=3)]


def independent_audit(vm: "builder.VariableMap", z) -> Tuple[int, int]:
    """
    Count violated activation and product constraints by evaluating each
    constraint on the symbols of the state, without the residual
    expressions of the builder
    """
    t = vm.topology
    z = vm.check_state(z)
    n_activation = 0
    n_product = 0
    for node in t.non_inputs:
        width = vm.widths[node]
        for k in range(vm.batch_size):
            count = int(z[vm.bias[node]])
            for idx, conn in enumerate(t.connections):
                if conn.dst != node:
                    continue
                v = int(z[vm.weight[conn.group]])
                src_index, src_const = vm.activation(conn.src, k)
                if src_index is None:
                    count += 1 if v == src_const else 0
                else:
                    psi = int(z[vm.products[(idx, k)]])
                    y = int(z[src_index])
                    count += 2 * psi - v - y + 1
                    if psi != v * y:
                        n_product += 1
            y_index, y_const = vm.activation(node, k)
            y = y_const if y_index is None else int(z[y_index])
            chi = sum(int(z[s]) << bit for bit, s in enumerate(vm.slack[(node, k)]))
            if count + width.offset != (y << width.n) + chi:
                n_activation += 1
    return n_activation, n_product
