"""
Quadratic models over binary variables.
"""
from __future__ import annotations

from collections import defaultdict
from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np
import scipy.sparse

Quadratic = Dict[Tuple[int, int], float]


class QuboModel:
    """
    E(z) = constant + Σ linear[i] z[i] + Σ_{i<j} quadratic[i, j] z[i] z[j]
    for z in {0, 1}^size.

    Instances are not meant to be modified after construction.
    """
    def __init__(
            self,
            size: int,
            constant: float = 0.0,
            linear: Optional[Iterable[float]] = None,
            quadratic: Optional[Mapping[Tuple[int, int], float]] = None,
            dtype=np.float64):
        if size < 0:
            raise ValueError(f"size {size} must not be negative")
        self.size = size
        self.dtype = np.dtype(dtype)
        self.constant = float(constant)
        if linear is None:
            self.linear = np.zeros(size, dtype=self.dtype)
        else:
            self.linear = np.array(linear, dtype=self.dtype)
            if self.linear.shape != (size,):
                raise ValueError(f"linear has shape {self.linear.shape} instead of ({size},)")
        self.linear.flags.writeable = False

        self.quadratic: Quadratic = {}
        for (i, j), coeff in (quadratic or {}).items():
            if i == j:
                raise ValueError(f"quadratic term ({i}, {j}) is on the diagonal")
            if i > j:
                i, j = j, i
            if not 0 <= i < j < size:
                raise ValueError(f"quadratic term ({i}, {j}) is outside 0…{size - 1}")
            if coeff == 0:
                continue
            self.quadratic[(i, j)] = self.quadratic.get((i, j), 0.0) + float(coeff)
        self.quadratic = {k: v for k, v in sorted(self.quadratic.items()) if v != 0}
        self._coupling: Optional[scipy.sparse.csr_matrix] = None

    @property
    def coupling(self) -> scipy.sparse.csr_matrix:
        """
        Symmetric sparse matrix J with J[i, j] = J[j, i] = quadratic[i, j]
        """
        if self._coupling is None:
            if self.quadratic:
                ij = np.array(list(self.quadratic.keys()), dtype=np.int64)
                vals = np.array(list(self.quadratic.values()), dtype=self.dtype)
                rows = np.concatenate((ij[:, 0], ij[:, 1]))
                cols = np.concatenate((ij[:, 1], ij[:, 0]))
                data = np.concatenate((vals, vals))
            else:
                rows = cols = np.zeros(0, dtype=np.int64)
                data = np.zeros(0, dtype=self.dtype)
            self._coupling = scipy.sparse.csr_matrix(
                    (data, (rows, cols)), shape=(self.size, self.size), dtype=self.dtype)
        return self._coupling

    def _check_state(self, z) -> np.ndarray:
        z = np.asarray(z)
        if z.shape[-1:] != (self.size,):
            raise ValueError(f"state has {z.shape[-1] if z.ndim else 0} variables instead of {self.size}")
        return z.astype(self.dtype)

    def energy(self, z) -> float:
        """
        Evaluate the model on a single bit vector
        """
        z = self._check_state(z)
        return float(self.constant + self.linear @ z + 0.5 * z @ (self.coupling @ z))

    def energies(self, states) -> np.ndarray:
        """
        Evaluate the model on each row of a matrix of bit vectors
        """
        z = np.atleast_2d(self._check_state(states))
        fields = (self.coupling @ z.T).T
        return self.constant + z @ self.linear + 0.5 * np.einsum("ij,ij->i", z, fields)

    def local_fields(self, states) -> np.ndarray:
        """
        Return, for each state and variable, the energy change of setting the
        variable from 0 to 1 with all the others unchanged
        """
        z = self._check_state(states)
        return self.linear + (self.coupling @ z.T).T

    def delta_energy(self, z, index: int) -> float:
        """
        Energy change when flipping bit ``index`` of z
        """
        if not 0 <= index < self.size:
            raise ValueError(f"flip index {index} is outside 0…{self.size - 1}")
        z = self._check_state(z)
        coupling = self.coupling
        start, end = coupling.indptr[index], coupling.indptr[index + 1]
        field = self.linear[index] + coupling.data[start:end] @ z[coupling.indices[start:end]]
        return float((1 - 2 * z[index]) * field)

    def astype(self, dtype) -> "QuboModel":
        return QuboModel(self.size, self.constant, self.linear, self.quadratic, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, QuboModel):
            return NotImplemented
        return (self.size == other.size
                and self.constant == other.constant
                and np.array_equal(self.linear, other.linear)
                and self.quadratic == other.quadratic)

    __hash__ = None

    def __repr__(self):
        return "QuboModel(size={}, linear={}, quadratic={})".format(
                self.size, np.count_nonzero(self.linear), len(self.quadratic))


class Affine:
    """
    Affine expression const + Σ coeff × z[index] over binary variables
    """
    __slots__ = ("const", "terms")

    def __init__(self, const: float = 0.0):
        self.const = const
        self.terms: Dict[int, float] = defaultdict(float)

    def add(self, index: Optional[int], coeff: float, const: float = 0.0):
        """
        Add coeff × z[index], or coeff × const when the symbol is clamped
        (index is None)
        """
        if index is None:
            self.const += coeff * const
        else:
            self.terms[index] += coeff

    def evaluate(self, z) -> float:
        return self.const + sum(c * z[i] for i, c in self.terms.items())


class QuboAccumulator:
    """
    Collect QUBO terms, then freeze them into a QuboModel
    """
    def __init__(self, size: int):
        self.size = size
        self.constant = 0.0
        self.linear = np.zeros(size)
        self.quadratic: Dict[Tuple[int, int], float] = defaultdict(float)

    @classmethod
    def from_model(cls, q: QuboModel) -> "QuboAccumulator":
        res = cls(q.size)
        res.constant = q.constant
        res.linear += q.linear
        res.quadratic.update(q.quadratic)
        return res

    def add_constant(self, coeff: float):
        self.constant += coeff

    def add_linear(self, i: int, coeff: float):
        self.linear[i] += coeff

    def add_quadratic(self, i: int, j: int, coeff: float):
        if i == j:
            # z² = z on binary variables
            self.linear[i] += coeff
        elif i < j:
            self.quadratic[(i, j)] += coeff
        else:
            self.quadratic[(j, i)] += coeff

    def add_affine(self, expr: Affine, scale: float = 1.0):
        self.constant += scale * expr.const
        for i, coeff in expr.terms.items():
            self.linear[i] += scale * coeff

    def add_square(self, expr: Affine, scale: float = 1.0):
        """
        Add scale × expr²
        """
        terms = [(i, c) for i, c in expr.terms.items() if c != 0]
        self.constant += scale * expr.const * expr.const
        for pos, (i, ci) in enumerate(terms):
            self.linear[i] += scale * (ci * ci + 2 * expr.const * ci)
            for j, cj in terms[pos + 1:]:
                self.add_quadratic(i, j, scale * 2 * ci * cj)

    def to_model(self, dtype=np.float64) -> QuboModel:
        return QuboModel(self.size, self.constant, self.linear, self.quadratic, dtype=dtype)
