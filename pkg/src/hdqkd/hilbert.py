"""State vectors and operators on the polarisation x OAM (x path) space.

Basis ordering is fixed once here and used everywhere else (matrices, CSV
headers, state dumps): path-major, then polarisation (R, L), then OAM in the
order listed by the space (``+l, -l`` for the codebook space). For the
codebook space that gives ``(R,+l), (R,-l), (L,+l), (L,-l)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

POLS = ("R", "L")
PATH_ORDER = (None, "a", "b", "c", "d")

NORM_TOL = 1e-10
UNITARY_TOL = 1e-10


class HilbertError(ValueError):
    pass


class DimensionMismatchError(HilbertError):
    pass


class NonUnitaryError(HilbertError):
    pass


class DomainError(HilbertError):
    pass


class CompletenessError(HilbertError):
    pass


@dataclass(frozen=True, order=True)
class BasisIndex:
    pol: str
    oam: int
    path: str | None = None

    def __post_init__(self):
        if self.pol not in POLS:
            raise ValueError(f"unknown polarisation {self.pol!r}")
        if self.path not in PATH_ORDER:
            raise ValueError(f"unknown path {self.path!r}")


@dataclass(frozen=True)
class Space:
    """An ordered product basis paths x {R, L} x oams."""

    subspace_l: int
    oams: tuple[int, ...]
    paths: tuple[str | None, ...] = (None,)

    def __post_init__(self):
        if self.subspace_l < 1:
            raise ValueError("subspace |l| must be >= 1")
        if len(set(self.oams)) != len(self.oams):
            raise ValueError("duplicate OAM values")
        if None in self.paths and len(self.paths) > 1:
            raise ValueError("path=None cannot be mixed with labelled paths")

    @classmethod
    def codebook(cls, l: int) -> Space:
        return cls(l, (l, -l))

    @classmethod
    def generation(cls, l: int) -> Space:
        # OAM 0 carries the input Gaussian before the q-plate
        return cls(l, (l, -l, 0))

    def with_paths(self, paths: Sequence[str | None]) -> Space:
        return Space(self.subspace_l, self.oams, tuple(paths))

    @property
    def dim(self) -> int:
        return len(self.paths) * 2 * len(self.oams)

    @property
    def basis(self) -> tuple[BasisIndex, ...]:
        return tuple(
            BasisIndex(p, m, path)
            for path in self.paths
            for p in POLS
            for m in self.oams
        )

    def index(self, b: BasisIndex) -> int:
        try:
            ip = self.paths.index(b.path)
            im = self.oams.index(b.oam)
        except ValueError:
            raise DomainError(f"{b} is outside the modelled space") from None
        return (ip * 2 + POLS.index(b.pol)) * len(self.oams) + im

    def contains(self, b: BasisIndex) -> bool:
        return b.path in self.paths and b.oam in self.oams


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.complex128)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HybridState:
    """Normalised pure state over a :class:`Space`."""

    space: Space
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen(self.amplitudes)
        if amps.shape != (self.space.dim,):
            raise DimensionMismatchError(
                f"expected {self.space.dim} amplitudes, got {amps.shape}"
            )
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > NORM_TOL:
            raise HilbertError(f"state is not normalised (norm^2 = {norm!r})")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_map(
        cls, space: Space, amps: Mapping[BasisIndex, complex], normalize: bool = False
    ) -> HybridState:
        vec = np.zeros(space.dim, dtype=np.complex128)
        for b, a in amps.items():
            vec[space.index(b)] += a
        if normalize:
            vec = vec / np.linalg.norm(vec)
        return cls(space, vec)

    @classmethod
    def basis_state(cls, space: Space, b: BasisIndex) -> HybridState:
        return cls.from_map(space, {b: 1.0})

    def amplitude(self, b: BasisIndex) -> complex:
        return complex(self.amplitudes[self.space.index(b)])

    @property
    def subspace_l(self) -> int:
        return self.space.subspace_l

    def to_records(self) -> list[dict]:
        """Dump in canonical order as ``{pol, oam, path, re, im}`` records."""
        return [
            {
                "pol": b.pol,
                "oam": b.oam,
                "path": b.path if b.path is not None else "none",
                "re": float(a.real),
                "im": float(a.imag),
            }
            for b, a in zip(self.space.basis, self.amplitudes)
        ]


@dataclass(frozen=True, eq=False)
class ElementOperator:
    """Linear map between two spaces.

    ``support`` lists the input basis states the element is defined on
    (default: all of them). The operator has to be an isometry there;
    applying it to a state with weight outside the support raises
    :class:`DomainError`.
    """

    matrix: np.ndarray
    label: str
    domain: Space
    codomain: Space
    support: tuple[int, ...] | None = field(default=None)

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.shape != (self.codomain.dim, self.domain.dim):
            raise DimensionMismatchError(
                f"{self.label}: matrix shape {m.shape} does not match "
                f"{self.codomain.dim}x{self.domain.dim}"
            )
        object.__setattr__(self, "matrix", m)
        err = unitarity_error(self)
        if err >= UNITARY_TOL:
            raise NonUnitaryError(f"{self.label}: ||U^dag U - I|| = {err:.3g}")

    @property
    def columns(self) -> np.ndarray:
        if self.support is None:
            return self.matrix
        return self.matrix[:, list(self.support)]

    @property
    def dagger(self) -> ElementOperator:
        if self.support is not None or self.domain != self.codomain:
            raise DomainError(f"{self.label}: adjoint only defined for square unitaries")
        return ElementOperator(
            self.matrix.conj().T, self.label + "^dag", self.codomain, self.domain
        )

    def then(self, other: ElementOperator) -> ElementOperator:
        """Compose: ``self`` first, then ``other``."""
        if other.domain != self.codomain:
            raise DimensionMismatchError(f"cannot chain {self.label} -> {other.label}")
        if self.support is not None or other.support is not None:
            raise DomainError("partial elements cannot be pre-composed; apply them in turn")
        return ElementOperator(
            other.matrix @ self.matrix, f"{self.label}>{other.label}", self.domain, other.codomain
        )


def unitarity_error(op: ElementOperator) -> float:
    cols = op.columns
    gram = cols.conj().T @ cols
    return float(np.max(np.abs(gram - np.eye(gram.shape[0]))))


def identity(space: Space) -> ElementOperator:
    return ElementOperator(np.eye(space.dim), "I", space, space)


def inner_product(a: HybridState, b: HybridState) -> complex:
    """<a|b>, conjugate-linear in ``a``."""
    if a.space != b.space:
        raise DimensionMismatchError(f"spaces differ: {a.space} vs {b.space}")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def overlap(a: HybridState, b: HybridState) -> float:
    return abs(inner_product(a, b)) ** 2


def apply(op: ElementOperator, s: HybridState) -> HybridState:
    if s.space != op.domain:
        raise DimensionMismatchError(
            f"{op.label} acts on {op.domain}, state lives in {s.space}"
        )
    err = unitarity_error(op)
    if err >= UNITARY_TOL:
        raise NonUnitaryError(f"{op.label}: ||U^dag U - I|| = {err:.3g}")
    if op.support is not None:
        outside = np.ones(s.space.dim, dtype=bool)
        outside[list(op.support)] = False
        leak = float(np.sum(np.abs(s.amplitudes[outside]) ** 2))
        if leak > NORM_TOL:
            raise DomainError(
                f"{op.label}: state has weight {leak:.3g} outside the element's domain"
            )
    return HybridState(op.codomain, op.matrix @ s.amplitudes)


def apply_chain(ops: Iterable[ElementOperator], s: HybridState) -> HybridState:
    for op in ops:
        s = apply(op, s)
    return s


def restrict(s: HybridState, space: Space) -> HybridState:
    """Drop basis states of ``s.space`` that are absent from ``space``."""
    vec = np.zeros(space.dim, dtype=np.complex128)
    for b, a in zip(s.space.basis, s.amplitudes):
        if space.contains(b):
            vec[space.index(b)] = a
        elif abs(a) ** 2 > NORM_TOL:
            raise DomainError(f"amplitude on {b} has no place in the target space")
    return HybridState(space, vec)


def embed(s: HybridState, space: Space) -> HybridState:
    vec = np.zeros(space.dim, dtype=np.complex128)
    for b, a in zip(s.space.basis, s.amplitudes):
        vec[space.index(b)] = a
    return HybridState(space, vec)


def outcome_distribution(
    s: HybridState, ports: Sequence[Iterable[BasisIndex]]
) -> np.ndarray:
    """Born probabilities for projectors onto spans of basis states.

    Each port is a set of basis states; the ports must be disjoint and
    together cover every basis state on which ``s`` has weight.
    """
    probs = np.abs(s.amplitudes) ** 2
    seen: set[int] = set()
    out = np.empty(len(ports))
    for k, port in enumerate(ports):
        idx = {s.space.index(b) for b in port}
        if idx & seen:
            raise CompletenessError("ports overlap; projectors are not orthogonal")
        seen |= idx
        out[k] = probs[sorted(idx)].sum()
    missing = [i for i in range(s.space.dim) if i not in seen and probs[i] > NORM_TOL]
    if missing:
        raise CompletenessError(
            f"ports do not cover the state's support: {[s.space.basis[i] for i in missing]}"
        )
    return out
