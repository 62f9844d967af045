"""Optical elements as operators on the hybrid space, plus mode generation.

Polarisation conventions (Jones vectors in the H/V basis):

    R = (1, -i)/sqrt2,  L = (1, i)/sqrt2,  D = (1, 1)/sqrt2,  A = (1, -1)/sqrt2

so that H = (R + L)/sqrt2 and D, A equal (R -/+ iL)/sqrt2 up to a global
phase. A retarder with retardance ``g`` and fast axis at ``alpha`` is
``Rot(-alpha) diag(1, e^{ig}) Rot(alpha)``; it is converted to the (R, L)
basis before acting on states.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from typing import Sequence

import numpy as np

from .hilbert import (
    BasisIndex,
    DomainError,
    ElementOperator,
    HybridState,
    Space,
    apply,
    restrict,
)

SQRT2 = np.sqrt(2.0)

JONES = {
    "H": np.array([1, 0], dtype=complex),
    "V": np.array([0, 1], dtype=complex),
    "D": np.array([1, 1], dtype=complex) / SQRT2,
    "A": np.array([1, -1], dtype=complex) / SQRT2,
    "R": np.array([1, -1j], dtype=complex) / SQRT2,
    "L": np.array([1, 1j], dtype=complex) / SQRT2,
}

# columns are R and L expressed in H/V
HV_FROM_CIRC = np.column_stack([JONES["R"], JONES["L"]])

VECTOR_LABELS = ("V00", "V01", "V10", "V11")
SCALAR_LABELS = ("S00", "S01", "S10", "S11")
CODEBOOK_LABELS = VECTOR_LABELS + SCALAR_LABELS
BASES = ("vector", "scalar")

RETARDANCE = {"quarter": np.pi / 2, "half": np.pi}


def parse_pi_multiple(value) -> float:
    """``"-1/4"`` -> -pi/4. Numbers are taken as multiples of pi as well."""
    return float(Fraction(str(value))) * np.pi


def label_basis(label: str) -> str:
    if label in VECTOR_LABELS:
        return "vector"
    if label in SCALAR_LABELS:
        return "scalar"
    raise KeyError(f"unknown codebook label {label!r}")


def label_bits(label: str) -> str:
    label_basis(label)
    return label[1:]


def mode_label(basis: str, bits: str) -> str:
    return {"vector": "V", "scalar": "S"}[basis] + bits


def circular_components(jones_hv: np.ndarray) -> np.ndarray:
    """(R, L) amplitudes of an H/V Jones vector."""
    return HV_FROM_CIRC.conj().T @ np.asarray(jones_hv, dtype=complex)


def retarder_jones(retardance: float, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, s], [-s, c]])
    return rot.T @ np.diag([1.0, np.exp(1j * retardance)]) @ rot


def waveplate_matrix(kind: str, angle: float) -> np.ndarray:
    """2x2 action of a wave plate on (R, L) amplitudes."""
    j = retarder_jones(RETARDANCE[kind], angle)
    return HV_FROM_CIRC.conj().T @ j @ HV_FROM_CIRC


@dataclass(frozen=True)
class WavePlateSpec:
    kind: str
    angle: float

    def __post_init__(self):
        if self.kind not in RETARDANCE:
            raise ValueError(f"wave plate kind must be quarter or half, got {self.kind!r}")
        if not np.isfinite(self.angle):
            raise ValueError("wave plate angle must be finite")


@dataclass(frozen=True)
class QPlateSpec:
    q: Fraction

    def __post_init__(self):
        q = Fraction(self.q)
        if (2 * q).denominator != 1:
            raise ValueError(f"q-plate charge must be a half-integer, got {q}")
        object.__setattr__(self, "q", q)

    @classmethod
    def for_subspace(cls, l: int) -> QPlateSpec:
        return cls(Fraction(abs(l), 2))


def _pol_operator(space: Space, pol_matrix: np.ndarray) -> np.ndarray:
    n_oam = len(space.oams)
    return np.kron(np.eye(len(space.paths)), np.kron(pol_matrix, np.eye(n_oam)))


def waveplate_operator(spec: WavePlateSpec, space: Space) -> ElementOperator:
    m = _pol_operator(space, waveplate_matrix(spec.kind, spec.angle))
    return ElementOperator(m, f"{spec.kind}({spec.angle:.6g})", space, space)


def qplate_operator(spec: QPlateSpec, space: Space) -> ElementOperator:
    """|m, L> -> |m + 2q, R>,  |m, R> -> |m - 2q, L>.

    Basis states whose image falls outside the modelled OAM set are left
    out of the element's domain; feeding them in raises DomainError.
    """
    shift = 2 * spec.q
    if shift.denominator != 1:
        raise ValueError("2q must be an integer")
    shift = int(shift)
    m = np.zeros((space.dim, space.dim), dtype=complex)
    support = []
    for j, b in enumerate(space.basis):
        if b.pol == "L":
            tgt = BasisIndex("R", b.oam + shift, b.path)
        else:
            tgt = BasisIndex("L", b.oam - shift, b.path)
        if space.contains(tgt):
            m[space.index(tgt), j] = 1.0
            support.append(j)
    return ElementOperator(m, f"qplate(q={spec.q})", space, space, tuple(support))


def pg_split_operator(space: Space, leakage: float = 0.0) -> ElementOperator:
    """Polarisation grating: R -> path a, L -> path b.

    ``leakage`` is the probability of a photon taking the wrong path; the
    element stays an isometry for any value in [0, 1].
    """
    if space.paths != (None,):
        raise DomainError("polarisation grating expects photons without a path label")
    if not 0.0 <= leakage <= 1.0:
        raise ValueError("leakage must be a probability")
    out = space.with_paths(("a", "b"))
    t, r = np.sqrt(1.0 - leakage), np.sqrt(leakage)
    m = np.zeros((out.dim, space.dim), dtype=complex)
    for j, b in enumerate(space.basis):
        main, stray = ("a", "b") if b.pol == "R" else ("b", "a")
        m[out.index(BasisIndex(b.pol, b.oam, main)), j] = t
        m[out.index(BasisIndex(b.pol, b.oam, stray)), j] = r
    return ElementOperator(m, "PG", space, out)


def _mirror(space: Space) -> np.ndarray:
    """Reflection flips circular handedness and the sign of OAM."""
    m = np.zeros((space.dim, space.dim))
    for j, b in enumerate(space.basis):
        flipped = BasisIndex("L" if b.pol == "R" else "R", -b.oam, b.path)
        m[space.index(flipped), j] = 1.0
    return m


def bs_operator(space: Space, delta: float = np.pi / 2) -> ElementOperator:
    """50:50 beam splitter joining paths a, b into output ports c, d.

    Path b picks up the dynamic phase ``delta`` first. Transmission is
    1/sqrt2, reflection i/sqrt2 and mirrors the photon; arm a reaches port
    c by transmission and arm b by reflection, so the polarisation in each
    port ends up common to both arms.
    """
    if space.paths != ("a", "b"):
        raise DomainError("beam splitter expects inputs on paths a and b")
    if set(space.oams) != {-m for m in space.oams}:
        raise DomainError("OAM set must be symmetric under reflection")
    out = space.with_paths(("c", "d"))
    half = space.dim // 2
    mir = _mirror(Space(space.subspace_l, space.oams))
    eye = np.eye(half)
    ph = np.exp(1j * delta)
    m = np.block([[eye, 1j * ph * mir], [1j * mir, ph * eye]]) / SQRT2
    return ElementOperator(m, f"BS(delta={delta:.6g})", space, out)


# ----------------------------------------------------------------------------
# codebook


def codebook_states(l: int) -> dict[str, HybridState]:
    """The eight protocol states written out directly in circular components."""
    sp = Space.codebook(l)

    def vec(terms):
        return HybridState.from_map(sp, {BasisIndex(p, m): a / SQRT2 for p, m, a in terms})

    def scalar(theta, m):
        return vec([("R", m, 1.0), ("L", m, np.exp(1j * (theta - np.pi / 2)))])

    return {
        "V00": vec([("R", l, 1), ("L", -l, 1)]),
        "V01": vec([("R", l, 1), ("L", -l, -1)]),
        "V10": vec([("L", l, 1), ("R", -l, 1)]),
        "V11": vec([("L", l, 1), ("R", -l, -1)]),
        "S00": scalar(0.0, -l),
        "S01": scalar(0.0, l),
        "S10": scalar(np.pi, -l),
        "S11": scalar(np.pi, l),
    }


@dataclass(frozen=True)
class RecipeElement:
    kind: str  # quarter | half | qplate
    angle: float = 0.0


@dataclass(frozen=True)
class GenerationRecipe:
    target_label: str
    elements: tuple[RecipeElement, ...]
    mode: str = ""

    SLOT_ORDER = ("quarter", "half", "qplate", "quarter", "half")

    def __post_init__(self):
        label_basis(self.target_label)
        kinds = [e.kind for e in self.elements]
        if kinds.count("qplate") != 1:
            raise ValueError("a recipe needs exactly one q-plate")
        # elements must be an ordered subsequence of the slot order, q-plate included
        pos = 0
        for k in kinds:
            try:
                pos = self.SLOT_ORDER.index(k, pos) + 1
            except ValueError:
                raise ValueError(f"element order {kinds} breaks {self.SLOT_ORDER}") from None

    @property
    def waveplates(self) -> tuple[RecipeElement, ...]:
        return tuple(e for e in self.elements if e.kind != "qplate")

    def slots(self) -> list[tuple[str, float] | None]:
        """The recipe laid onto the fixed 4 wave-plate slots (pre-QWP, pre-HWP,
        post-QWP, post-HWP)."""
        out: list[tuple[str, float] | None] = [None] * 4
        after = False
        for e in self.elements:
            if e.kind == "qplate":
                after = True
                continue
            slot = (2 if after else 0) + (0 if e.kind == "quarter" else 1)
            out[slot] = (e.kind, e.angle)
        return out


def recipe_from_dict(d: dict) -> GenerationRecipe:
    elems = []
    for e in d["elements"]:
        kind = e["kind"]
        angle = parse_pi_multiple(e.get("angle", 0)) if kind != "qplate" else 0.0
        elems.append(RecipeElement(kind, angle))
    return GenerationRecipe(d["target"], tuple(elems), d.get("mode", ""))


def load_recipes(path=None) -> dict[str, GenerationRecipe]:
    if path is None:
        text = resources.files("hdqkd").joinpath("data/recipes.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    rows = json.loads(text)["recipes"]
    recipes = [recipe_from_dict(r) for r in rows]
    return {r.target_label: r for r in recipes}


@lru_cache(maxsize=None)
def default_recipes() -> dict[str, GenerationRecipe]:
    return load_recipes()


def input_gaussian(l: int) -> HybridState:
    """Horizontally polarised OAM-0 photon in the generation space."""
    sp = Space.generation(l)
    r, lc = circular_components(JONES["H"])
    return HybridState.from_map(sp, {BasisIndex("R", 0): r, BasisIndex("L", 0): lc})


def generate_mode(
    recipe: GenerationRecipe, l: int, angle_errors: Sequence[float] | None = None
) -> HybridState:
    """Run the recipe's elements on |l=0, H> and return the codebook-space state.

    ``angle_errors`` (radians) are added to the wave plates in recipe order.
    """
    plates = recipe.waveplates
    if angle_errors is None:
        angle_errors = [0.0] * len(plates)
    if len(angle_errors) != len(plates):
        raise ValueError(f"need {len(plates)} angle errors, got {len(angle_errors)}")
    s = input_gaussian(l)
    errs = iter(angle_errors)
    for e in recipe.elements:
        if e.kind == "qplate":
            op = qplate_operator(QPlateSpec.for_subspace(l), s.space)
        else:
            op = waveplate_operator(WavePlateSpec(e.kind, e.angle + next(errs)), s.space)
        s = apply(op, s)
    return restrict(s, Space.codebook(l))


def generated_codebook(l: int) -> dict[str, HybridState]:
    return {k: generate_mode(r, l) for k, r in default_recipes().items()}
