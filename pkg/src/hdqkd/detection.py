"""Bob's analysers: deterministic vector and scalar, and the filter-based tree.

Port order inside an analyser is path-major then OAM bin (+l, -l):
vector ports (c,+l), (c,-l), (d,+l), (d,-l); scalar ports (a,+l), (a,-l),
(b,+l), (b,-l). Which bit pair a port stands for comes from
``data/portmap.json``.

The mode sorters are ideal OAM-to-bin projectors here. Their geometry
(:func:`sorter_position`, :func:`conformal_map`) is available separately.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from . import optics
from .hilbert import (
    POLS,
    BasisIndex,
    HybridState,
    apply,
    inner_product,
    outcome_distribution,
)

ANALYSER_PATHS = {"vector": ("c", "d"), "scalar": ("a", "b")}
# quarter-wave plate in front of the scalar analyser's grating
SCALAR_QWP_ANGLE = 0.0
FILTER_SPLIT_LOSS = 0.5


@dataclass(frozen=True)
class DetectorPort:
    analyser: str
    path: str
    oam_bin: int

    def __post_init__(self):
        if self.path not in ANALYSER_PATHS.get(self.analyser, ()):
            raise ValueError(f"{self.analyser} analyser has no path {self.path!r}")


@dataclass(frozen=True)
class MeasurementOutcome:
    port: DetectorPort | None
    decoded_bits: str | None
    click: bool

    def __post_init__(self):
        if self.click != (self.decoded_bits is not None):
            raise ValueError("decoded bits are defined exactly when the detector clicks")


@dataclass(frozen=True)
class SorterGeometry:
    aperture_d: float
    focal_f: float
    wavelength: float
    scale_b: float

    def __post_init__(self):
        for name in ("aperture_d", "focal_f", "wavelength", "scale_b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


DEFAULT_GEOMETRY = SorterGeometry(aperture_d=8e-3, focal_f=0.3, wavelength=700e-9, scale_b=1e-3)


class SingularityError(ValueError):
    pass


@dataclass(frozen=True)
class PortMap:
    """(analyser, path, oam sign) -> bit pair."""

    table: dict

    @classmethod
    def load(cls, path=None) -> PortMap:
        if path is None:
            text = resources.files("hdqkd").joinpath("data/portmap.json").read_text()
        else:
            with open(path) as fh:
                text = fh.read()
        table = {}
        for row in json.loads(text)["ports"]:
            key = (row["analyser"], row["path"], int(np.sign(row["oam_bin"])))
            if key in table:
                raise ValueError(f"duplicate port {key}")
            table[key] = row["bits"]
        for analyser in ANALYSER_PATHS:
            bits = [v for (a, _, _), v in table.items() if a == analyser]
            if sorted(bits) != ["00", "01", "10", "11"]:
                raise ValueError(f"{analyser} ports must carry each bit pair once")
        return cls(table)

    def bits(self, port: DetectorPort) -> str:
        return self.table[(port.analyser, port.path, int(np.sign(port.oam_bin)))]

    def decode_table(self, analyser: str) -> tuple[str, ...]:
        """Bit pairs for the analyser's ports in port order."""
        return tuple(self.bits(p) for p in analyser_ports(analyser, 1))


@lru_cache(maxsize=None)
def default_portmap() -> PortMap:
    return PortMap.load()


def analyser_ports(analyser: str, l: int) -> tuple[DetectorPort, ...]:
    return tuple(
        DetectorPort(analyser, path, sign * l)
        for path in ANALYSER_PATHS[analyser]
        for sign in (1, -1)
    )


def _port_sets(analyser: str, l: int) -> list[list[BasisIndex]]:
    # the sorter bins OAM only, so each port integrates over polarisation
    return [[BasisIndex(p, port.oam_bin, port.path) for p in POLS] for port in analyser_ports(analyser, l)]


def vector_chain(s: HybridState, delta: float = np.pi / 2, leakage: float = 0.0) -> HybridState:
    s = apply(optics.pg_split_operator(s.space, leakage), s)
    return apply(optics.bs_operator(s.space, delta), s)


def scalar_chain(s: HybridState, leakage: float = 0.0) -> HybridState:
    qwp = optics.waveplate_operator(optics.WavePlateSpec("quarter", SCALAR_QWP_ANGLE), s.space)
    s = apply(qwp, s)
    return apply(optics.pg_split_operator(s.space, leakage), s)


def port_probabilities(
    s: HybridState, analyser: str, delta: float = np.pi / 2, leakage: float = 0.0
) -> np.ndarray:
    if analyser == "vector":
        out = vector_chain(s, delta, leakage)
    elif analyser == "scalar":
        out = scalar_chain(s, leakage)
    else:
        raise ValueError(f"unknown analyser {analyser!r}")
    return outcome_distribution(out, _port_sets(analyser, s.subspace_l))


def sample_index(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF draw; ``u`` beyond the total (rounding) lands on the last
    non-zero entry."""
    cdf = np.cumsum(probs)
    k = int(np.searchsorted(cdf, u, side="right"))
    if k >= len(probs):
        k = int(np.flatnonzero(probs > 0)[-1])
    return k


def _deterministic(s, analyser, u, portmap, **kw) -> MeasurementOutcome:
    portmap = portmap or default_portmap()
    probs = port_probabilities(s, analyser, **kw)
    port = analyser_ports(analyser, s.subspace_l)[sample_index(probs, u)]
    return MeasurementOutcome(port, portmap.bits(port), True)


def vector_analyse(
    s: HybridState,
    delta: float = np.pi / 2,
    rng_sample: float = 0.5,
    portmap: PortMap | None = None,
    leakage: float = 0.0,
) -> MeasurementOutcome:
    return _deterministic(s, "vector", rng_sample, portmap, delta=delta, leakage=leakage)


def scalar_analyse(
    s: HybridState,
    rng_sample: float = 0.5,
    portmap: PortMap | None = None,
    leakage: float = 0.0,
) -> MeasurementOutcome:
    return _deterministic(s, "scalar", rng_sample, portmap, leakage=leakage)


def filter_click_probability(s: HybridState, target: str) -> float:
    """Probability that the filter arm for ``target`` fires."""
    ref = optics.codebook_states(s.subspace_l)[target]
    return FILTER_SPLIT_LOSS * abs(inner_product(ref, s)) ** 2


def filter_analyse(s: HybridState, target: str, rng_sample: float) -> MeasurementOutcome:
    if rng_sample < filter_click_probability(s, target):
        return MeasurementOutcome(None, optics.label_bits(target), True)
    return MeasurementOutcome(None, None, False)


def filter_tree_probabilities(s: HybridState, basis: str) -> np.ndarray:
    """Click probability of each filter arm of one basis, in codebook order.

    The entry 50:50 splitter sends the photon to one of two arms; each arm
    resolves two modes of the basis and rejects the other two, so any state
    in the basis span clicks with total probability 1/2.
    """
    labels = optics.VECTOR_LABELS if basis == "vector" else optics.SCALAR_LABELS
    return np.array([filter_click_probability(s, t) for t in labels])


def filter_tree_analyse(s: HybridState, basis: str, rng_sample: float) -> MeasurementOutcome:
    probs = filter_tree_probabilities(s, basis)
    if rng_sample >= probs.sum():
        return MeasurementOutcome(None, None, False)
    k = sample_index(probs, rng_sample)
    labels = optics.VECTOR_LABELS if basis == "vector" else optics.SCALAR_LABELS
    return MeasurementOutcome(None, optics.label_bits(labels[k]), True)


def exact_crosstalk(
    l: int,
    delta: float = np.pi / 2,
    leakage: float = 0.0,
    states: dict[str, HybridState] | None = None,
    portmap: PortMap | None = None,
) -> np.ndarray:
    """8x8 Born probabilities: rows prepared, columns decoded mode.

    Each row holds one distribution per analyser, so it sums to 2.
    """
    portmap = portmap or default_portmap()
    states = states or optics.generated_codebook(l)
    labels = optics.CODEBOOK_LABELS
    m = np.zeros((8, 8))
    for i, lab in enumerate(labels):
        for analyser in optics.BASES:
            kw = {"delta": delta} if analyser == "vector" else {}
            probs = port_probabilities(states[lab], analyser, leakage=leakage, **kw)
            for port, p in zip(analyser_ports(analyser, l), probs):
                j = labels.index(optics.mode_label(analyser, portmap.bits(port)))
                m[i, j] += p
    return m


def sorter_position(oam: int, geom: SorterGeometry = DEFAULT_GEOMETRY) -> float:
    """Lateral focal-plane position of OAM ``oam`` after the sorter."""
    return geom.wavelength * geom.focal_f * oam / geom.aperture_d


def conformal_map(x: float, y: float, geom: SorterGeometry = DEFAULT_GEOMETRY) -> tuple[float, float]:
    """Log-polar unwrapping of the first sorter element, atan2 branch (-pi, pi]."""
    if x == 0 and y == 0:
        raise SingularityError("the conformal map is singular at the origin")
    k = geom.aperture_d / (2 * math.pi)
    return k * math.atan2(y, x), -k * math.log(math.hypot(x, y) / geom.scale_b)
