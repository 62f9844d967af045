"""Photon source statistics and the imperfection model.

Imperfections act on specific elements:

* ``waveplate_angle_sigma``: Gaussian error (rad) on every generation wave plate
* ``delta_phase_sigma``: Gaussian jitter (rad) of the vector analyser's path phase
* ``pg_leakage``: probability of the polarisation grating routing a photon
  into the wrong path (both analysers)
* ``depolarizing_p``: probability the photon arrives in a Haar-random state of
  the 4D codebook space
* ``misdetection_p``: probability a click is registered on a uniformly random
  port of the analyser

The split between these knobs is a modelling choice; the paper presets only
pin down ``depolarizing_p`` by calibration against a target fidelity.

Randomness comes in fixed-size blocks. Block ``k`` of a job draws from
``SeedSequence(seed, spawn_key=(tag, ..., k))``, so every trial's variates
depend on the seed and its index only, never on thread count or scheduling.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from . import _kernels, optics
from .detection import default_portmap
from .hilbert import HybridState, Space, overlap

log = logging.getLogger(__name__)

BLOCK_SIZE = 8192
PRESET_NAMES = ("ideal", "paper_l1", "paper_l10")

# spawn-key tags, one per kind of job
TAG_CROSSTALK = 1
TAG_BB84 = 2


@dataclass(frozen=True)
class SourceModel:
    mode: str = "deterministic_single_photon"
    mean_photon_number: float = 1.0

    def __post_init__(self):
        if self.mode not in ("deterministic_single_photon", "poisson"):
            raise ValueError(f"unknown source mode {self.mode!r}")
        if self.mean_photon_number < 0:
            raise ValueError("mean photon number must be >= 0")
        if self.mode == "poisson" and not self.mean_photon_number > 0:
            raise ValueError("a Poisson source needs mu > 0")


@dataclass(frozen=True)
class ImperfectionModel:
    waveplate_angle_sigma: float = 0.0
    delta_phase_sigma: float = 0.0
    pg_leakage: float = 0.0
    depolarizing_p: float = 0.0
    misdetection_p: float = 0.0

    def __post_init__(self):
        for name in ("pg_leakage", "depolarizing_p", "misdetection_p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        for name in ("waveplate_angle_sigma", "delta_phase_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def is_ideal(self) -> bool:
        return all(v == 0 for v in asdict(self).values())


@dataclass(frozen=True)
class Preset:
    name: str
    subspace_l: int
    imperfections: ImperfectionModel
    source: SourceModel = field(default_factory=SourceModel)
    target_fidelity: float | None = None


def preset_from_dict(d: dict, name: str | None = None) -> Preset:
    return Preset(
        name=name or d.get("name", "custom"),
        subspace_l=int(d.get("subspace_l", 1)),
        imperfections=ImperfectionModel(**d.get("imperfections", {})),
        source=SourceModel(**d.get("source", {})),
        target_fidelity=d.get("target_fidelity"),
    )


def load_preset(name_or_path: str) -> Preset:
    if name_or_path in PRESET_NAMES:
        text = resources.files("hdqkd").joinpath(f"data/presets/{name_or_path}.json").read_text()
        return preset_from_dict(json.loads(text), name_or_path)
    path = Path(name_or_path)
    with path.open() as fh:
        return preset_from_dict(json.load(fh), path.stem)


def emit(source: SourceModel, rng: np.random.Generator, n: int | None = None):
    """Photon number per clock cycle (an array when ``n`` is given)."""
    if source.mode == "deterministic_single_photon":
        return 1 if n is None else np.ones(n, dtype=np.int64)
    k = rng.poisson(source.mean_photon_number, size=n)
    return int(k) if n is None else k.astype(np.int64)


def random_state(rng: np.random.Generator, l: int = 1) -> HybridState:
    """Haar-random pure state of the codebook space."""
    z = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    return HybridState(Space.codebook(l), z / np.linalg.norm(z))


def perturb(
    s: HybridState,
    model: ImperfectionModel,
    rng: np.random.Generator,
    recipe: optics.GenerationRecipe | None = None,
) -> HybridState:
    """State-level imperfections for one photon.

    With ``recipe`` given, ``s`` must be that recipe's output; it is rebuilt
    with jittered wave-plate angles. Depolarisation is applied afterwards.
    The analyser-side knobs (path phase, grating leakage, misdetection) are
    drawn per detection by the analysers' callers, not here.
    """
    l = s.subspace_l
    if recipe is not None and model.waveplate_angle_sigma > 0:
        ideal = optics.generate_mode(recipe, l)
        if overlap(ideal, s) < 1 - 1e-9:
            raise ValueError("state does not match the recipe it claims to come from")
        errs = rng.normal(0.0, model.waveplate_angle_sigma, len(recipe.waveplates))
        s = optics.generate_mode(recipe, l, errs)
    if model.depolarizing_p > 0 and rng.random() < model.depolarizing_p:
        s = random_state(rng, l)
    return s


# ----------------------------------------------------------------------------
# Monte Carlo plumbing shared by crosstalk estimation and the protocol


@lru_cache(maxsize=None)
def kernel_tables() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Recipe slot kinds/angles and codebook amplitudes in codebook order."""
    recipes = optics.default_recipes()
    kinds = np.zeros((8, 4), dtype=np.int64)
    angles = np.zeros((8, 4))
    code = {"quarter": _kernels.QUARTER, "half": _kernels.HALF}
    for i, lab in enumerate(optics.CODEBOOK_LABELS):
        for k, slot in enumerate(recipes[lab].slots()):
            if slot is not None:
                kinds[i, k] = code[slot[0]]
                angles[i, k] = slot[1]
    states = optics.codebook_states(1)
    book = np.array([states[lab].amplitudes for lab in optics.CODEBOOK_LABELS])
    for arr in (kinds, angles, book):
        arr.setflags(write=False)
    return kinds, angles, book


def block_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


@dataclass
class TrialInputs:
    """Per-trial channel and detector variates (one row per photon)."""

    angle_err: np.ndarray
    delta: np.ndarray
    depol: np.ndarray
    rstate: np.ndarray
    misdet: np.ndarray
    misdet_port: np.ndarray
    u: np.ndarray

    def without_preparation_errors(self) -> TrialInputs:
        return replace(
            self, angle_err=np.zeros_like(self.angle_err), depol=np.zeros_like(self.depol)
        )


def draw_trial_inputs(rng: np.random.Generator, n: int, model: ImperfectionModel) -> TrialInputs:
    # fixed layout: every variate is drawn even when its knob is zero
    normal = rng.standard_normal((n, 5))
    unif = rng.random((n, 4))
    haar = rng.standard_normal((n, 8))
    z = haar[:, :4] + 1j * haar[:, 4:]
    return TrialInputs(
        angle_err=model.waveplate_angle_sigma * normal[:, :4],
        delta=np.pi / 2 + model.delta_phase_sigma * normal[:, 4],
        depol=unif[:, 0] < model.depolarizing_p,
        rstate=z / np.linalg.norm(z, axis=1, keepdims=True),
        misdet=unif[:, 1] < model.misdetection_p,
        misdet_port=np.minimum((unif[:, 2] * 4).astype(np.int64), 3),
        u=unif[:, 3],
    )


def run_trials(
    modes: np.ndarray,
    analysers: np.ndarray,
    inputs: TrialInputs,
    model: ImperfectionModel,
    kernel: str | None = None,
) -> np.ndarray:
    kinds, angles, book = kernel_tables()
    return _kernels.simulate(
        np.ascontiguousarray(modes, dtype=np.int64),
        np.ascontiguousarray(analysers, dtype=np.int64),
        np.ascontiguousarray(inputs.angle_err),
        np.ascontiguousarray(inputs.delta),
        np.ascontiguousarray(inputs.depol),
        np.ascontiguousarray(inputs.rstate),
        float(model.pg_leakage),
        np.ascontiguousarray(inputs.misdet),
        np.ascontiguousarray(inputs.misdet_port),
        np.ascontiguousarray(inputs.u),
        kinds,
        angles,
        book,
        kernel=kernel,
    )


def block_sizes(n: int, block: int = BLOCK_SIZE) -> list[int]:
    return [min(block, n - k) for k in range(0, n, block)]


def map_blocks(fn, jobs: list, threads: int = 1) -> list:
    """``[fn(*job) for job in jobs]``, optionally on a thread pool; order kept."""
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def _decode_columns(analyser: str) -> np.ndarray:
    """Port index -> crosstalk column for a deterministic analyser."""
    bits = default_portmap().decode_table(analyser)
    return np.array([optics.CODEBOOK_LABELS.index(optics.mode_label(analyser, b)) for b in bits])


def tally_crosstalk(
    model: ImperfectionModel,
    trials_per_mode: int,
    seed: int,
    threads: int = 1,
    kernel: str | None = None,
) -> np.ndarray:
    """Integer counts (8 prepared x 8 measured), ``trials_per_mode`` photons
    per prepared mode and analyser."""
    if trials_per_mode < 1:
        raise ValueError("trials_per_mode must be >= 1")
    jobs = []
    for mode in range(8):
        for ai, analyser in enumerate(optics.BASES):
            for k, n in enumerate(block_sizes(trials_per_mode)):
                jobs.append((mode, ai, analyser, k, n))

    def one(mode, ai, analyser, k, n):
        rng = block_rng(seed, TAG_CROSSTALK, mode, ai, k)
        inputs = draw_trial_inputs(rng, n, model)
        code = _kernels.VECTOR if analyser == "vector" else _kernels.SCALAR
        out = run_trials(np.full(n, mode), np.full(n, code), inputs, model, kernel)
        cols = _decode_columns(analyser)[out]
        return mode, np.bincount(cols, minlength=8)

    counts = np.zeros((8, 8), dtype=np.int64)
    for mode, c in map_blocks(one, jobs, threads):
        counts[mode] += c
    return counts


def same_basis_fidelity(counts: np.ndarray, trials_per_mode: int) -> float:
    return float(np.trace(counts) / (8 * trials_per_mode))


def calibrate_depolarizing(
    base: ImperfectionModel,
    target_fidelity: float,
    trials_per_mode: int = 200_000,
    seed: int = 0,
    threads: int = 1,
) -> ImperfectionModel:
    """Pick ``depolarizing_p`` so the mean same-basis fidelity hits the target.

    Fidelity is affine in ``depolarizing_p``; both end points are estimated
    with the same random streams and the line is solved for the target.
    """
    f0 = same_basis_fidelity(
        tally_crosstalk(replace(base, depolarizing_p=0.0), trials_per_mode, seed, threads),
        trials_per_mode,
    )
    f1 = same_basis_fidelity(
        tally_crosstalk(replace(base, depolarizing_p=1.0), trials_per_mode, seed, threads),
        trials_per_mode,
    )
    if not f1 <= target_fidelity <= f0:
        raise ValueError(
            f"target fidelity {target_fidelity} unreachable: other knobs give {f0:.4f}, "
            f"full depolarisation gives {f1:.4f}"
        )
    p = (f0 - target_fidelity) / (f0 - f1)
    log.info("calibration: F(p=0)=%.5f F(p=1)=%.5f -> p=%.5f", f0, f1, p)
    return replace(base, depolarizing_p=round(p, 6))
