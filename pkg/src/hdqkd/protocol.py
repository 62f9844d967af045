"""Prepare-and-measure BB84 over the vector/scalar codebook.

Per symbol: Alice draws a basis and a bit pair, the photon goes through the
channel, an optional intercept-resend eavesdropper measures it with an ideal
deterministic analyser and re-prepares her result, and Bob measures in a
random basis. Errors are counted per 4-ary symbol, so QBER = 1 - F.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels, channel
from .detection import default_portmap
from .security import QBER_BOUNDS

DETECTORS = ("deterministic", "filter")
BITS = ("00", "01", "10", "11")


class KeyAlignmentError(ValueError):
    pass


class KeyStreamReuseWarning(UserWarning):
    """The key is shorter than the payload and is being repeated."""


@dataclass(frozen=True)
class EveStrategy:
    kind: str = "none"
    basis_choice_bias: float = 0.5

    def __post_init__(self):
        if self.kind not in ("none", "intercept_resend"):
            raise ValueError(f"unknown eavesdropper {self.kind!r}")
        if not 0.0 <= self.basis_choice_bias <= 1.0:
            raise ValueError("basis_choice_bias must be a probability")


@dataclass(frozen=True)
class ProtocolSymbol:
    index: int
    alice_basis: str
    alice_bits: str
    bob_basis: str
    bob_bits: str | None
    clicked: bool
    photons: int = 1

    def __post_init__(self):
        if self.clicked != (self.bob_bits is not None):
            raise ValueError("bob_bits must be present exactly when Bob's detector clicked")

    def to_record(self) -> dict:
        return {
            "index": self.index,
            "alice_basis": self.alice_basis,
            "alice_bits": self.alice_bits,
            "bob_basis": self.bob_basis,
            "bob_bits": self.bob_bits,
            "clicked": self.clicked,
        }


@dataclass(frozen=True, eq=False)
class SiftedKey:
    bits: np.ndarray
    source_indices: tuple[int, ...]

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.uint8)
        if b.ndim != 1 or (b > 1).any():
            raise ValueError("key bits must be a flat 0/1 array")
        if len(b) != 2 * len(self.source_indices):
            raise ValueError("a sifted key carries two bits per retained symbol")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    def __len__(self) -> int:
        return len(self.bits)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SiftedKey)
            and np.array_equal(self.bits, other.bits)
            and self.source_indices == other.source_indices
        )

    def to_bytes(self) -> bytes:
        """Bits packed MSB first; the last byte is zero-padded."""
        return np.packbits(self.bits).tobytes()

    def hex(self) -> str:
        return self.to_bytes().hex()

    @classmethod
    def from_bits(cls, bits) -> SiftedKey:
        bits = np.asarray(bits, dtype=np.uint8)
        if len(bits) % 2:
            raise ValueError("need an even number of bits")
        return cls(bits, tuple(range(len(bits) // 2)))


# ----------------------------------------------------------------------------


def _decode(outcomes: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Kernel outcomes -> 2-bit value (0..3), -1 where there was no click."""
    pm = default_portmap()
    vec = np.array([int(b, 2) for b in pm.decode_table("vector")])
    sca = np.array([int(b, 2) for b in pm.decode_table("scalar")])
    clicked = outcomes >= 0
    safe = np.where(clicked, outcomes, 0)
    val = np.select(
        [codes == _kernels.VECTOR, codes == _kernels.SCALAR],
        [vec[safe], sca[safe]],
        default=safe,  # filter tree reports codebook order already
    )
    return np.where(clicked, val, -1)


def _analyser_codes(vector_basis: np.ndarray, detector: str) -> np.ndarray:
    if detector == "deterministic":
        return np.where(vector_basis, _kernels.VECTOR, _kernels.SCALAR)
    return np.where(vector_basis, _kernels.FILTER_VECTOR, _kernels.FILTER_SCALAR)


def _run_block(seed, k, n, detector, eve, preset, kernel):
    model = preset.imperfections
    rng = channel.block_rng(seed, channel.TAG_BB84, k)
    sel = rng.random((n, 4))
    photons = channel.emit(preset.source, rng, n)
    inputs = channel.draw_trial_inputs(rng, n, model)
    eve_u = rng.random(n)

    alice_vec = sel[:, 0] < 0.5
    alice_val = np.minimum((sel[:, 1] * 4).astype(np.int64), 3)
    bob_vec = sel[:, 2] < 0.5
    eve_vec = sel[:, 3] < eve.basis_choice_bias
    alice_mode = np.where(alice_vec, 0, 4) + alice_val

    bob_codes = _analyser_codes(bob_vec, detector)
    if eve.kind == "intercept_resend":
        eve_codes = _analyser_codes(eve_vec, "deterministic")
        eve_in = replace(
            inputs,
            delta=np.full(n, np.pi / 2),
            misdet=np.zeros(n, dtype=bool),
            u=eve_u,
        )
        eve_val = _decode(
            channel.run_trials(alice_mode, eve_codes, eve_in, channel.ImperfectionModel(), kernel),
            eve_codes,
        )
        sent_mode = np.where(eve_vec, 0, 4) + eve_val
        bob_in = inputs.without_preparation_errors()
    else:
        sent_mode = alice_mode
        bob_in = inputs
    bob_val = _decode(channel.run_trials(sent_mode, bob_codes, bob_in, model, kernel), bob_codes)
    bob_val = np.where(photons > 0, bob_val, -1)
    return alice_vec, alice_val, bob_vec, bob_val, photons


def run_bb84(
    n_symbols: int,
    detector: str = "deterministic",
    eve: EveStrategy = EveStrategy(),
    preset: channel.Preset | str = "ideal",
    seed: int = 0,
    threads: int = 1,
    kernel: str | None = None,
) -> list[ProtocolSymbol]:
    if n_symbols < 1:
        raise ValueError("n_symbols must be >= 1")
    if detector not in DETECTORS:
        raise ValueError(f"detector must be one of {DETECTORS}")
    if isinstance(preset, str):
        preset = channel.load_preset(preset)
    jobs = [
        (seed, k, n, detector, eve, preset, kernel)
        for k, n in enumerate(channel.block_sizes(n_symbols))
    ]
    parts = channel.map_blocks(_run_block, jobs, threads)
    alice_vec, alice_val, bob_vec, bob_val, photons = (
        np.concatenate(cols) for cols in zip(*parts)
    )
    basis = ("scalar", "vector")
    alice_vec, alice_val, bob_vec, bob_val, photons = (
        c.tolist() for c in (alice_vec, alice_val, bob_vec, bob_val, photons)
    )
    return [
        ProtocolSymbol(
            index=i,
            alice_basis=basis[alice_vec[i]],
            alice_bits=BITS[alice_val[i]],
            bob_basis=basis[bob_vec[i]],
            bob_bits=BITS[bob_val[i]] if bob_val[i] >= 0 else None,
            clicked=bob_val[i] >= 0,
            photons=photons[i],
        )
        for i in range(n_symbols)
    ]


def sift(transcript: list[ProtocolSymbol]) -> tuple[SiftedKey, SiftedKey]:
    """Keep clicked symbols measured in the basis they were prepared in."""
    if not transcript:
        raise ValueError("empty transcript")
    kept = [s for s in transcript if s.clicked and s.alice_basis == s.bob_basis]
    idx = tuple(s.index for s in kept)

    def bits(values):
        return np.array([int(c) for v in values for c in v], dtype=np.uint8)

    return (
        SiftedKey(bits([s.alice_bits for s in kept]), idx),
        SiftedKey(bits([s.bob_bits for s in kept]), idx),
    )


def qber(alice_key: SiftedKey, bob_key: SiftedKey) -> float:
    """Fraction of retained symbols (bit pairs) on which the keys differ."""
    if len(alice_key) != len(bob_key) or alice_key.source_indices != bob_key.source_indices:
        raise KeyAlignmentError("keys are not aligned symbol for symbol")
    if len(alice_key) == 0:
        raise KeyAlignmentError("cannot estimate an error rate from an empty key")
    a = alice_key.bits.reshape(-1, 2)
    b = bob_key.bits.reshape(-1, 2)
    return float(np.mean(np.any(a != b, axis=1)))


def summarize(transcript: list[ProtocolSymbol], d: int = 4) -> dict:
    alice_key, bob_key = sift(transcript)
    n = len(transcript)
    clicked = sum(s.clicked for s in transcript)
    retained = len(alice_key.source_indices)
    q = qber(alice_key, bob_key) if retained else None
    bound = QBER_BOUNDS.get(d)
    if q is None or bound is None:
        verdict = "unknown"
    else:
        verdict = "secure" if q < bound else "insecure"
    return {
        "n_symbols": n,
        "clicked": clicked,
        "vacuum_cycles": sum(s.photons == 0 for s in transcript),
        "multi_photon_cycles": sum(s.photons >= 2 for s in transcript),
        "retained_symbols": retained,
        "key_bits": len(alice_key),
        "sift_fraction": retained / n,
        "sift_fraction_detected": retained / clicked if clicked else 0.0,
        "qber": q,
        "qber_bound": bound,
        "verdict": verdict,
        "keys_match": bool(np.array_equal(alice_key.bits, bob_key.bits)),
    }


def write_transcript(transcript: list[ProtocolSymbol], path) -> None:
    with open(path, "w") as fh:
        for s in transcript:
            fh.write(json.dumps(s.to_record(), sort_keys=True) + "\n")


def read_transcript(path) -> list[ProtocolSymbol]:
    with open(path) as fh:
        return [ProtocolSymbol(**json.loads(line)) for line in fh if line.strip()]


# ----------------------------------------------------------------------------
# one-time pad


def _key_bits(key) -> np.ndarray:
    bits = key.bits if isinstance(key, SiftedKey) else np.asarray(key, dtype=np.uint8)
    if len(bits) == 0:
        raise ValueError("empty key")
    return bits


def keystream_repeats(n_bytes: int, key) -> bool:
    return 8 * n_bytes > len(_key_bits(key))


def otp_encrypt(data: bytes, key) -> bytes:
    """XOR ``data`` with the key's bit stream, cycling the key if it is short.

    Cycling breaks one-time-pad secrecy and emits KeyStreamReuseWarning.
    """
    bits = _key_bits(key)
    n = len(data)
    if keystream_repeats(n, bits):
        warnings.warn(
            f"{len(bits)}-bit key stretched over {8 * n} data bits", KeyStreamReuseWarning, stacklevel=2
        )
    stream = np.resize(bits, 8 * n)
    pad = np.packbits(stream)
    return (np.frombuffer(data, dtype=np.uint8) ^ pad).tobytes()


otp_decrypt = otp_encrypt
