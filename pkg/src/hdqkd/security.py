"""Crosstalk matrices and the d-dimensional security figures.

Metrics for detection fidelity ``F`` in dimension ``d``:

    I_AB = log2 d + F log2 F + (1-F) log2((1-F)/d)
    F_E  = F/d + (d-1)(1-F)/d + 2 sqrt((d-1) F (1-F)) / d
    I_AE = log2 d + (F+F_E-1) log2((F+F_E-1)/F) + (1-F_E) log2((1-F_E)/((d-1) F))
    R    = I_AB - I_AE   (clamped at 0)

``I_AB`` divides the error term by ``d``; the more common ``d - 1`` form is
available with ``variant="d-1"``. The key rate uses the Alice-Eve branch only:
a Bob-Eve term cannot be formed from ``F`` alone.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import channel, optics

QBER_BOUNDS = {2: 0.11, 4: 0.18}
VARIANTS = ("printed", "d-1")


class SecurityDomainError(ValueError):
    pass


def _xlog2(x: float, y: float) -> float:
    """x * log2(y) with 0 * log(0) = 0."""
    return 0.0 if x == 0 else x * math.log2(y)


def _check_fidelity(F: float) -> None:
    if not 0.0 <= F <= 1.0:
        raise SecurityDomainError(f"fidelity must be in [0, 1], got {F}")


def mutual_info_ab(F: float, d: int = 4, variant: str = "printed") -> float:
    _check_fidelity(F)
    if d < 2:
        raise SecurityDomainError("dimension must be >= 2")
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    spread = d if variant == "printed" else d - 1
    return math.log2(d) + _xlog2(F, F) + _xlog2(1 - F, (1 - F) / spread)


def cloning_fidelity(F: float, d: int = 4) -> float:
    _check_fidelity(F)
    return F / d + (d - 1) * (1 - F) / d + 2 * math.sqrt((d - 1) * F * (1 - F)) / d


def mutual_info_ae(F: float, F_E: float, d: int = 4) -> float:
    _check_fidelity(F)
    if not 0.0 <= F_E <= 1.0:
        raise SecurityDomainError(f"cloning fidelity must be in [0, 1], got {F_E}")
    excess = F + F_E - 1
    if excess < 0:
        raise SecurityDomainError(
            f"F + F_E = {F + F_E:.6g} < 1: the first log argument would be negative"
        )
    if F == 0:
        raise SecurityDomainError("F = 0 leaves I_AE undefined")
    return (
        math.log2(d)
        + _xlog2(excess, excess / F)
        + _xlog2(1 - F_E, (1 - F_E) / ((d - 1) * F))
    )


def secret_key_rate(I_AB: float, I_AE: float) -> float:
    """Lower bound on secret bits per sifted photon, never below zero."""
    return max(I_AB - I_AE, 0.0)


# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CrosstalkMatrix:
    """Rows: prepared mode; columns: decoded mode; codebook order.

    Every row holds one distribution per analyser (vector columns, scalar
    columns), so each row sums to 2 and each quadrant row to 1.
    """

    entries: np.ndarray
    trials_per_row: int
    labels: tuple[str, ...] = optics.CODEBOOK_LABELS

    def __post_init__(self):
        e = np.array(self.entries, dtype=float)
        if e.shape != (8, 8):
            raise ValueError("crosstalk matrix must be 8x8")
        if e.min() < 0 or e.max() > 1:
            raise ValueError("entries must be probabilities")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @classmethod
    def from_counts(cls, counts: np.ndarray, trials_per_row: int) -> CrosstalkMatrix:
        return cls(np.asarray(counts) / trials_per_row, trials_per_row)

    @property
    def stderr(self) -> np.ndarray:
        """Binomial standard error of each entry."""
        p = self.entries
        n = self.trials_per_row if self.trials_per_row > 0 else np.inf
        return np.sqrt(p * (1 - p) / n)

    def quadrant(self, prepared: str, measured: str) -> np.ndarray:
        rows = slice(0, 4) if prepared == "vector" else slice(4, 8)
        cols = slice(0, 4) if measured == "vector" else slice(4, 8)
        return self.entries[rows, cols]

    def quadrant_row_sums(self) -> np.ndarray:
        return np.stack([self.entries[:, :4].sum(axis=1), self.entries[:, 4:].sum(axis=1)], axis=1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["prepared"] + list(self.labels))
            for lab, row in zip(self.labels, self.entries):
                w.writerow([lab] + [repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path, trials_per_row: int = 0) -> CrosstalkMatrix:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if tuple(header[1:]) != optics.CODEBOOK_LABELS:
            raise ValueError("unexpected column labels")
        return cls(np.array([[float(x) for x in r[1:]] for r in body]), trials_per_row)


def estimate_crosstalk(
    model: channel.ImperfectionModel | channel.Preset,
    trials_per_mode: int,
    seed: int,
    threads: int = 1,
    kernel: str | None = None,
) -> CrosstalkMatrix:
    if isinstance(model, channel.Preset):
        model = model.imperfections
    counts = channel.tally_crosstalk(model, trials_per_mode, seed, threads, kernel)
    return CrosstalkMatrix.from_counts(counts, trials_per_mode)


def fidelity_from_matrix(m: CrosstalkMatrix) -> float:
    """Mean of the eight matched-basis diagonal entries."""
    return float(np.mean(np.diag(m.entries)))


def fidelity_stderr(m: CrosstalkMatrix) -> float:
    return float(np.sqrt(np.sum(np.diag(m.stderr) ** 2)) / 8)


@dataclass(frozen=True)
class SecurityReport:
    dimension: int
    fidelity: float
    mutual_info_ab: float
    cloning_fidelity: float
    mutual_info_ae: float
    qber: float
    key_rate: float
    capacity_per_dimension: float
    key_rate_unclamped: float
    qber_bound: float | None
    verdict: str
    variant: str = "printed"
    stderr: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _metrics(F: float, d: int, variant: str) -> dict:
    iab = mutual_info_ab(F, d, variant)
    fe = cloning_fidelity(F, d)
    iae = mutual_info_ae(F, fe, d)
    return {
        "fidelity": F,
        "mutual_info_ab": iab,
        "cloning_fidelity": fe,
        "mutual_info_ae": iae,
        "key_rate_unclamped": iab - iae,
        "key_rate": secret_key_rate(iab, iae),
    }


def report_from_fidelity(
    F: float, d: int = 4, variant: str = "printed", fidelity_se: float = 0.0
) -> SecurityReport:
    vals = _metrics(F, d, variant)
    q = 1.0 - F
    bound = QBER_BOUNDS.get(d)
    if bound is None:
        verdict = "unknown"
    else:
        verdict = "secure" if q < bound and vals["key_rate_unclamped"] > 0 else "insecure"
    se = None
    if fidelity_se > 0:
        # first-order propagation by central differences, kept inside [0, 1]
        h = min(fidelity_se, 1e-4)
        lo, hi = max(F - h, 0.0), min(F + h, 1.0)
        try:
            a, b = _metrics(lo, d, variant), _metrics(hi, d, variant)
            se = {k: abs(b[k] - a[k]) / (hi - lo) * fidelity_se for k in vals}
        except SecurityDomainError:
            se = {"fidelity": fidelity_se}
        se["qber"] = fidelity_se
    return SecurityReport(
        dimension=d,
        qber=q,
        capacity_per_dimension=vals["key_rate"] / d,
        qber_bound=bound,
        verdict=verdict,
        variant=variant,
        stderr=se,
        **vals,
    )


def build_report(m: CrosstalkMatrix, d: int = 4, variant: str = "printed") -> SecurityReport:
    return report_from_fidelity(
        fidelity_from_matrix(m), d, variant, fidelity_stderr(m) if m.trials_per_row else 0.0
    )


def ideal_report(d: int = 4, variant: str = "printed") -> SecurityReport:
    return report_from_fidelity(1.0, d, variant)
