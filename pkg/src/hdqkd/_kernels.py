"""Per-trial photon simulation: generation -> channel -> analyser -> click.

Two implementations with identical inputs and outputs:

* ``simulate_numba``: one compiled loop over trials (``@njit``, nogil).
* ``simulate_numpy``: the same arithmetic vectorised over trials.

``HDQKD_KERNEL=numpy`` forces the numpy path; the default is numba when it
imports. Amplitude order is the codebook order (R,+l), (R,-l), (L,+l), (L,-l).

Analyser codes: 0 vector, 1 scalar, 2 filter tree on the vector basis,
3 filter tree on the scalar basis. Returned outcome is the port index (0..3)
for deterministic analysers, the codebook index within the basis for the
filter tree, or -1 for no click.
"""

from __future__ import annotations

import os

import numpy as np

VECTOR, SCALAR, FILTER_VECTOR, FILTER_SCALAR = 0, 1, 2, 3
NO_SLOT, QUARTER, HALF = 0, 1, 2

INV_SQRT2 = 1.0 / np.sqrt(2.0)
SCALAR_QWP_ANGLE = 0.0
FILTER_LOSS = 0.5

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False


def backend() -> str:
    want = os.environ.get("HDQKD_KERNEL", "").strip().lower()
    if want == "numpy" or not HAVE_NUMBA:
        return "numpy"
    return "numba"


# ----------------------------------------------------------------------------
# numpy path


def _waveplate_np(kind, angle):
    """Batched (n, 2, 2) wave-plate action on (R, L); identity where kind == 0."""
    gamma = np.where(kind == QUARTER, np.pi / 2, np.pi)
    c = np.cos(gamma / 2)
    s = -1j * np.sin(gamma / 2)
    e = np.exp(2j * angle)
    out = np.empty(angle.shape + (2, 2), dtype=np.complex128)
    out[..., 0, 0] = c
    out[..., 0, 1] = s * e
    out[..., 1, 0] = s * np.conj(e)
    out[..., 1, 1] = c
    out[kind == NO_SLOT] = np.eye(2)
    return out


def prepare_numpy(modes, angle_err, slot_kind, slot_angle):
    n = len(modes)
    kind = slot_kind[modes]
    ang = slot_angle[modes] + angle_err
    pol = np.full((n, 2), INV_SQRT2, dtype=np.complex128)
    for k in (0, 1):
        pol = np.einsum("nij,nj->ni", _waveplate_np(kind[:, k], ang[:, k]), pol)
    # q-plate: (L, 0) -> (R, +l), (R, 0) -> (L, -l)
    plus = np.zeros((n, 2), dtype=np.complex128)
    minus = np.zeros((n, 2), dtype=np.complex128)
    plus[:, 0] = pol[:, 1]
    minus[:, 1] = pol[:, 0]
    for k in (2, 3):
        w = _waveplate_np(kind[:, k], ang[:, k])
        plus = np.einsum("nij,nj->ni", w, plus)
        minus = np.einsum("nij,nj->ni", w, minus)
    return np.stack([plus[:, 0], minus[:, 0], plus[:, 1], minus[:, 1]], axis=1)


def _pg_np(x, leakage):
    t, r = np.sqrt(1.0 - leakage), np.sqrt(leakage)
    a = np.stack([t * x[:, 0], t * x[:, 1], r * x[:, 2], r * x[:, 3]], axis=1)
    b = np.stack([r * x[:, 0], r * x[:, 1], t * x[:, 2], t * x[:, 3]], axis=1)
    return a, b


def _mirror_np(v):
    return v[:, [3, 2, 1, 0]]


def port_probs_numpy(x, analyser, delta, leakage, codebook):
    n = x.shape[0]
    probs = np.zeros((n, 4))
    vec = analyser == VECTOR
    if vec.any():
        a, b = _pg_np(x[vec], leakage)
        b = b * np.exp(1j * delta[vec])[:, None]
        c = (a + 1j * _mirror_np(b)) * INV_SQRT2
        d = (1j * _mirror_np(a) + b) * INV_SQRT2
        pc, pd = np.abs(c) ** 2, np.abs(d) ** 2
        probs[vec] = np.stack(
            [pc[:, 0] + pc[:, 2], pc[:, 1] + pc[:, 3], pd[:, 0] + pd[:, 2], pd[:, 1] + pd[:, 3]],
            axis=1,
        )
    sca = analyser == SCALAR
    if sca.any():
        xs = x[sca]
        w = _waveplate_np(np.array([QUARTER]), np.array([SCALAR_QWP_ANGLE]))[0]
        y = np.empty_like(xs)
        y[:, [0, 2]] = xs[:, [0, 2]] @ w.T
        y[:, [1, 3]] = xs[:, [1, 3]] @ w.T
        a, b = _pg_np(y, leakage)
        pa, pb = np.abs(a) ** 2, np.abs(b) ** 2
        probs[sca] = np.stack(
            [pa[:, 0] + pa[:, 2], pa[:, 1] + pa[:, 3], pb[:, 0] + pb[:, 2], pb[:, 1] + pb[:, 3]],
            axis=1,
        )
    for code, rows in ((FILTER_VECTOR, slice(0, 4)), (FILTER_SCALAR, slice(4, 8))):
        sel = analyser == code
        if sel.any():
            amp = x[sel] @ codebook[rows].conj().T
            probs[sel] = FILTER_LOSS * np.abs(amp) ** 2
    return probs


def simulate_numpy(
    modes, analysers, angle_err, delta, depol, rstate, leakage,
    misdet, misdet_port, u, slot_kind, slot_angle, codebook,
):
    x = prepare_numpy(modes, angle_err, slot_kind, slot_angle)
    x = np.where(depol[:, None], rstate, x)
    probs = port_probs_numpy(x, analysers, delta, leakage, codebook)
    cdf = np.cumsum(probs, axis=1)
    out = (u[:, None] >= cdf).sum(axis=1)
    deterministic = analysers <= SCALAR
    # rounding: u above a total that should be 1 goes to the last populated port
    over = deterministic & (out >= 4)
    if over.any():
        last = 3 - np.argmax((probs[over] > 0)[:, ::-1], axis=1)
        out[over] = last
    out = out.astype(np.int64)
    out[out >= 4] = -1
    hit = misdet & (out >= 0)
    out[hit] = misdet_port[hit]
    return out


# ----------------------------------------------------------------------------
# numba path


def _build_numba():
    njit = numba.njit(cache=True, nogil=True)

    @njit
    def waveplate(kind, angle):
        m = np.empty((2, 2), dtype=np.complex128)
        if kind == NO_SLOT:
            m[0, 0] = 1.0
            m[0, 1] = 0.0
            m[1, 0] = 0.0
            m[1, 1] = 1.0
            return m
        gamma = np.pi / 2 if kind == QUARTER else np.pi
        c = np.cos(gamma / 2)
        s = -1j * np.sin(gamma / 2)
        e = np.exp(2j * angle)
        m[0, 0] = c
        m[0, 1] = s * e
        m[1, 0] = s * np.conj(e)
        m[1, 1] = c
        return m

    @njit
    def prepare_one(mode, err, slot_kind, slot_angle, x):
        p0 = INV_SQRT2 + 0j
        p1 = INV_SQRT2 + 0j
        for k in range(2):
            w = waveplate(slot_kind[mode, k], slot_angle[mode, k] + err[k])
            q0 = w[0, 0] * p0 + w[0, 1] * p1
            q1 = w[1, 0] * p0 + w[1, 1] * p1
            p0, p1 = q0, q1
        # plus-l pol vector (pL, 0), minus-l pol vector (0, pR)
        u0, u1 = p1, 0j
        v0, v1 = 0j, p0
        for k in range(2, 4):
            w = waveplate(slot_kind[mode, k], slot_angle[mode, k] + err[k])
            u0, u1 = w[0, 0] * u0 + w[0, 1] * u1, w[1, 0] * u0 + w[1, 1] * u1
            v0, v1 = w[0, 0] * v0 + w[0, 1] * v1, w[1, 0] * v0 + w[1, 1] * v1
        x[0] = u0
        x[1] = v0
        x[2] = u1
        x[3] = v1

    @njit
    def port_probs_one(x, analyser, delta, leakage, codebook, p):
        t = np.sqrt(1.0 - leakage)
        r = np.sqrt(leakage)
        if analyser == VECTOR:
            ph = np.exp(1j * delta)
            a0, a1, a2, a3 = t * x[0], t * x[1], r * x[2], r * x[3]
            b0, b1, b2, b3 = ph * r * x[0], ph * r * x[1], ph * t * x[2], ph * t * x[3]
            c0 = (a0 + 1j * b3) * INV_SQRT2
            c1 = (a1 + 1j * b2) * INV_SQRT2
            c2 = (a2 + 1j * b1) * INV_SQRT2
            c3 = (a3 + 1j * b0) * INV_SQRT2
            d0 = (1j * a3 + b0) * INV_SQRT2
            d1 = (1j * a2 + b1) * INV_SQRT2
            d2 = (1j * a1 + b2) * INV_SQRT2
            d3 = (1j * a0 + b3) * INV_SQRT2
            p[0] = abs(c0) ** 2 + abs(c2) ** 2
            p[1] = abs(c1) ** 2 + abs(c3) ** 2
            p[2] = abs(d0) ** 2 + abs(d2) ** 2
            p[3] = abs(d1) ** 2 + abs(d3) ** 2
        elif analyser == SCALAR:
            w = waveplate(QUARTER, SCALAR_QWP_ANGLE)
            y0 = w[0, 0] * x[0] + w[0, 1] * x[2]
            y2 = w[1, 0] * x[0] + w[1, 1] * x[2]
            y1 = w[0, 0] * x[1] + w[0, 1] * x[3]
            y3 = w[1, 0] * x[1] + w[1, 1] * x[3]
            p[0] = abs(t * y0) ** 2 + abs(r * y2) ** 2
            p[1] = abs(t * y1) ** 2 + abs(r * y3) ** 2
            p[2] = abs(r * y0) ** 2 + abs(t * y2) ** 2
            p[3] = abs(r * y1) ** 2 + abs(t * y3) ** 2
        else:
            off = 0 if analyser == FILTER_VECTOR else 4
            for k in range(4):
                amp = 0j
                for j in range(4):
                    amp += np.conj(codebook[off + k, j]) * x[j]
                p[k] = FILTER_LOSS * abs(amp) ** 2

    @njit
    def simulate(
        modes, analysers, angle_err, delta, depol, rstate, leakage,
        misdet, misdet_port, u, slot_kind, slot_angle, codebook,
    ):
        n = modes.shape[0]
        out = np.empty(n, dtype=np.int64)
        x = np.empty(4, dtype=np.complex128)
        p = np.empty(4)
        for i in range(n):
            if depol[i]:
                for j in range(4):
                    x[j] = rstate[i, j]
            else:
                prepare_one(modes[i], angle_err[i], slot_kind, slot_angle, x)
            port_probs_one(x, analysers[i], delta[i], leakage, codebook, p)
            acc = 0.0
            k = 4
            for j in range(4):
                acc += p[j]
                if u[i] < acc:
                    k = j
                    break
            if k == 4:
                if analysers[i] <= SCALAR:
                    for j in range(3, -1, -1):
                        if p[j] > 0:
                            k = j
                            break
                else:
                    k = -1
            if k >= 0 and misdet[i]:
                k = misdet_port[i]
            out[i] = k
        return out

    return simulate


simulate_numba = _build_numba() if HAVE_NUMBA else None


def simulate(*args, kernel: str | None = None):
    """Dispatch to the configured implementation (see module docstring)."""
    kernel = kernel or backend()
    if kernel == "numba":
        if simulate_numba is None:
            raise RuntimeError("numba kernel requested but numba is not installed")
        return simulate_numba(*args)
    return simulate_numpy(*args)
