from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdqkd import detection, optics
from hdqkd.hilbert import (
    BasisIndex,
    DomainError,
    HybridState,
    Space,
    apply,
    overlap,
    unitarity_error,
)

LS = (1, 2, 10)


def vector_mode(l, theta):
    sp = Space.codebook(l)
    return HybridState.from_map(
        sp,
        {BasisIndex("R", l): 1 / np.sqrt(2), BasisIndex("L", -l): np.exp(1j * theta) / np.sqrt(2)},
    )


def test_parse_pi_multiple():
    assert optics.parse_pi_multiple("-1/4") == pytest.approx(-np.pi / 4)
    assert optics.parse_pi_multiple(0) == 0.0
    assert optics.parse_pi_multiple("1/8") == pytest.approx(np.pi / 8)


def test_jones_circular_components():
    # H = (R + L)/sqrt2, D ~ R - iL, A ~ R + iL
    h = optics.circular_components(optics.JONES["H"])
    d = optics.circular_components(optics.JONES["D"])
    a = optics.circular_components(optics.JONES["A"])
    assert np.allclose(h, [1 / np.sqrt(2)] * 2)
    assert abs(np.vdot(d, [1, -1j]) / np.sqrt(2)) ** 2 == pytest.approx(1)
    assert abs(np.vdot(a, [1, 1j]) / np.sqrt(2)) ** 2 == pytest.approx(1)


@pytest.mark.parametrize("kind", ["quarter", "half"])
@pytest.mark.parametrize("angle", np.linspace(-np.pi, np.pi, 9))
def test_waveplate_circular_closed_form(kind, angle):
    # independent form: exp(iG/2) [[cos G/2, -i sin G/2 e^{2ia}], [-i sin G/2 e^{-2ia}, cos G/2]]
    g = optics.RETARDANCE[kind]
    c, s = np.cos(g / 2), -1j * np.sin(g / 2)
    e = np.exp(2j * angle)
    expect = np.exp(1j * g / 2) * np.array([[c, s * e], [s * np.conj(e), c]])
    assert np.allclose(optics.waveplate_matrix(kind, angle), expect, atol=1e-12)


def test_half_wave_quarter_turn_is_global_phase():
    for a in np.linspace(-1, 1, 7):
        assert np.allclose(
            optics.waveplate_matrix("half", a + np.pi / 2), -optics.waveplate_matrix("half", a)
        )


def test_half_wave_at_zero_swaps_handedness():
    m = optics.waveplate_matrix("half", 0.0)
    assert abs(m[0, 0]) < 1e-12 and abs(m[1, 1]) < 1e-12


def test_waveplate_spec_validation():
    with pytest.raises(ValueError):
        optics.WavePlateSpec("full", 0.0)
    with pytest.raises(ValueError):
        optics.WavePlateSpec("half", float("nan"))
    with pytest.raises(ValueError):
        optics.QPlateSpec(Fraction(1, 3))


@pytest.mark.parametrize("l", LS)
def test_qplate_action(l):
    gen = Space.generation(l)
    qp = optics.qplate_operator(optics.QPlateSpec.for_subspace(l), gen)
    assert unitarity_error(qp) < 1e-10
    out = apply(qp, HybridState.basis_state(gen, BasisIndex("L", 0)))
    assert abs(out.amplitude(BasisIndex("R", l))) == pytest.approx(1)
    out = apply(qp, HybridState.basis_state(gen, BasisIndex("R", 0)))
    assert abs(out.amplitude(BasisIndex("L", -l))) == pytest.approx(1)


def test_qplate_charge_follows_subspace():
    assert optics.QPlateSpec.for_subspace(1).q == Fraction(1, 2)
    assert optics.QPlateSpec.for_subspace(10).q == 5


@pytest.mark.parametrize("l", LS)
def test_codebook_orthonormal_within_basis(l):
    cb = optics.codebook_states(l)
    for group in (optics.VECTOR_LABELS, optics.SCALAR_LABELS):
        g = np.array([cb[k].amplitudes for k in group])
        assert np.allclose(g.conj() @ g.T, np.eye(4), atol=1e-12)


@pytest.mark.parametrize("l", LS)
def test_mutual_unbiasedness(l):
    cb = optics.codebook_states(l)
    for v in optics.VECTOR_LABELS:
        for s in optics.SCALAR_LABELS:
            assert abs(overlap(cb[v], cb[s]) - 0.25) < 1e-9


@pytest.mark.parametrize("l", LS)
@pytest.mark.parametrize("label", optics.CODEBOOK_LABELS)
def test_recipes_generate_codebook(l, label):
    s = optics.generate_mode(optics.default_recipes()[label], l)
    assert overlap(s, optics.codebook_states(l)[label]) > 1 - 1e-9


def test_scalar_state_phase_form():
    # (R + e^{i(theta - pi/2)} L)/sqrt2 with theta = 0 is D, theta = pi is A
    cb = optics.codebook_states(1)
    d = optics.circular_components(optics.JONES["D"])
    assert abs(np.vdot(d, cb["S01"].amplitudes[[0, 2]])) ** 2 == pytest.approx(1)


def test_final_plates_a_quarter_turn_apart_give_the_same_mode():
    # ending two recipes with half-wave plates at +pi/4 and -pi/4 cannot
    # separate theta = 0 from theta = pi: the plates differ by a global phase
    row = {"target": "S01", "elements": [
        {"kind": "quarter", "angle": "-1/4"}, {"kind": "qplate"},
        {"kind": "quarter", "angle": "-1/4"}, {"kind": "half", "angle": "1/4"}]}
    alt = {**row, "elements": row["elements"][:3] + [{"kind": "half", "angle": "-1/4"}]}
    a = optics.generate_mode(optics.recipe_from_dict(row), 1)
    b = optics.generate_mode(optics.recipe_from_dict(alt), 1)
    assert overlap(a, b) == pytest.approx(1.0)


def test_recipe_order_enforced():
    bad = {"target": "V00", "elements": [{"kind": "qplate"}, {"kind": "quarter", "angle": 0},
                                         {"kind": "quarter", "angle": 0}, {"kind": "qplate"}]}
    with pytest.raises(ValueError):
        optics.recipe_from_dict(bad)
    swapped = {"target": "V00", "elements": [{"kind": "half", "angle": 0},
                                             {"kind": "quarter", "angle": 0}, {"kind": "qplate"}]}
    with pytest.raises(ValueError):
        optics.recipe_from_dict(swapped)


def test_recipe_angle_errors_length_checked():
    r = optics.default_recipes()["S00"]
    with pytest.raises(ValueError):
        optics.generate_mode(r, 1, [0.0])


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1))
def test_pg_is_isometry_for_any_leakage(leak):
    op = optics.pg_split_operator(Space.codebook(1), leak)
    assert unitarity_error(op) < 1e-10


def test_pg_routes_handedness():
    sp = Space.codebook(1)
    out = apply(optics.pg_split_operator(sp), HybridState.basis_state(sp, BasisIndex("L", 1)))
    assert abs(out.amplitude(BasisIndex("L", 1, "b"))) == pytest.approx(1)


def test_bs_needs_paths():
    with pytest.raises(DomainError):
        optics.bs_operator(Space.codebook(1))


@settings(max_examples=60, deadline=None)
@given(st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi))
def test_bs_matches_closed_form_port_amplitudes(theta, delta):
    # c: (1 + e^{i(delta+theta+pi/2)})/2 on (+l), d: i(1 + e^{i(delta+theta-pi/2)})/2 on (-l)
    out = detection.vector_chain(vector_mode(1, theta), delta)
    c = out.amplitude(BasisIndex("R", 1, "c"))
    d = out.amplitude(BasisIndex("L", -1, "d"))
    assert c == pytest.approx((1 + np.exp(1j * (delta + theta + np.pi / 2))) / 2, abs=1e-10)
    assert d == pytest.approx(1j * (1 + np.exp(1j * (delta + theta - np.pi / 2))) / 2, abs=1e-10)
    assert abs(abs(c) ** 2 + abs(d) ** 2 - 1) < 1e-10


def test_delta_sweep_contrast_peaks_at_quarter_turn():
    deltas = np.linspace(np.pi / 2, 3 * np.pi / 2, 9)
    contrast = []
    for dl in deltas:
        p0 = detection.port_probabilities(vector_mode(1, 0.0), "vector", delta=dl)
        contrast.append(p0.max())
    assert contrast[0] == pytest.approx(1.0)
    assert all(a > b for a, b in zip(contrast[:5], contrast[1:5]))
    assert contrast[4] == pytest.approx(0.5)
