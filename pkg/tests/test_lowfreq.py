import numpy as np
import pytest

from perwave.bloch import derivative_coeffs
from perwave.lowfreq import (build_dual_bases, default_ladder, ladder_consistency, planted_pencil,
                             rescale_and_extract, speed_agreement, whitham_characteristics, whitham_speeds)
from perwave.profile import continue_family


@pytest.fixture(scope="module")
def cubic_bases(waves):
    return build_dual_bases(waves.cubic, waves.jordan("cubic", 256))


def test_zero_bases_constants_and_translation(cubic_bases):
    assert cubic_bases.certificate["left_nonconstant"] < 1e-8
    assert cubic_bases.certificate["translation_angle"] < 1e-6


def test_zero_bases_translation_slot_is_the_derivative(waves, cubic_bases):
    du = derivative_coeffs(waves.cubic, 256)
    v = cubic_bases.V[:, waves.cubic.n - 1]
    cos = abs(np.vdot(v, du)) / (np.linalg.norm(v) * np.linalg.norm(du))
    assert np.arccos(min(cos, 1.0)) < 1e-6


def test_biorthogonality_recomputed(cubic_bases):
    G = cubic_bases.gram()
    assert np.max(np.abs(G - np.eye(G.shape[0]))) < 1e-10


def test_projector_is_idempotent(waves):
    b = build_dual_bases(waves.cubic, waves.jordan("cubic", 256), 1e-3, want_projector=True)
    P = b.projector
    assert np.linalg.norm(P @ P - P) < 1e-8


def test_cubic_structure_zeros(waves):
    pen, _ = waves.pencil("cubic")
    s = pen.structure[1]
    assert s["M0_pattern"] < 1e-6 and s["M1_zeros"] < 1e-6 and s["M0_nilpotency"] < 1e-6


def test_reduced_eigenvalues_match_full_operator(waves):
    pen, _ = waves.pencil("cubic")
    assert ladder_consistency(waves.cubic, pen) < 1e-8


def test_cauchy_limit_matches_assembled_check_matrix(waves):
    for name in ("duffing", "cubic"):
        _, rp = waves.pencil(name)
        assert max(rp.limit_vs_check.values()) < 1e-4


def test_planted_pencil_recovered():
    C = np.array([[0, 1, 0], [-1, 0, 0], [0, 0, 0]], dtype=complex)
    rp = rescale_and_extract(planted_pencil(C, default_ladder(2 * np.pi)))
    got = np.sort_complex(np.round(rp.m_limits[1], 12))
    assert np.max(np.abs(got - np.sort_complex(np.array([-1j, 0, 1j])))) < 1e-8


def test_planted_semisimple_pencil_recovered():
    C = np.diag([0.3j, -0.7j, 1.1j])
    rp = rescale_and_extract(planted_pencil(C, default_ladder(2 * np.pi), semisimple=True))
    assert np.max(np.abs(np.sort_complex(rp.m_limits[1]) - np.sort_complex(np.diag(C)))) < 1e-8


def test_decoupled_transport_speeds():
    n, c, s = 2, 0.7, -0.4
    A0 = np.eye(n + 1)
    A1 = np.diag([c] * n + [s])
    speeds, _ = whitham_speeds(A0, A1)
    assert np.allclose(np.sort(speeds.real), np.sort([c, c, s]))


def test_duffing_whitham_speeds_match_bloch(waves, duffing):
    _, rp = waves.pencil("duffing")
    fam = continue_family(duffing, ("amplitude", "q1", "q2"), 1, 1e-3, h_s=None)
    wd = whitham_characteristics(fam)
    assert speed_agreement(rp.a_coeffs[1], wd.comoving_speeds) < 1e-2
    # distinctness: both sides see n+1 separated speeds
    for v in (rp.a_coeffs[1], wd.comoving_speeds):
        gaps = np.abs(v[:, None] - v[None, :])[np.triu_indices(3, 1)]
        assert gaps.min() > 1e-3
