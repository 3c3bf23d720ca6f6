import numpy as np
import pytest

from conequil.spectral import (
    ReactionMatrices,
    certificate,
    is_quasi_nonnegative,
    sigma_plus,
    spectral_abscissa,
)


def metzler(rng, m: int) -> np.ndarray:
    d = rng.uniform(-3, 3, size=(m, m))
    off = np.abs(d) * (1 - np.eye(m))
    return off + np.diag(np.diag(d))


def test_quasi_nonnegative_detection():
    assert is_quasi_nonnegative([[-2.0, 0.5], [3.0, -7.0]])
    assert is_quasi_nonnegative([[1.0, 0.0], [0.0, 1.0]])
    assert not is_quasi_nonnegative([[1.0, -0.1], [0.0, 1.0]])
    assert is_quasi_nonnegative([[1.0, -1e-15], [0.0, 1.0]])  # within tolerance


def test_spectral_abscissa():
    assert spectral_abscissa([[2.0]]) == pytest.approx(2.0)
    # rotation matrix: purely imaginary spectrum
    assert spectral_abscissa([[0.0, -1.0], [1.0, 0.0]]) == pytest.approx(0.0)
    assert spectral_abscissa([[0.0, 1.0], [1.0, 0.0]]) == pytest.approx(1.0)


def test_sigma_plus_swap_matrix():
    vals = sigma_plus([[0.0, 1.0], [1.0, 0.0]])
    assert vals == pytest.approx((1.0,))


def test_sigma_plus_rotation_empty():
    assert sigma_plus([[0.0, -1.0], [1.0, 0.0]]) == ()


def test_sigma_plus_diagonal():
    assert sigma_plus(np.diag([2.0, 3.0])) == pytest.approx((2.0, 3.0))
    # repeated eigenvalue: two-dimensional eigenspace still feasible
    assert sigma_plus(np.diag([2.0, 2.0])) == pytest.approx((2.0,))


def test_sigma_plus_can_miss_the_abscissa():
    # symmetric but with negative off-diagonal entries: the top eigenvalue
    # owns a sign-changing eigenvector and is excluded
    mat = [[1.0, -5.0], [-5.0, 1.0]]
    assert spectral_abscissa(mat) == pytest.approx(6.0)
    assert sigma_plus(mat) == pytest.approx((-4.0,))


def test_sigma_plus_triple():
    mat = np.diag([1.0, 1.0, 1.0])
    assert sigma_plus(mat) == pytest.approx((1.0,))


def test_sigma_plus_rejects_large_matrices():
    with pytest.raises(ValueError):
        sigma_plus(np.eye(13))


def test_perron_property_fuzz():
    rng = np.random.default_rng(101)
    for _ in range(100):
        m = int(rng.integers(2, 7))
        d = metzler(rng, m)
        vals = sigma_plus(d)
        assert len(vals) > 0
        assert max(vals) == pytest.approx(spectral_abscissa(d), abs=1e-9)


def chain(d0, dinf, r0=None, rinf=None, m=1):
    eye = np.eye(m)
    return ReactionMatrices(
        reaction_at_zero=np.atleast_2d(d0),
        reaction_at_infinity=np.atleast_2d(dinf),
        diffusion_at_zero=eye if r0 is None else np.atleast_2d(r0),
        diffusion_at_infinity=eye if rinf is None else np.atleast_2d(rinf),
    )


def test_certificate_jump():
    cert = certificate(chain([[16.0]], [[0.0]]), 8.0)
    assert cert.verdict == "degree_jump_exists"
    assert cert.excluded_at_zero and cert.excluded_at_infinity
    assert cert.abscissa_at_zero == pytest.approx(16.0)
    assert cert.abscissa_at_infinity == pytest.approx(0.0)
    assert cert.margin == pytest.approx(8.0)


def test_certificate_no_jump():
    cert = certificate(chain([[0.0]], [[0.0]]), 8.0)
    assert cert.verdict == "no_jump"


def test_certificate_inconclusive_on_resonance():
    cert = certificate(chain([[8.0]], [[0.0]]), 8.0)
    assert cert.verdict == "inconclusive"
    assert not cert.excluded_at_zero


def test_certificate_respects_diffusion_slopes():
    # reaction slope 16 against diffusion slope 2 is an effective 8: resonant
    cert = certificate(chain([[16.0]], [[0.0]], r0=[[2.0]]), 8.0)
    assert cert.verdict == "inconclusive"
    # slope 4 brings the ratio to 4, safely below 8 on both ends
    cert = certificate(chain([[16.0]], [[0.0]], r0=[[4.0]]), 8.0)
    assert cert.verdict == "no_jump"


def test_certificate_two_components():
    d0 = [[24.0, 8.0], [8.0, 24.0]]  # abscissa 32
    dinf = [[0.0, 0.0], [0.0, 0.0]]
    cert = certificate(chain(d0, dinf, m=2), 8.0)
    assert cert.verdict == "degree_jump_exists"
    assert cert.abscissa_at_zero == pytest.approx(32.0)


def test_certificate_margin_reports_smallest_gap():
    cert = certificate(chain([[9.0]], [[1.0]]), 8.0)
    assert cert.verdict == "degree_jump_exists"
    assert cert.margin == pytest.approx(1.0)


def test_reaction_matrices_validation():
    with pytest.raises(ValueError, match="off-diagonal"):
        chain([[1.0, -0.5], [0.0, 1.0]], np.zeros((2, 2)), m=2)
    with pytest.raises(ValueError, match="singular"):
        chain([[1.0]], [[0.0]], r0=[[0.0]])
    with pytest.raises(ValueError, match="share one size"):
        ReactionMatrices([[1.0]], np.zeros((2, 2)), [[1.0]], [[1.0]])


def test_certificate_as_dict_roundtrips_to_json():
    import json

    cert = certificate(chain([[16.0]], [[0.0]]), 8.0)
    payload = json.dumps(cert.as_dict(), sort_keys=True)
    assert "degree_jump_exists" in payload
