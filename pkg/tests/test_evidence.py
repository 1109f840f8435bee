from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvgcn.evidence import (
    EvidenceState,
    MassFunction,
    TotalConflictError,
    average_fallback,
    conflict,
    dempster_generic,
    ds_combine_two,
    evidence_to_state,
    fuse_evidence,
    fuse_evidence_backward,
    fuse_opinions,
    opinion_from_evidence,
    predict,
    read_uncertainty,
    write_uncertainty,
)
from mvgcn._binio import FormatError


def exact_fusion(e1, e2):
    """Reduced Dempster rule in rational arithmetic."""
    C = len(e1)
    S1, S2 = sum(e1) + C, sum(e2) + C
    b1 = [Fraction(x) / S1 for x in e1]
    b2 = [Fraction(x) / S2 for x in e2]
    u1, u2 = Fraction(C, S1), Fraction(C, S2)
    K = sum(b1) * sum(b2) - sum(x * y for x, y in zip(b1, b2))
    b = [(x * y + x * u2 + y * u1) / (1 - K) for x, y in zip(b1, b2)]
    return b, u1 * u2 / (1 - K), K


def test_opinion_basic():
    alpha, S, b, u = opinion_from_evidence(np.array([4.0, 1.0, 1.0]))
    assert np.array_equal(alpha, [5.0, 2.0, 2.0])
    assert S == 9.0
    assert np.allclose(b, [4 / 9, 1 / 9, 1 / 9])
    assert u == pytest.approx(1 / 3)


def test_negative_evidence_rejected():
    with pytest.raises(ValueError):
        opinion_from_evidence(np.array([1.0, -0.1]))


def test_hand_fusion_example():
    b_ref, u_ref, K_ref = exact_fusion([4, 1, 1], [1, 4, 1])
    assert b_ref == [Fraction(19, 54), Fraction(19, 54), Fraction(7, 54)]
    assert u_ref == Fraction(9, 54) and K_ref == Fraction(1, 3)
    s = ds_combine_two(evidence_to_state(np.array([4.0, 1, 1])), evidence_to_state(np.array([1.0, 4, 1])))
    assert np.allclose(s.belief, [float(x) for x in b_ref], atol=1e-12, rtol=0)
    assert s.uncertainty == pytest.approx(float(u_ref), abs=1e-12)
    # S = C/u = 18, alpha = b S + 1
    assert np.allclose(s.alpha, [22 / 3, 22 / 3, 10 / 3], atol=1e-12)
    probs, label, u = predict(s)
    assert np.allclose(probs, [11 / 27, 11 / 27, 5 / 27], atol=1e-12)
    assert label == 0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=2, max_size=5), st.integers(0, 2**31 - 1))
def test_fusion_matches_rational_arithmetic(e1, seed):
    rng = np.random.default_rng(seed)
    e2 = list(rng.integers(0, 50, size=len(e1)))
    b_ref, u_ref, _ = exact_fusion(e1, [int(x) for x in e2])
    _, _, b1, u1 = opinion_from_evidence(np.array(e1, float))
    _, _, b2, u2 = opinion_from_evidence(np.array(e2, float))
    b, u, _ = fuse_opinions(b1, u1, b2, u2)
    assert np.allclose(b, [float(x) for x in b_ref], atol=1e-12, rtol=0)
    assert u == pytest.approx(float(u_ref), abs=1e-12)


def test_fused_evidence_product_identity(rng):
    e1 = rng.gamma(2.0, 3.0, size=(100, 4))
    e2 = rng.gamma(2.0, 3.0, size=(100, 4))
    assert np.allclose(fuse_evidence(e1, e2), e1 + e2 + e1 * e2 / 4, rtol=1e-12)


def test_fuse_backward_matches_finite_differences(rng):
    e1 = rng.gamma(2.0, 1.0, size=(3, 3))
    e2 = rng.gamma(2.0, 1.0, size=(3, 3))
    G = rng.standard_normal((3, 3))
    g1, g2 = fuse_evidence_backward(e1, e2, G)
    h = 1e-6
    for i in range(3):
        for j in range(3):
            d = np.zeros_like(e1)
            d[i, j] = h
            fd1 = np.sum(G * (fuse_evidence(e1 + d, e2) - fuse_evidence(e1 - d, e2))) / (2 * h)
            fd2 = np.sum(G * (fuse_evidence(e1, e2 + d) - fuse_evidence(e1, e2 - d))) / (2 * h)
            assert g1[i, j] == pytest.approx(fd1, rel=1e-6)
            assert g2[i, j] == pytest.approx(fd2, rel=1e-6)


def test_commutative_and_vacuous_exact(rng):
    for _ in range(200):
        s1 = evidence_to_state(rng.gamma(1.0, 5.0, size=4))
        s2 = evidence_to_state(rng.gamma(1.0, 5.0, size=4))
        a, b = ds_combine_two(s1, s2), ds_combine_two(s2, s1)
        assert np.array_equal(a.belief, b.belief) and a.uncertainty == b.uncertainty
        v = ds_combine_two(s1, evidence_to_state(np.zeros(4)))
        assert np.array_equal(v.belief, s1.belief) and v.uncertainty == s1.uncertainty


def test_class_count_mismatch():
    with pytest.raises(ValueError):
        ds_combine_two(evidence_to_state(np.ones(3)), evidence_to_state(np.ones(4)))


def test_mass_function_validation():
    with pytest.raises(ValueError):
        MassFunction(frozenset({0, 1}), {frozenset({0}): 0.5})
    with pytest.raises(ValueError):
        MassFunction(frozenset({0, 1}), {frozenset({2}): 1.0})
    with pytest.raises(ValueError):
        MassFunction(frozenset({0, 1}), {frozenset(): 1.0})


def test_generic_rule_textbook_example():
    frame = frozenset("abc")
    m1 = MassFunction(frame, {frozenset("a"): 0.6, frozenset("bc"): 0.4})
    m2 = MassFunction(frame, {frozenset("b"): 0.5, frozenset("ab"): 0.5})
    m = dempster_generic(m1, m2)
    # products: a&b={} 0.3, a&ab=a 0.3, bc&b=b 0.2, bc&ab=b 0.2 ; K = 0.3
    assert m["a"] == pytest.approx(0.3 / 0.7)
    assert m["b"] == pytest.approx(0.4 / 0.7)


def test_generic_total_conflict():
    frame = frozenset({0, 1})
    with pytest.raises(TotalConflictError):
        dempster_generic(
            MassFunction(frame, {frozenset({0}): 1.0}), MassFunction(frame, {frozenset({1}): 1.0})
        )


def test_reduced_total_conflict():
    b1, b2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    with pytest.raises(TotalConflictError):
        fuse_opinions(b1, np.array(0.0), b2, np.array(0.0))


def test_average_fallback():
    s = average_fallback(evidence_to_state(np.array([4.0, 0.0])), evidence_to_state(np.array([0.0, 2.0])))
    assert isinstance(s, EvidenceState)
    assert np.allclose(s.evidence, [2.0, 1.0])


def test_conflict_definition(rng):
    b1, b2 = rng.dirichlet(np.ones(4)) * 0.8, rng.dirichlet(np.ones(4)) * 0.7
    brute = sum(b1[j] * b2[k] for j in range(4) for k in range(4) if j != k)
    assert conflict(b1, b2) == pytest.approx(brute, abs=1e-15)


def test_uncertainty_raster_roundtrip(tmp_path, rng):
    u = rng.random((5, 7)).astype(np.float32)
    p = tmp_path / "u.punc"
    write_uncertainty(p, u)
    assert np.array_equal(read_uncertainty(p), u)
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(FormatError):
        read_uncertainty(p)
