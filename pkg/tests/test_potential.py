"""Envelope geometry against closed-form constructions.

The three built-in potentials admit exact contact points:

* cubic: W = x^3/6 - x^2/2 has Q'(y) = y^3/3 - y^2/2, so the tangent from
  the origin touches at y = 3/2 with slope W'(3/2) = -3/8.
* both quartics have W'' symmetric about its midpoint c, so the bitangent
  contacts sit at c -+ s where s^3/3 - s/4 = 0, i.e. s = sqrt(3)/2.
"""

import numpy as np
import pytest

from chflow.potential import (
    HypothesisViolation,
    compute_convex_envelope,
    compute_unstable_set,
    distance_to_sigma,
    eval_q1,
    from_polynomial,
    make_potential,
    validate_hypotheses,
)

S = np.sqrt(3.0) / 2.0
SPINODAL_A, SPINODAL_B = 2.5 - S, 2.5 + S
WRINKLE_A, WRINKLE_B = 1.0 - S, 1.0 + S


@pytest.fixture(scope="module")
def cubic():
    spec = make_potential("cubic-motivation")
    env = compute_convex_envelope(spec)
    uset = compute_unstable_set(spec, env)
    return spec, env, uset


@pytest.fixture(scope="module")
def quartics():
    out = {}
    for name in ("quartic-spinodal", "quartic-wrinkle"):
        spec = make_potential(name)
        env = compute_convex_envelope(spec)
        out[name] = (spec, env, compute_unstable_set(spec, env))
    return out


def test_cubic_pointwise_values(cubic):
    spec, env, _ = cubic
    assert spec.eval_W(1.0) == pytest.approx(-1.0 / 3.0, abs=1e-14)
    assert spec.eval_W1(1.0) == pytest.approx(-0.5, abs=1e-14)
    assert eval_q1(spec, 1.0) == pytest.approx(-1.0 / 6.0, abs=1e-14)
    assert eval_q1(spec, 1.5) == pytest.approx(0.0, abs=1e-14)
    assert env.eval_Wss(1.0) == pytest.approx(-3.0 / 8.0, abs=1e-9)
    assert env.eval_Wss1(0.7) == pytest.approx(-3.0 / 8.0, abs=1e-9)


def test_cubic_envelope_breakpoints(cubic):
    _, env, uset = cubic
    assert np.any(np.abs(env.breakpoints - 1.5) < 1e-9)
    assert uset.count == 1
    assert not uset.degenerate_first
    np.testing.assert_allclose(uset.intervals[0], [0.0, 1.5], atol=1e-9)
    assert uset.m0 == pytest.approx(2.5, abs=1e-9)


def test_quartic_spinodal_bitangent(quartics):
    spec, env, uset = quartics["quartic-spinodal"]
    assert uset.count == 2
    assert uset.degenerate_first
    np.testing.assert_allclose(uset.intervals[0], [0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(uset.intervals[1], [SPINODAL_A, SPINODAL_B], atol=1e-8)
    assert uset.m0 == pytest.approx(SPINODAL_A / 2.0, abs=1e-8)
    # density 1 sits in the convex region, so the envelope follows W there
    assert env.eval_Wss(1.0) == pytest.approx(spec.eval_W(1.0), abs=1e-12)
    assert spec.eval_W(1.0) == pytest.approx(2.25, abs=1e-14)


def test_quartic_wrinkle_bitangent(quartics):
    spec, env, uset = quartics["quartic-wrinkle"]
    assert spec.eval_W2(1.0) == pytest.approx(-0.25, abs=1e-14)
    assert uset.count == 2
    assert uset.degenerate_first
    np.testing.assert_allclose(uset.intervals[1], [WRINKLE_A, WRINKLE_B], atol=1e-8)
    assert uset.m0 == pytest.approx(WRINKLE_A / 2.0, abs=1e-8)
    # bridge midpoint value equals the chord average of the contact values
    mid = 0.5 * (spec.eval_W(WRINKLE_A) + spec.eval_W(WRINKLE_B))
    assert env.eval_Wss(1.0) == pytest.approx(mid, abs=1e-8)


def test_envelope_below_and_convex(quartics, cubic):
    for spec, env, _ in [cubic] + list(quartics.values()):
        x = np.linspace(0.0, spec.domain_max, 3001)
        w = spec.eval_W(x)
        wss = env.eval_Wss(x)
        scale = max(float(np.abs(w).max()), 1.0)
        assert float((wss - w).max()) <= 1e-12 * scale
        second = np.diff(wss, 2)
        assert float(second.min()) >= -1e-10 * scale
        q = env.eval_Qss1(x)
        assert float(np.diff(q).min()) >= -1e-10 * scale


def test_envelope_idempotent(cubic):
    spec, env, _ = cubic
    # feed W** back in as a potential; its envelope must be itself
    from chflow.potential import PotentialSpec

    flat = PotentialSpec(name="hulled", eval_W=env.eval_Wss, eval_W1=env.eval_Wss1,
                         eval_W2=env.eval_Wss2, domain_max=spec.domain_max)
    env2 = compute_convex_envelope(flat)
    x = np.linspace(0.0, spec.domain_max, 2001)
    assert float(np.abs(env2.eval_Wss(x) - env.eval_Wss(x)).max()) <= 1e-9


def test_q1_consistency_with_derivative(cubic):
    # Q'' = y W'', so differences of Q' must track y W'(y) differences
    spec, _, _ = cubic
    y = np.linspace(0.0, 3.0, 2001)
    q = eval_q1(spec, y)
    dq = np.gradient(q, y)
    assert np.allclose(dq[5:-5], (y * spec.eval_W2(y))[5:-5], atol=5e-5)


def test_distance_to_sigma(quartics):
    _, _, uset = quartics["quartic-spinodal"]
    d = distance_to_sigma(np.array([0.0, 1.0, 2.0, SPINODAL_B + 0.5]), uset)
    # density 1 is nearer to [a, b] than to {0}; density 2 lies inside the band
    expected = [0.0, SPINODAL_A - 1.0, 0.0, 0.5]
    np.testing.assert_allclose(d, expected, atol=1e-8)


def test_distance_is_lipschitz(cubic):
    _, _, uset = cubic
    rng = np.random.default_rng(7)
    x = rng.uniform(-1.0, 8.0, size=400)
    y = x + rng.uniform(-0.5, 0.5, size=400)
    dx = distance_to_sigma(x, uset)
    dy = distance_to_sigma(y, uset)
    assert np.all(np.abs(dx - dy) <= np.abs(x - y) + 1e-12)


def test_normalization_applied():
    spec = from_polynomial([3.0, -2.0, 1.0, 0.5], name="shifted")
    assert spec.eval_W(0.0) == pytest.approx(0.0, abs=1e-14)
    assert spec.eval_W1(0.0) == pytest.approx(0.0, abs=1e-14)
    # curvature untouched by the affine gauge fix
    assert spec.eval_W2(0.0) == pytest.approx(2.0, abs=1e-14)


def test_guarded_extension_is_quadratic(cubic):
    spec, _, _ = cubic
    hi = spec.domain_max
    x = hi + 2.0
    expected = spec.eval_W(hi) + spec.eval_W1(hi) * 2.0 + 0.5 * spec.eval_W2(hi) * 4.0
    assert spec.eval_W(x) == pytest.approx(float(expected), rel=1e-13)
    assert spec.eval_W2(x) == pytest.approx(float(spec.eval_W2(hi)), rel=1e-13)
    # below zero the continuation keeps the normalized contact at the origin
    assert spec.eval_W(-1.0) == pytest.approx(0.5 * float(spec.eval_W2(0.0)), rel=1e-12)


def test_hypothesis_reports_pass_for_builtins(quartics, cubic):
    for spec, env, uset in [cubic] + list(quartics.values()):
        report = validate_hypotheses(spec, env, uset)
        assert report["ok"], report


def test_too_many_bands_raises():
    # W'' with five sign changes on the window yields two separated bands
    rng = np.linspace(0.5, 4.5, 5)
    w2 = np.polynomial.Polynomial([1.0])
    for r in rng:
        w2 = w2 * np.polynomial.Polynomial([-r, 1.0])
    w = w2.integ(2)
    spec = from_polynomial(w.coef, name="wiggly", max_density=3.0)
    env = compute_convex_envelope(spec, n_samples=4096)
    uset = compute_unstable_set(spec, env, max_intervals=8)
    assert uset.count == 2
    with pytest.raises(HypothesisViolation):
        compute_unstable_set(spec, env, max_intervals=1)


def test_unknown_name_rejected():
    with pytest.raises(KeyError):
        make_potential("sextic")
