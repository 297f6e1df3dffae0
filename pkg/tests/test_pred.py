import numpy as np
import pytest

from reachstay.dynamics import parse
from reachstay.expr import parse_expr
from reachstay.interval import Box
from reachstay.paver import Paver, covers
from reachstay.pred import (EmptyTarget, IdentityImage, IneqTarget, MapImage, PaverTarget, PredError, cpred,
                            sivia)

LINEAR = "state x;\ncontrol u finite {(-0.4), (0), (0.4)};\nx+ = 0.5*x + u;\n"
U3 = (-0.4, 0.0, 0.4)


def one(lo, hi):
    return Paver.from_boxes([Box.from_bounds([lo], [hi])])


def pre_linear(x, ylo, yhi, controls=U3, a=0.5):
    """Analytic predecessor of [ylo, yhi] under x+ = a x + u."""
    ok = np.zeros_like(x, dtype=bool)
    for u in controls:
        v = a * x + u
        ok |= (v >= ylo) & (v <= yhi)
    return ok


def grid(a, b, step):
    return np.linspace(a, b, int(round((b - a) / step)) + 1)


def check_partition(X, res, eps):
    parts = Paver.concat([res.inner, res.undetermined, res.outside], X.n)
    assert covers(parts, X) and covers(X, parts)
    assert parts.volume() == pytest.approx(X.volume(), rel=1e-12, abs=1e-12)
    if len(res.undetermined):
        assert np.all(res.undetermined.widths() < eps)
    assert res.K.boxes.same_set_as(res.inner)
    assert np.all(res.K.valid.any(axis=1))


@pytest.mark.parametrize("eps", [0.1, 0.01])
@pytest.mark.parametrize("ylo,yhi", [(-1.0, 1.0), (-0.5, 0.5)])
def test_lemma1_sandwich(eps, ylo, yhi):
    rho = 0.5
    sys = parse(LINEAR)
    X = one(-2, 2)
    res = cpred(X, PaverTarget(one(ylo, yhi)), eps, MapImage(sys))
    check_partition(X, res, eps)
    xs = grid(-2, 2, eps / 10)
    inner = res.inner.contains_points(xs[:, None])
    r = rho * eps
    lower = pre_linear(xs, ylo + r, yhi - r)
    upper = pre_linear(xs, ylo, yhi)
    assert not np.any(lower & ~inner)
    assert not np.any(inner & ~upper)


def test_lemma2_sampled_controls():
    eta, rho, eps = 0.1, 0.5, 0.02
    sys = parse("state x;\ncontrol u box [-0.4, 0.4] step 0.1;\nx+ = 0.5*x + u;\n")
    full = np.linspace(-0.4, 0.4, 801)
    X = one(-2, 2)
    res = cpred(X, PaverTarget(one(-0.5, 0.5)), eps, MapImage(sys))
    xs = grid(-2, 2, eps / 10)
    inner = res.inner.contains_points(xs[:, None])
    r = rho * (eps + eta)
    lower = pre_linear(xs, -0.5 + r, 0.5 - r, controls=full)
    assert not np.any(lower & ~inner)
    assert not np.any(inner & ~pre_linear(xs, -0.5, 0.5, controls=full))


def test_contraction_example():
    sys = parse("state x;\ncontrol u finite {(0)};\nx+ = 0.5*x;\n")
    res = cpred(one(-2, 2), PaverTarget(one(-1, 1)), 0.01, MapImage(sys))
    assert covers(res.inner, one(-1.99, 1.99))


def test_shift_example():
    sys = parse("state x;\ncontrol u finite {(-1), (0), (1)};\nx+ = x + u;\n")
    eps = 0.01
    res = cpred(one(-2, 2), PaverTarget(one(-0.5, 0.5)), eps, MapImage(sys))
    assert covers(res.inner, one(-1.5 + eps, 1.5 - eps))
    assert covers(one(-1.5, 1.5), res.inner)
    # the recorded controls are exactly the valid ones
    for lo, hi, valid in zip(res.K.boxes.lo[:, 0], res.K.boxes.hi[:, 0], res.K.valid):
        for j, u in enumerate((-1.0, 0.0, 1.0)):
            ok = -0.5 <= lo + u and hi + u <= 0.5
            assert valid[j] == ok


def test_empty_target_and_empty_X():
    sys = parse(LINEAR)
    X = one(-2, 2)
    res = cpred(X, EmptyTarget(), 0.1, MapImage(sys))
    assert len(res.inner) == 0 and res.outside.same_set_as(X)
    res = cpred(X, PaverTarget(Paver.empty(1)), 0.1, MapImage(sys))
    assert len(res.inner) == 0 and res.outside.same_set_as(X)
    res = cpred(Paver.empty(1), PaverTarget(X), 0.1, MapImage(sys))
    assert len(res.inner) == len(res.undetermined) == len(res.outside) == 0


def test_bad_eps():
    with pytest.raises(PredError):
        cpred(one(0, 1), PaverTarget(one(0, 1)), 0.0, IdentityImage())


def test_k_soundness_with_disturbance():
    sys = parse(LINEAR).with_delta(0.05)
    res = cpred(one(-2, 2), PaverTarget(one(-0.5, 0.5)), 0.01, MapImage(sys), delta=sys.delta)
    rng = np.random.default_rng(3)
    for lo, hi, valid in zip(res.K.boxes.lo[:, 0], res.K.boxes.hi[:, 0], res.K.valid):
        x = rng.uniform(lo, hi, 1000)
        d = rng.uniform(-0.05, 0.05, 1000)
        for j in np.nonzero(valid)[0]:
            y = 0.5 * x + U3[j] + d
            assert np.all((y >= -0.5) & (y <= 0.5))


def test_inequality_target_matches_box_target():
    sys = parse(LINEAR)
    eps = 0.01
    ineq = cpred(one(-2, 2), IneqTarget([parse_expr("x1^2 - 0.25")]), eps, MapImage(sys))
    xs = grid(-2, 2, eps / 10)
    inner = ineq.inner.contains_points(xs[:, None])
    assert not np.any(inner & ~pre_linear(xs, -0.5, 0.5))
    assert not np.any(pre_linear(xs, -0.5 + eps, 0.5 - eps) & ~inner)


def test_non_additive_disturbance_is_robust():
    sys = parse("state x;\ncontrol u finite {(0)};\ndisturbance inner w box [-0.1, 0.1] step 0.05;\n"
                "x+ = 0.5*x + w;\n")
    res = cpred(one(-3, 3), PaverTarget(one(-1, 1)), 0.01, MapImage(sys))
    assert covers(one(-1.8, 1.8), res.inner)
    assert covers(res.inner, one(-1.78, 1.78))


def test_screening_does_not_change_result():
    src = "state x;\ncontrol u box [-1, 1] step 0.05;\nx+ = 0.5*x + u^2 - 0.3;\n"
    sys = parse(src)
    X = one(-2, 2)
    Y = PaverTarget(Paver.from_boxes([Box.from_bounds([-0.6], [-0.1]), Box.from_bounds([0.2], [0.7])]))
    for delta in (0.0, 0.01):
        a = cpred(X, Y, 0.01, MapImage(sys), delta=delta, screen=True)
        b = cpred(X, Y, 0.01, MapImage(sys), delta=delta, screen=False)
        assert a.inner.canonical() == b.inner.canonical()
        assert a.undetermined.canonical() == b.undetermined.canonical()
        assert np.array_equal(a.K.valid, b.K.valid)


def test_deterministic_and_thread_independent():
    sys = parse("state x1 x2;\ncontrol u finite {(-0.2), (0), (0.2)};\n"
                "x1+ = 0.9*x1 + 0.1*x2;\nx2+ = -0.2*sin(x1) + 0.8*x2 + u;\n")
    X = Paver.from_boxes([Box.from_bounds([-2, -2], [2, 2])])
    Y = PaverTarget(Paver.from_boxes([Box.from_bounds([-0.5, -0.5], [0.5, 0.5])]))
    runs = [cpred(X, Y, 0.05, MapImage(sys), threads=t) for t in (1, 1, 4)]
    for r in runs[1:]:
        assert r.inner.lo.tobytes() == runs[0].inner.lo.tobytes()
        assert r.inner.hi.tobytes() == runs[0].inner.hi.tobytes()
        assert r.undetermined.lo.tobytes() == runs[0].undetermined.lo.tobytes()
        assert np.array_equal(r.K.valid, runs[0].K.valid)


def test_sivia_of_disc():
    X = Paver.from_boxes([Box.from_bounds([-2, -2], [2, 2])])
    inner, und, out = sivia(X, IneqTarget([parse_expr("x1^2 + x2^2 - 1")]), 0.05)
    assert inner.volume() <= np.pi <= inner.volume() + und.volume()
    assert np.all(und.widths() < 0.05)
    far = np.maximum(np.abs(inner.lo), np.abs(inner.hi))
    assert np.all(far[:, 0] ** 2 + far[:, 1] ** 2 <= 1 + 1e-12)
