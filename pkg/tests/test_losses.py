import numpy as np
import pytest

from dualprop.losses import CrossEntropy, LeastSquares, logsumexp, make_loss, one_hot, softmax


def numeric_grad(fn, s, h=1e-6):
    g = np.zeros_like(s)
    for i in range(s.size):
        e = np.zeros_like(s)
        e[i] = h
        g[i] = (fn(s + e) - fn(s - e)) / (2 * h)
    return g


@pytest.mark.parametrize("loss", [LeastSquares(), CrossEntropy()], ids=["ls", "ce"])
def test_grad_matches_central_differences(loss):
    rng = np.random.default_rng(0)
    s, y = rng.standard_normal(5), one_hot(2, 5)
    np.testing.assert_allclose(loss.grad(s, y), numeric_grad(lambda v: loss.value(v, y), s), atol=1e-8)


def test_least_squares_value():
    assert LeastSquares().value(np.array([1.0, 2.0]), np.array([0.0, 0.0])) == 2.5


def test_logsumexp_is_stable():
    assert logsumexp(np.array([1000.0, 1000.0])) == pytest.approx(1000.0 + np.log(2.0))
    assert np.all(np.isfinite(softmax(np.array([1e4, -1e4, 0.0]))))


def test_cross_entropy_finite_for_large_logits():
    ce = CrossEntropy()
    s = np.array([800.0, -800.0])
    assert np.isfinite(ce.value(s, one_hot(1, 2)))
    assert np.all(np.isfinite(ce.grad(s, one_hot(1, 2))))


def test_one_hot_batch():
    np.testing.assert_array_equal(one_hot([2, 0], 3), [[0, 0, 1], [1, 0, 0]])


def test_make_loss():
    assert isinstance(make_loss("ls"), LeastSquares)
    assert isinstance(make_loss("ce"), CrossEntropy)
    with pytest.raises(ValueError):
        make_loss("hinge")
