import numpy as np
import pytest
from hypothesis import given, strategies as st

from lucie3d import autodiff as ad
from lucie3d.grid import build_grid, quadrature_mean, random_bandlimited


def grad_of(build, x):
    tape = ad.Tape()
    leaf = tape.leaf(x)
    loss = build(tape, leaf)
    return ad.backward(tape, loss)[leaf.id], float(loss.value)


def value_of(build, x):
    tape = ad.Tape()
    return float(build(tape, tape.leaf(x)).value)


def test_sum_of_squares():
    g, v = grad_of(lambda t, x: ad.contract(ad.square(x), np.ones(3)), np.array([1.0, 2.0, 3.0]))
    assert v == 14.0
    assert np.array_equal(g, [2.0, 4.0, 6.0])


def test_shared_subexpression_accumulates():
    g, _ = grad_of(lambda t, x: ad.contract(x + x, np.ones(1)), np.array([0.3]))
    assert g[0] == 2.0


def test_loss_gradient_is_one():
    tape = ad.Tape()
    x = tape.leaf(np.array(2.0))
    grads = ad.backward(tape, x)
    assert grads[x.id] == 1.0


def test_errors():
    tape, other = ad.Tape(), ad.Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(ad.TapeError):
        ad.backward(tape, x)  # not scalar
    y = other.leaf(np.ones(3))
    with pytest.raises(ad.TapeError):
        ad.add(x, y)
    s = other.leaf(np.array(1.0))
    with pytest.raises(ad.TapeError):
        ad.backward(tape, s)
    with pytest.raises(ad.TapeError):
        ad.add(x, tape.leaf(np.ones(4)))
    with pytest.raises(FloatingPointError):
        tape.leaf(np.array([np.nan]))
    with pytest.raises(FloatingPointError):
        ad.log(tape.leaf(np.array([-1.0])))


def test_released_tape_is_reported():
    tape = ad.Tape()
    x = tape.leaf(np.ones(2))
    del tape
    with pytest.raises(ad.TapeError):
        x.tape


OPS = {
    "square": lambda t, x, g: ad.contract(ad.square(x), np.linspace(0.5, 1.5, x.value.size).reshape(x.shape)),
    "silu": lambda t, x, g: ad.contract(ad.silu(x), np.linspace(-1, 1, x.value.size).reshape(x.shape)),
    "log": lambda t, x, g: ad.contract(ad.log(ad.square(x), 1e-3), np.ones(x.shape)),
    "mul": lambda t, x, g: ad.contract(ad.mul(x, ad.silu(x)), np.ones(x.shape)),
    "reduce": lambda t, x, g: ad.contract(ad.square(ad.reduce_axis(x, np.arange(1.0, x.shape[1] + 1), 1)),
                                          np.ones((x.shape[0], x.shape[2]))),
    "sht": lambda t, x, g: ad.contract(ad.square(ad.magnitude(ad.sht_forward(x, g))),
                                       np.ones((*x.shape[:-2], g.ncoef))),
    "sht_roundtrip": lambda t, x, g: ad.contract(ad.square(ad.sht_inverse(ad.sht_forward(x, g), g)),
                                                 np.ones(x.shape)),
    "zonal_dft": lambda t, x, g: ad.contract(ad.magnitude(ad.zonal_dft(x)),
                                             np.ones((*x.shape[:-1], x.shape[-1] // 2 + 1))),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_finite_differences(name, fd, relerr):
    g = build_grid(3)
    rng = np.random.default_rng(5)
    if name in ("sht", "sht_roundtrip", "zonal_dft"):
        x = rng.standard_normal((2, *g.shape))
    elif name == "reduce":
        x = rng.standard_normal((2, 3, 4))
    else:
        x = rng.standard_normal((3, 4))
    build = lambda t, leaf: OPS[name](t, leaf, g)  # noqa: E731
    grad, _ = grad_of(build, x)
    for i in rng.choice(x.size, 5, replace=False):
        num = fd(lambda v: value_of(build, v), x, idx=[i])
        assert relerr(grad.reshape(-1)[i], num) < 1e-6


def test_weighted_l2_gradient(fd, relerr):
    g = build_grid(7)
    rng = np.random.default_rng(0)
    target = random_bandlimited(g, rng)
    x = random_bandlimited(g, rng)
    coef = np.broadcast_to((g.gauss_weights / (2 * g.nlon))[:, None], g.shape)

    def build(t, leaf):
        return ad.contract(ad.square(ad.sub(leaf, t.constant(target))), coef)

    grad, v = grad_of(build, x)
    assert abs(v - quadrature_mean((x - target) ** 2, g)) < 1e-14
    num = fd(lambda a: value_of(build, a), x)
    assert relerr(grad.ravel(), num) < 1e-6


def test_affine_and_complex_weights(fd, relerr):
    g = build_grid(3)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, *g.shape))
    w = rng.standard_normal((4, 3))
    b = rng.standard_normal(4)
    spec = rng.standard_normal((4, 4, 4, 2))

    def loss(xv, wv, bv, sv):
        t = ad.Tape()
        leaves = [t.leaf(v) for v in (xv, wv, bv, sv)]
        h = ad.affine(leaves[0], leaves[1], leaves[2])
        z = ad.spectral_mix(ad.sht_forward(h, g), ad.as_complex(leaves[3]), g)
        out = ad.contract(ad.square(ad.sht_inverse(z, g)), np.ones((2, 4, *g.shape)))
        return t, leaves, out

    t, leaves, out = loss(x, w, b, spec)
    grads = ad.backward(t, out)
    arrays = [x, w, b, spec]
    for k in range(4):
        def f(v, k=k):
            args = list(arrays)
            args[k] = v
            return float(loss(*args)[2].value)
        idx = rng.choice(arrays[k].size, min(5, arrays[k].size), replace=False)
        num = fd(f, arrays[k], idx=idx)
        assert relerr(grads[leaves[k].id].reshape(-1)[idx], num) < 1e-6


@given(seed=st.integers(0, 2**31))
def test_replay_is_deterministic(seed):
    g = build_grid(3)
    x = np.random.default_rng(seed).standard_normal((2, *g.shape))
    build = lambda t, leaf: OPS["sht"](t, leaf, g)  # noqa: E731
    a, _ = grad_of(build, x)
    b, _ = grad_of(build, x)
    assert np.array_equal(a, b)


def test_spectral_mix_uses_degree(t3):
    # per-degree weights: only l = 2 survives
    rng = np.random.default_rng(0)
    tape = ad.Tape()
    x = tape.constant(rng.standard_normal((1, 1, *t3.shape)))
    w = np.zeros((4, 1, 1, 2))
    w[2, 0, 0, 0] = 1.0
    z = ad.spectral_mix(ad.sht_forward(x, t3), ad.as_complex(tape.constant(w)), t3)
    ls = t3.plan.degrees
    assert np.all(z.value[..., ls != 2] == 0)
    assert np.allclose(z.value[..., ls == 2], ad.sht_forward(x, t3).value[..., ls == 2])
