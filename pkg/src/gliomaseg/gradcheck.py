"""Central finite-difference verification of tape gradients."""

import numpy as np

from .autodiff import ParamSet, Tensor, backward


def finite_diff_check(f, params: ParamSet, step: float = 1e-3) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(params)`` must deterministically return a scalar :class:`Tensor`
    built from the registered parameters.  Parameters should be double
    precision; the relative error denominator is
    ``max(|analytic|, |numeric|, 1e-8)`` per coordinate.
    """
    params.zero_grad()
    loss = f(params)
    if not isinstance(loss, Tensor):
        raise TypeError("f must return a Tensor")
    backward(loss)
    analytic = params.grad_flat()

    theta = params.flatten().astype(np.float64)
    numeric = np.zeros_like(theta)
    for i in range(theta.size):
        bump = np.zeros_like(theta)
        bump[i] = step
        params.set_flat(theta + bump)
        f_plus = float(f(params).data)
        params.set_flat(theta - bump)
        f_minus = float(f(params).data)
        numeric[i] = (f_plus - f_minus) / (2.0 * step)
    params.set_flat(theta)
    params.zero_grad()

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _away_from_zero(arr, margin=0.05):
    """Push values out of the [-margin, margin] band so central differences
    never straddle a kink (ReLU, |x| in logcosh)."""
    return arr + np.sign(arr) * margin + (arr == 0) * margin


def gradient_suite(seed: int = 0, step: float = 1e-3) -> dict:
    """Finite-difference check of every differentiable building block.

    Returns {check name: max relative error}.  All checks run in double
    precision on small random inputs.
    """
    from . import autodiff as ad
    from . import layers, losses

    rng = np.random.default_rng(seed)
    results = {}

    def check(name, build):
        ps = ParamSet()
        f = build(ps, rng)
        results[name] = finite_diff_check(f, ps, step=step)

    def rnd(shape, lo=-1.0, hi=1.0):
        return rng.uniform(lo, hi, size=shape)

    def weighted_sum(y, c):
        return ad.reduce_sum(ad.mul(y, ad.constant(c)))

    # -- raw tape ops --------------------------------------------------------
    def op_case(name, fn, lo=-1.0, hi=1.0, kink=False):
        def build(ps, rng):
            data = rnd((2, 3, 3, 3, 2), lo, hi)
            if kink:
                data = _away_from_zero(data)
            x = ps.register("x", data)
            c = rng.uniform(-1.0, 1.0, size=(2, 3, 3, 3, 2))
            return lambda _ps: weighted_sum(fn(x), c)
        check(name, build)

    op_case("exp", ad.exp)
    op_case("log", ad.log, lo=0.2, hi=2.0)
    op_case("sqrt", ad.sqrt, lo=0.2, hi=2.0)
    op_case("logcosh", ad.logcosh, lo=-3.0, hi=3.0, kink=True)
    op_case("relu", layers.relu, kink=True)
    op_case("elu", layers.elu, kink=True)
    op_case("sigmoid", layers.sigmoid)
    op_case("softmax", layers.softmax_channels)
    op_case("instance_norm", layers.instance_norm)

    def build_div(ps, rng):
        a = ps.register("a", rnd((3, 4)))
        b = ps.register("b", rnd((3, 4), 0.5, 2.0))
        c = rng.uniform(-1.0, 1.0, size=(3, 4))
        return lambda _ps: weighted_sum(ad.div(a, b), c)
    check("div", build_div)

    def build_conv(stride, padding):
        def build(ps, rng):
            x = ps.register("x", rnd((1, 4, 4, 4, 2)))
            w = ps.register("w", rnd((3, 3, 3, 2, 2), -0.5, 0.5))
            c = rng.uniform(-1.0, 1.0,
                            size=ad.conv3d(ad.constant(x.data),
                                           ad.constant(w.data),
                                           stride, padding).shape)
            return lambda _ps: weighted_sum(ad.conv3d(x, w, stride, padding), c)
        return build
    check("conv3d_s1_same", build_conv(1, "same"))
    check("conv3d_s2_same", build_conv(2, "same"))
    check("conv3d_s1_valid", build_conv(1, "valid"))

    def build_convt(ps, rng):
        x = ps.register("x", rnd((1, 2, 2, 3, 2)))
        w = ps.register("w", rnd((2, 2, 2, 2, 3), -0.5, 0.5))
        c = rng.uniform(-1.0, 1.0, size=(1, 4, 4, 6, 3))
        return lambda _ps: weighted_sum(ad.conv_transpose3d(x, w), c)
    check("conv_transpose3d", build_convt)

    def build_upsample(ps, rng):
        x = ps.register("x", rnd((1, 3, 3, 3, 2)))
        c = rng.uniform(-1.0, 1.0, size=(1, 6, 6, 6, 2))
        return lambda _ps: weighted_sum(layers.upsample2x(x), c)
    check("upsample2x", build_upsample)

    def build_attention(ps, rng):
        x = ps.register("x", rnd((2, 3, 3, 3, 3)))
        wc = ps.register("wc", rnd((3,), -0.5, 0.5))
        c = rng.uniform(-1.0, 1.0, size=(2, 3, 3, 3, 3))
        return lambda _ps: weighted_sum(layers.channel_attention(x, wc), c)
    check("channel_attention", build_attention)

    def build_scale_voxels(ps, rng):
        x = ps.register("x", rnd((1, 3, 3, 3, 2)))
        alpha = ps.register("alpha", rnd((1, 3, 3, 3, 1), 0.1, 0.9))
        c = rng.uniform(-1.0, 1.0, size=(1, 3, 3, 3, 2))
        return lambda _ps: weighted_sum(layers.scale_voxels(x, alpha), c)
    check("scale_voxels", build_scale_voxels)

    # -- composite blocks ----------------------------------------------------
    def build_block1(ps, rng):
        p = layers.init_conv_block1(ps, rng, "b1", 2, 2, dtype=np.float64)
        x = ps.register("x", _away_from_zero(rnd((1, 3, 3, 3, 2))))
        c = rng.uniform(-1.0, 1.0, size=(1, 3, 3, 3, 2))
        return lambda _ps: weighted_sum(layers.conv_block1(x, p), c)
    check("conv_block1", build_block1)

    def build_block2(ps, rng):
        p = layers.init_conv_block2(ps, rng, "b2", 2, 2, dtype=np.float64)
        x = ps.register("x", _away_from_zero(rnd((1, 3, 3, 3, 2))))
        c = rng.uniform(-1.0, 1.0, size=(1, 3, 3, 3, 2))
        return lambda _ps: weighted_sum(layers.conv_block2(x, p), c)
    check("conv_block2", build_block2)

    def build_gate(ps, rng):
        p = layers.init_attention_gate(ps, rng, "ag", 2, 4, dtype=np.float64)
        x = ps.register("x", rnd((1, 4, 4, 4, 2)))
        g = ps.register("g", rnd((1, 2, 2, 2, 4)))
        c = rng.uniform(-1.0, 1.0, size=(1, 4, 4, 4, 2))
        return lambda _ps: weighted_sum(layers.attention_gate(x, g, p), c)
    check("attention_gate", build_gate)

    # -- losses, from logits through softmax ---------------------------------
    labels = rng.integers(0, 4, size=(1, 3, 3, 4))
    target = losses.one_hot(labels, 4, dtype=np.float64)

    def loss_case(name, loss_fn):
        def build(ps, rng):
            z = ps.register("logits", rnd((1, 3, 3, 4, 4)))
            return lambda _ps: loss_fn(layers.softmax_channels(z), target)
        check(name, build)

    loss_case("dice_loss", losses.dice_loss)
    loss_case("cross_entropy", losses.cross_entropy)
    loss_case("log_cosh_dice", losses.log_cosh_dice)
    loss_case("dice_ce", losses.dice_ce)

    return results
