"""Walk through the tensor engine: build a small graph, backprop, check against finite differences."""

import numpy as np

from twostage_denoise import tensor as T
from twostage_denoise.conv import ConvParams, conv2d
from twostage_denoise.gradcheck import check, relative_error

rng = np.random.default_rng(0)

# %% every tensor is (N, C, H, W); ops record themselves when an input requires grad
x = T.Tensor(np.array([1.0, -2.0, 3.0]).reshape(1, 1, 1, 3), requires_grad=True)
loss = T.sum_all(T.square(x))
loss.backward()
print("d/dx sum(x^2) =", x.grad.ravel())  # [2, -4, 6]

# %% a 3x3 box filter on 1..9 leaves 5 at the centre
img = T.Tensor(np.arange(1.0, 10.0).reshape(1, 1, 3, 3))
box = ConvParams(T.Tensor(np.full((1, 1, 3, 3), 1 / 9)), T.Tensor(np.zeros(1)), padding=1)
print("box filter centre:", conv2d(img, box).data[0, 0, 1, 1])

# %% dilated conv gradient, tape vs central differences
w = T.Tensor(rng.standard_normal((2, 3, 3, 3)), requires_grad=True)
b = T.Tensor(np.zeros(2), requires_grad=True)
inp = T.Tensor(rng.standard_normal((2, 3, 8, 8)), requires_grad=True)
proj = T.Tensor(rng.standard_normal((2, 2, 8, 8)))


def f(a):
    return T.sum_all(T.mul(conv2d(a, ConvParams(w, b, dilation=2, padding=2)), proj))


f(inp).backward()
fd = T.finite_diff_grad(f, T.Tensor(inp.data.copy()))
print("dilated conv input grad rel. error: %.2e" % relative_error(inp.grad, fd))

# %% the same through the library checker, which also covers the weights
r = check("conv", lambda a, w_, b_: conv2d(a, ConvParams(w_, b_, dilation=2, padding=2)), [inp, w, b])
print(r)
