"""Minimal MLP building blocks on top of the autodiff core.

Weights are stored as (fan_in, fan_out) matrices so a batch of row vectors
flows left to right: y = x @ W + b.  Each network keeps its parameters in a
flat name -> Tensor dict, which is also the unit of checkpointing and
optimizer state.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels

_NP_ACT = {
    "tanh": kernels.tanh,
    "elu": kernels.elu,
    "softplus": kernels.softplus,
    "linear": lambda x: x,
}


@dataclass
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden: list = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"
    output_activation: str = "linear"

    def __post_init__(self):
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ValueError("dimensions must be positive")
        if not self.hidden:
            raise ValueError("hidden layer list must be nonempty")
        if self.activation not in _NP_ACT or self.output_activation not in _NP_ACT:
            raise ValueError(f"unknown activation in {self}")


def orthogonal(rng, rows, cols, gain=1.0):
    """Orthogonal matrix scaled by gain (rows x cols)."""
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


class Mlp:
    """Plain feedforward network with a configurable output gain.

    Hidden layers use orthogonal init with gain sqrt(2); the output layer
    gain is a constructor argument (0.01 for policy heads, 1.0 for value
    heads).  Biases start at zero.
    """

    def __init__(self, spec: MlpSpec, rng, output_gain=1.0, prefix=""):
        self.spec = spec
        self.prefix = prefix
        self.params = {}
        dims = [spec.input_dim] + list(spec.hidden) + [spec.output_dim]
        self.n_layers = len(dims) - 1
        for i in range(self.n_layers):
            gain = np.sqrt(2.0) if i < self.n_layers - 1 else output_gain
            w = orthogonal(rng, dims[i], dims[i + 1], gain)
            self.params[f"{prefix}l{i}.W"] = ad.tensor(w, requires_grad=True)
            self.params[f"{prefix}l{i}.b"] = ad.tensor(
                np.zeros(dims[i + 1]), requires_grad=True
            )

    def weight(self, i):
        return self.params[f"{self.prefix}l{i}.W"]

    def bias(self, i):
        return self.params[f"{self.prefix}l{i}.b"]

    def forward(self, x):
        """Differentiable forward pass; x is a (batch, input_dim) tensor."""
        h = ad.as_tensor(x)
        for i in range(self.n_layers):
            h = ad.add(ad.matmul(h, self.weight(i)), self.bias(i))
            kind = (
                self.spec.activation
                if i < self.n_layers - 1
                else self.spec.output_activation
            )
            h = ad.activation(h, kind)
        return h

    def forward_np(self, x):
        """Tape-free forward pass on a plain array (rollout/eval fast path)."""
        h = x
        for i in range(self.n_layers):
            h = h @ self.weight(i).data + self.bias(i).data
            kind = (
                self.spec.activation
                if i < self.n_layers - 1
                else self.spec.output_activation
            )
            h = _NP_ACT[kind](h)
        return h

    def hidden_derivative_chain(self, x):
        """Per-sample input Jacobian of the network, shape (batch, in, out).

        Tape-free chain-rule product used by the inference path of the
        Jacobian-normalized architecture; only valid for elementwise
        activations (all of ours).
        """
        h = x
        jac = None
        for i in range(self.n_layers):
            w = self.weight(i).data
            z = h @ w + self.bias(i).data
            kind = (
                self.spec.activation
                if i < self.n_layers - 1
                else self.spec.output_activation
            )
            a = _NP_ACT[kind](z)
            d = _activation_derivative(kind, z, a)
            # accumulate J <- J @ W @ diag(d) per sample
            step = w[None, :, :] * d[:, None, :]
            jac = step if jac is None else jac @ step
            h = a
        return jac


def _activation_derivative(kind, z, a):
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "elu":
        return np.where(z > 0.0, 1.0, a + 1.0)
    if kind == "softplus":
        return kernels.sigmoid(z)
    return np.ones_like(z)


def softplus_inverse(y):
    """x with softplus(x) = y, for y > 0."""
    if y <= 0:
        raise ValueError("softplus is positive; no preimage for y <= 0")
    # log(e^y - 1) = y + log1p(-exp(-y)) is stable for large y
    return y + np.log1p(-np.exp(-y))
