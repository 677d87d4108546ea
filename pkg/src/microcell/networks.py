"""Minimal fully connected networks with explicit gradients.

Everything is plain float64 numpy: forward passes cache pre-activations,
backward passes return exact parameter gradients plus the gradient with
respect to the input (needed to chain through frozen networks). Hidden
layers use the leaky rectifier with slope 0.2; the output layer is
linear, with task-specific heads applied on top where needed.
"""
from __future__ import annotations

import numpy as np

from .errors import ValidationError

LEAKY_SLOPE = 0.2


def leaky_relu(x, slope=LEAKY_SLOPE):
    return np.where(x >= 0, x, slope * x)


def leaky_relu_grad(x, slope=LEAKY_SLOPE):
    return np.where(x >= 0, 1.0, slope)


class Mlp:
    """Dense network: sizes[0] -> ... -> sizes[-1], linear output."""

    def __init__(self, sizes, seed=0):
        if len(sizes) < 2:
            raise ValidationError("an MLP needs at least input and output sizes")
        self.sizes = list(sizes)
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    def forward(self, x):
        """Returns (output, cache); cache holds inputs and pre-activations."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.shape[1] != self.sizes[0]:
            raise ValidationError(
                f"input width {h.shape[1]} does not match layer size {self.sizes[0]}")
        activations = [h]
        pre = []
        last = len(self.weights) - 1
        for layer, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            pre.append(z)
            h = z if layer == last else leaky_relu(z)
            activations.append(h)
        out = h[0] if squeeze else h
        return out, {"activations": activations, "pre": pre, "squeeze": squeeze}

    def backward(self, cache, grad_output):
        """Exact gradients for a cached forward pass.

        Returns (grads, grad_input) where grads is a dict with "weights"
        and "biases" lists matching the parameter layout.
        """
        g = np.asarray(grad_output, dtype=float)
        if cache["squeeze"]:
            g = g[None, :]
        acts, pre = cache["activations"], cache["pre"]
        gW = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        last = len(self.weights) - 1
        for layer in range(last, -1, -1):
            if layer != last:
                g = g * leaky_relu_grad(pre[layer])
            gW[layer] = acts[layer].T @ g
            gb[layer] = g.sum(axis=0)
            g = g @ self.weights[layer].T
        grad_input = g[0] if cache["squeeze"] else g
        return {"weights": gW, "biases": gb}, grad_input

    def parameters(self):
        return self.weights + self.biases

    def to_dict(self):
        return {
            "sizes": self.sizes,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, payload):
        net = cls(payload["sizes"])
        net.weights = [np.asarray(W, dtype=float) for W in payload["weights"]]
        net.biases = [np.asarray(b, dtype=float) for b in payload["biases"]]
        for W, b, fan_in, fan_out in zip(net.weights, net.biases,
                                         net.sizes[:-1], net.sizes[1:]):
            if W.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ValidationError("stored weights do not match declared sizes")
        return net


def mlp_forward(net: Mlp, x):
    return net.forward(x)


def mlp_backward(net: Mlp, cache, grad_output):
    return net.backward(cache, grad_output)


class Adam:
    """Adam moments for one network; beta1 = 0.5 suits adversarial training."""

    def __init__(self, net: Mlp, learning_rate=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        params = net.parameters()
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, net: Mlp, grads) -> None:
        self.t += 1
        flat = grads["weights"] + grads["biases"]
        params = net.parameters()
        b1t = 1 - self.beta1 ** self.t
        b2t = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params, flat, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


# ---------------------------------------------------------------------------
# generator output heads: simplex weights by normalized exponentials,
# level-set offsets by a bounded tanh map
# ---------------------------------------------------------------------------

def head_forward(raw, t_bound=0.4):
    """(…, 6) raw outputs -> constraint-satisfying shape parameters."""
    raw = np.asarray(raw, dtype=float)
    logits = raw[..., :3]
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    alphas = e / e.sum(axis=-1, keepdims=True)
    th = np.tanh(raw[..., 3:])
    ts = t_bound * th
    return np.concatenate([alphas, ts], axis=-1), {"alphas": alphas, "tanh": th,
                                                   "t_bound": t_bound}


def head_backward(cache, grad_params):
    """Chain gradients w.r.t. shape parameters back to raw outputs."""
    g = np.asarray(grad_params, dtype=float)
    a = cache["alphas"]
    ga = g[..., :3]
    dot = (ga * a).sum(axis=-1, keepdims=True)
    grad_logits = a * (ga - dot)
    grad_t = g[..., 3:] * cache["t_bound"] * (1 - cache["tanh"] ** 2)
    return np.concatenate([grad_logits, grad_t], axis=-1)


# ---------------------------------------------------------------------------
# loss primitives, numerically stable in the logits
# ---------------------------------------------------------------------------

def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def discriminator_loss(logits_real, logits_fake):
    """Binary cross-entropy critic objective: push real up, fake down.

    Returns (loss, grad wrt real logits, grad wrt fake logits); at
    D = 0.5 everywhere the loss is 2 ln 2.
    """
    lr = np.asarray(logits_real, dtype=float)
    lf = np.asarray(logits_fake, dtype=float)
    loss = _softplus(-lr).mean() + _softplus(lf).mean()
    grad_real = (_sigmoid(lr) - 1.0) / lr.size
    grad_fake = _sigmoid(lf) / lf.size
    return float(loss), grad_real, grad_fake


def generator_adversarial_loss(logits_fake):
    """Non-saturating generator objective -log D(fake)."""
    lf = np.asarray(logits_fake, dtype=float)
    loss = _softplus(-lf).mean()
    grad = (_sigmoid(lf) - 1.0) / lf.size
    return float(loss), grad


def l1_loss(pred, target):
    """Per-component mean absolute error and its gradient w.r.t. pred."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    diff = pred - target
    loss = np.abs(diff).mean()
    grad = np.sign(diff) / diff.size
    return float(loss), grad
