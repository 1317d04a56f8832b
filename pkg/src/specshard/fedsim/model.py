"""Small tanh MLPs with optionally factorized hidden layers, hand-written backprop."""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import NumericalError, ValidationError


@dataclass(frozen=True)
class LocalHyper:
    """Client optimizer settings.

    Attributes:
        learning_rate: base rate; the per-round value comes from cosine_lr.
        momentum: classical (heavy-ball) momentum coefficient.
        frobenius_decay: weight of ``||U Omega V^T||_F^2`` per factorized layer.
        clip_threshold: tau; factor-column gradients are scaled by
            ``min(1, tau / omega_i)``. ``math.inf`` disables clipping.
        local_epochs: passes over the client data per round.
        batch_size: minibatch size.
    """

    learning_rate: float = 0.1
    momentum: float = 0.9
    frobenius_decay: float = 1e-4
    clip_threshold: float = 10.0
    local_epochs: int = 2
    batch_size: int = 32

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")
        if not self.frobenius_decay >= 0:
            raise ValidationError("frobenius_decay must be >= 0")
        if not self.clip_threshold >= 1:
            raise ValidationError("clip_threshold (tau) must be >= 1")
        if self.local_epochs < 0 or self.batch_size < 1:
            raise ValidationError("local_epochs must be >= 0 and batch_size >= 1")


def cosine_lr(base, step, total_steps):
    """Cosine annealing from ``base`` at step 0 to 0 at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValidationError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return float(base)
    return base * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class DenseLayer:
    weight: np.ndarray
    bias: np.ndarray

    def effective(self):
        return self.weight


@dataclass
class FactorizedLayer:
    """``W = left @ diag(multipliers) @ right.T``; multipliers stay frozen."""

    left: np.ndarray
    right: np.ndarray
    multipliers: np.ndarray
    bias: np.ndarray
    indices: np.ndarray = field(default=None)

    def effective(self):
        return (self.left * self.multipliers) @ self.right.T


def copy_layers(layers):
    out = []
    for layer in layers:
        if isinstance(layer, DenseLayer):
            out.append(DenseLayer(layer.weight.copy(), layer.bias.copy()))
        else:
            out.append(replace(layer, left=layer.left.copy(), right=layer.right.copy(),
                               bias=layer.bias.copy()))
    return out


def forward(layers, x, hidden="tanh"):
    """Activations of every layer; the last layer is linear."""
    acts = [x]
    h = x
    for i, layer in enumerate(layers):
        z = h @ layer.effective().T + layer.bias
        h = z if i == len(layers) - 1 else (np.tanh(z) if hidden == "tanh" else z)
        acts.append(h)
    return acts


def loss_and_delta(output, target, kind):
    """Mean loss over the batch and its gradient w.r.t. the network output.

    ``kind`` is "classification" (softmax cross-entropy, integer targets) or
    "regression" (mean squared error over all output entries).
    """
    batch = output.shape[0]
    if kind == "classification":
        shifted = output - output.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - logz
        loss = -logp[np.arange(batch), target].mean()
        delta = np.exp(logp)
        delta[np.arange(batch), target] -= 1.0
        return float(loss), delta / batch
    diff = output - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def backward(layers, acts, delta, hidden="tanh"):
    """Gradients ``(dL/dW_eff, dL/db)`` per layer from the output gradient."""
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        h_in = acts[i]
        grads[i] = (delta.T @ h_in, delta.sum(axis=0))
        if i > 0:
            delta = delta @ layers[i].effective()
            if hidden == "tanh":
                delta = delta * (1.0 - h_in * h_in)
    return grads


def parameter_grads(layers, weight_grads, frobenius_decay, clip_threshold):
    """Map effective-weight gradients to the trainable parameters.

    Factorized layers get ``dL/dU = G V Omega`` and ``dL/dV = G^T U Omega``
    where ``G`` includes the Frobenius decay term ``2 fd W``; each column is
    then scaled by ``min(1, tau / omega_i)``. Dense layers return ``G``.
    """
    out = []
    for layer, (g_w, g_b) in zip(layers, weight_grads):
        if isinstance(layer, DenseLayer):
            out.append((g_w, g_b))
            continue
        omega = layer.multipliers
        if frobenius_decay:
            g_w = g_w + 2.0 * frobenius_decay * layer.effective()
        g_left = (g_w @ layer.right) * omega
        g_right = (g_w.T @ layer.left) * omega
        if math.isfinite(clip_threshold):
            scale = np.minimum(1.0, clip_threshold / omega)
            g_left = g_left * scale
            g_right = g_right * scale
        out.append((g_left, g_right, g_b))
    return out


def objective(layers, x, target, kind, frobenius_decay=0.0):
    """Loss plus Frobenius decay on factorized layers (used for gradient checks)."""
    acts = forward(layers, x)
    loss, _ = loss_and_delta(acts[-1], target, kind)
    for layer in layers:
        if isinstance(layer, FactorizedLayer):
            w = layer.effective()
            loss += frobenius_decay * float(np.sum(w * w))
    return loss


def gradients(layers, x, target, kind, frobenius_decay=0.0, clip_threshold=math.inf):
    acts = forward(layers, x)
    loss, delta = loss_and_delta(acts[-1], target, kind)
    weight_grads = backward(layers, acts, delta)
    return loss, parameter_grads(layers, weight_grads, frobenius_decay, clip_threshold)


def _params(layer):
    if isinstance(layer, DenseLayer):
        return [layer.weight, layer.bias]
    return [layer.left, layer.right, layer.bias]


def local_train(layers, x, target, kind, hyper, learning_rate, orders):
    """Minibatch SGD with momentum on a copy of ``layers``.

    Args:
        orders: one permutation of the local sample indices per epoch.

    Returns:
        The trained layers; multipliers are untouched.

    Raises:
        NumericalError: the loss or the parameters became non-finite.
    """
    layers = copy_layers(layers)
    params = [_params(layer) for layer in layers]
    buffers = [[np.zeros_like(p) for p in group] for group in params]
    mu = hyper.momentum
    size = x.shape[0]
    for epoch, order in enumerate(orders):
        for start in range(0, size, hyper.batch_size):
            batch = order[start:start + hyper.batch_size]
            # overflow shows up as a non-finite loss, reported below
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = gradients(layers, x[batch], target[batch], kind,
                                        hyper.frobenius_decay, hyper.clip_threshold)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite local loss at epoch {epoch}, offset {start}")
            for group, bufs, g_group in zip(params, buffers, grads):
                for p, buf, g in zip(group, bufs, g_group):
                    buf *= mu
                    buf += g
                    p -= learning_rate * buf
    if not all(np.all(np.isfinite(p)) for group in params for p in group):
        raise NumericalError("local training produced non-finite parameters")
    return layers


def local_train_factorized(shard, bias, x, y, hyper, learning_rate, orders):
    """Train one factorized linear layer ``y ~ x W^T + b`` under squared loss.

    Returns:
        (left, right, bias) after training; the shard is not modified.
    """
    layer = FactorizedLayer(shard.left.copy(), shard.right.copy(), shard.multipliers,
                            np.asarray(bias, dtype=np.float64).copy(), shard.indices)
    trained = local_train([layer], x, y, "regression", hyper, learning_rate, orders)[0]
    return trained.left, trained.right, trained.bias
