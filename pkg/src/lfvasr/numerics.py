"""Stable log-domain primitives, the Nesterov optimizer and batch norm."""

import numpy as np

from . import autograd
from .autograd import Parameter, Tensor
from .errors import TrainingError, UsageError


def log_sum_exp(values):
    """log(sum(exp(values))), stable under large magnitudes.

    Accepts the log-domain zero sentinel -inf exactly: an all-(-inf)
    input yields -inf.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise UsageError("log_sum_exp of an empty vector")
    m = v.max()
    if not np.isfinite(m):
        if m == -np.inf:
            return -np.inf
        return float(m)
    return float(m + np.log(np.exp(v - m).sum()))


def softmax(logits):
    """Probability vector of the logits; shift-invariant by construction."""
    v = np.asarray(logits, dtype=np.float64)
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def nesterov_step(param, lr, mu):
    """Sutskever-form Nesterov update: v <- mu*v - lr*grad; value += v.

    The caller must have evaluated the gradient at the lookahead point
    value + mu*velocity. The gradient buffer is cleared afterwards.
    """
    if lr <= 0.0:
        raise UsageError("learning rate must be positive")
    g = param.grad
    if g is None:
        g = np.zeros_like(param.data)
    if not np.all(np.isfinite(g)):
        raise TrainingError(f"non-finite gradient for parameter {param.name!r}")
    param.velocity = mu * param.velocity - lr * g
    param.data = param.data + param.velocity
    param.zero_grad()


def global_grad_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return total ** 0.5


def clip_global_norm(params, max_norm):
    """Scale all gradients down so their joint L2 norm is at most max_norm."""
    norm = global_grad_norm(params)
    if norm > max_norm > 0.0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class NesterovSgd:
    """SGD with Nesterov momentum and optional global-norm gradient clipping.

    Usage per minibatch::

        opt.begin_step()      # shift parameters to the lookahead point
        loss = forward(); loss.backward()
        opt.end_step()        # restore, clip, apply the velocity update
    """

    def __init__(self, params, lr, momentum=0.9, clip_norm=5.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self._shifted = False

    def begin_step(self):
        if self._shifted:
            raise UsageError("begin_step called twice without end_step")
        if self.momentum != 0.0:
            for p in self.params:
                p.data = p.data + self.momentum * p.velocity
        self._shifted = True

    def end_step(self):
        if not self._shifted:
            raise UsageError("end_step without begin_step")
        if self.momentum != 0.0:
            for p in self.params:
                p.data = p.data - self.momentum * p.velocity
        self._shifted = False
        if self.clip_norm is not None:
            clip_global_norm(self.params, self.clip_norm)
        for p in self.params:
            nesterov_step(p, self.lr, self.momentum)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class BatchNorm:
    """Per-channel batch normalization over [N, C] inputs.

    Train mode normalizes with the biased batch moments and maintains
    exponential running averages; eval mode is a pure function of the
    running statistics.
    """

    def __init__(self, channels, epsilon=1e-5, momentum=0.1, name="bn"):
        if epsilon <= 0.0:
            raise UsageError("epsilon must be positive")
        if not 0.0 < momentum < 1.0:
            raise UsageError("momentum must lie in (0,1)")
        self.gamma = Parameter(np.ones(channels), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels), name=f"{name}.beta")
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.epsilon = epsilon
        self.momentum = momentum
        self.mode = "train"

    def parameters(self):
        return [self.gamma, self.beta]

    def forward(self, x):
        if x.ndim != 2:
            raise UsageError("batch norm expects a [N, C] input")
        if self.mode == "train":
            return self._forward_train(x)
        return self._forward_eval(x)

    def _forward_train(self, x):
        n = x.shape[0]
        if n < 2:
            raise UsageError("train-mode batch norm needs at least 2 rows")
        mu = x.data.mean(axis=0)
        centered = x.data - mu
        var = (centered * centered).mean(axis=0)
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        xhat = centered * inv_std
        out = self.gamma.data * xhat + self.beta.data

        self.running_mean = (1.0 - self.momentum) * self.running_mean + self.momentum * mu
        self.running_var = (1.0 - self.momentum) * self.running_var + self.momentum * var

        gamma, beta = self.gamma, self.beta

        def backward(g):
            if gamma.requires_grad:
                gamma.accumulate_grad((g * xhat).sum(axis=0))
            if beta.requires_grad:
                beta.accumulate_grad(g.sum(axis=0))
            if x.requires_grad:
                gx = g * gamma.data
                dx = inv_std * (
                    gx
                    - gx.mean(axis=0)
                    - xhat * (gx * xhat).mean(axis=0)
                )
                x.accumulate_grad(dx)

        return autograd.fused(out, (x, gamma, beta), backward)

    def _forward_eval(self, x):
        inv_std = 1.0 / np.sqrt(self.running_var + self.epsilon)
        rm = self.running_mean
        out = self.gamma.data * (x.data - rm) * inv_std + self.beta.data
        gamma, beta = self.gamma, self.beta

        def backward(g):
            if gamma.requires_grad:
                gamma.accumulate_grad((g * (x.data - rm) * inv_std).sum(axis=0))
            if beta.requires_grad:
                beta.accumulate_grad(g.sum(axis=0))
            if x.requires_grad:
                x.accumulate_grad(g * gamma.data * inv_std)

        return autograd.fused(out, (x, gamma, beta), backward)


def finite_difference_grad(loss_fn, array, h=1e-5):
    """Central finite differences of a scalar function of `array`."""
    flat = array.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(array.shape)


def gradient_check(loss_fn, params, h=1e-5, floor=1e-7):
    """Compare analytic gradients of loss_fn against central differences.

    loss_fn must rebuild the computation from the current parameter
    values and return the scalar loss Tensor. Returns the maximum
    relative error over all parameter coordinates; absolute differences
    below `floor` count as zero error, since finite differences cannot
    resolve near-zero gradients beyond their own truncation noise.
    """
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [np.array(p.grad, copy=True) for p in params]

    def value():
        with autograd.no_grad():
            out = loss_fn()
        return out.item() if isinstance(out, Tensor) else float(out)

    worst = 0.0
    for p, a in zip(params, analytic):
        numeric = finite_difference_grad(value, p.data, h=h)
        diff = np.abs(a - numeric)
        denom = np.maximum(np.abs(a), np.abs(numeric))
        rel = np.where(diff <= floor, 0.0, diff / np.maximum(denom, floor))
        worst = max(worst, float(rel.max()))
        p.zero_grad()
    return worst
