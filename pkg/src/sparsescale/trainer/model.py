"""Feed-forward character language model with prunable linear layers.

The model reads a fixed window of ``context`` characters, concatenates
their embeddings and passes them through two tanh layers and an output
projection. Only the three weight matrices are prunable; embeddings and
biases stay dense. Everything runs in float64 with hand-written backprop.
"""

from dataclasses import dataclass

import numpy as np

from .._validation import check_count
from ..core import ModelShape

PRUNABLE = ("w1", "w2", "w_out")
TENSORS = ("embed", "w1", "b1", "w2", "b2", "w_out", "b_out")


@dataclass(frozen=True)
class TinyLMSpec:
    vocab_size: int
    context: int = 8
    embed_dim: int = 16
    hidden_dim: int = 64

    def __post_init__(self):
        for name, minimum in (("vocab_size", 2), ("context", 1), ("embed_dim", 1),
                              ("hidden_dim", 1)):
            object.__setattr__(self, name, check_count(getattr(self, name), name, minimum))

    def tensor_shapes(self):
        v, c, e, h = self.vocab_size, self.context, self.embed_dim, self.hidden_dim
        return {"embed": (v, e), "w1": (c * e, h), "b1": (h,), "w2": (h, h), "b2": (h,),
                "w_out": (h, v), "b_out": (v,)}

    @property
    def shape(self):
        sizes = {k: int(np.prod(s)) for k, s in self.tensor_shapes().items()}
        prunable = sum(sizes[k] for k in PRUNABLE)
        return ModelShape(prunable, sum(sizes.values()) - prunable)

    def with_hidden(self, hidden_dim):
        return TinyLMSpec(self.vocab_size, self.context, self.embed_dim, hidden_dim)


def hidden_for_params(spec, total_params):
    """Hidden width whose total parameter count is closest to ``total_params``.

    Ties go to the smaller width.
    """
    best = None
    h = 1
    while True:
        n = spec.with_hidden(h).shape.total_params
        gap = abs(n - total_params)
        if best is None or gap < best[0]:
            best = (gap, h)
        if n > total_params:
            return best[1]
        h += 1


class TinyLM:
    """Masked MLP language model.

    Attributes
    ----------
    params : dict of str -> ndarray
        Float64 tensors keyed by :data:`TENSORS`.
    masks : dict of str -> ndarray of bool
        One mask per prunable tensor; ``False`` marks a pruned weight.
    """

    def __init__(self, spec, rng=None, zero_output=False):
        self.spec = spec
        rng = np.random.default_rng(rng)
        shapes = spec.tensor_shapes()
        self.params = {}
        for name in TENSORS:
            shp = shapes[name]
            if name == "embed":
                w = rng.normal(0.0, 1.0, shp)
            elif name.startswith("w"):
                w = rng.normal(0.0, 1.0 / np.sqrt(shp[0]), shp)
            else:
                w = np.zeros(shp)
            self.params[name] = w
        if zero_output:
            self.params["w_out"][:] = 0.0
        self.masks = {name: np.ones(shapes[name], dtype=bool) for name in PRUNABLE}
        self.opt_state = {}

    @property
    def shape(self):
        return self.spec.shape

    @property
    def active_prunable(self):
        return int(sum(int(m.sum()) for m in self.masks.values()))

    @property
    def active_params(self):
        return self.active_prunable + self.shape.nonprunable_params

    def masked_abs_sum(self):
        """Sum of ``|w|`` over pruned positions (zero when nothing leaks)."""
        return float(sum(np.abs(self.params[k][~self.masks[k]]).sum() for k in PRUNABLE))

    def copy(self):
        other = TinyLM.__new__(TinyLM)
        other.spec = self.spec
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.masks = {k: v.copy() for k, v in self.masks.items()}
        other.opt_state = {k: {n: a.copy() for n, a in s.items()}
                           for k, s in self.opt_state.items()}
        return other

    def _check_batch(self, x, y=None):
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.spec.context:
            raise ValueError(
                f"inputs must have shape (batch, {self.spec.context}), got {x.shape}")
        if x.shape[0] == 0:
            raise ValueError("empty batch")
        if not np.issubdtype(x.dtype, np.integer):
            raise ValueError("inputs must be integer token ids")
        if x.min() < 0 or x.max() >= self.spec.vocab_size:
            raise ValueError("token id out of range")
        if y is not None:
            y = np.asarray(y)
            if y.shape != (x.shape[0],):
                raise ValueError(f"targets must have shape ({x.shape[0]},), got {y.shape}")
            if y.min() < 0 or y.max() >= self.spec.vocab_size:
                raise ValueError("target id out of range")
        return x, y

    def forward(self, x):
        """Logits for a batch of context windows, plus the activation cache."""
        x, _ = self._check_batch(x)
        p = self.params
        h0 = p["embed"][x].reshape(x.shape[0], -1)
        a1 = np.tanh(h0 @ p["w1"] + p["b1"])
        a2 = np.tanh(a1 @ p["w2"] + p["b2"])
        logits = a2 @ p["w_out"] + p["b_out"]
        return logits, (x, h0, a1, a2)

    def loss(self, x, y):
        x, y = self._check_batch(x, y)
        logits, _ = self.forward(x)
        return float(_cross_entropy(logits, y)[0])

    def loss_and_grads(self, x, y):
        """Mean cross-entropy and its gradient for every tensor (unmasked)."""
        x, y = self._check_batch(x, y)
        p = self.params
        logits, (x, h0, a1, a2) = self.forward(x)
        loss, probs = _cross_entropy(logits, y)
        b = x.shape[0]
        dlogits = probs
        dlogits[np.arange(b), y] -= 1.0
        dlogits /= b
        g = {"w_out": a2.T @ dlogits, "b_out": dlogits.sum(axis=0)}
        dz2 = (dlogits @ p["w_out"].T) * (1.0 - a2 ** 2)
        g["w2"] = a1.T @ dz2
        g["b2"] = dz2.sum(axis=0)
        dz1 = (dz2 @ p["w2"].T) * (1.0 - a1 ** 2)
        g["w1"] = h0.T @ dz1
        g["b1"] = dz1.sum(axis=0)
        dh0 = (dz1 @ p["w1"].T).reshape(b, self.spec.context, self.spec.embed_dim)
        g["embed"] = np.zeros_like(p["embed"])
        np.add.at(g["embed"], x, dh0)
        return float(loss), g


def _cross_entropy(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(z)
    total = expz.sum(axis=1, keepdims=True)
    logp = z - np.log(total)
    loss = -logp[np.arange(len(y)), y].mean()
    return loss, expz / total


def apply_masks(model):
    for k in PRUNABLE:
        model.params[k] *= model.masks[k]


def global_magnitude_prune(model, target_remaining):
    """Keep the ``target_remaining`` largest-magnitude active prunable weights.

    Ranking is global across all prunable tensors, flattened in
    :data:`PRUNABLE` order then row-major; equal magnitudes keep the lower
    global index. Returns the new masks (also installed on the model).
    """
    target_remaining = check_count(target_remaining, "target_remaining", 0)
    flat_w = np.concatenate([model.params[k].ravel() for k in PRUNABLE])
    flat_m = np.concatenate([model.masks[k].ravel() for k in PRUNABLE])
    active = np.flatnonzero(flat_m)
    if target_remaining > active.size:
        raise ValueError(
            f"cannot keep {target_remaining} weights, only {active.size} are active")
    order = active[np.lexsort((active, -np.abs(flat_w[active])))]
    keep = np.zeros_like(flat_m)
    keep[order[:target_remaining]] = True
    offset = 0
    for k in PRUNABLE:
        size = model.masks[k].size
        model.masks[k] = keep[offset:offset + size].reshape(model.masks[k].shape)
        offset += size
    apply_masks(model)
    for k, state in model.opt_state.items():
        if k in model.masks:
            state["m"] *= model.masks[k]
            state["v"] *= model.masks[k]
    return model.masks


class SGD:
    name = "sgd"

    def update(self, model, grads, lr):
        for k, g in grads.items():
            if k in model.masks:
                g = g * model.masks[k]
            model.params[k] -= lr * g


class Adam:
    """Adam whose moments are zeroed on pruned positions."""

    name = "adam"

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def update(self, model, grads, lr):
        for k, g in grads.items():
            if k in model.masks:
                g = g * model.masks[k]
            st = model.opt_state.setdefault(
                k, {"m": np.zeros_like(g), "v": np.zeros_like(g), "t": np.zeros(1)})
            st["t"] += 1
            st["m"] *= self.beta1
            st["m"] += (1 - self.beta1) * g
            st["v"] *= self.beta2
            st["v"] += (1 - self.beta2) * g * g
            t = st["t"][0]
            m_hat = st["m"] / (1 - self.beta1 ** t)
            v_hat = st["v"] / (1 - self.beta2 ** t)
            step = lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if k in model.masks:
                step *= model.masks[k]
            model.params[k] -= step


def make_optimizer(name):
    if name == "sgd":
        return SGD()
    if name == "adam":
        return Adam()
    raise ValueError(f"unknown optimizer {name!r}; use 'sgd' or 'adam'")


def train_step(model, batch, lr, optimizer=None):
    """One masked gradient update on ``batch = (inputs, targets)``; returns the batch loss."""
    x, y = batch
    if lr < 0 or not np.isfinite(lr):
        raise ValueError(f"learning rate must be finite and >= 0, got {lr}")
    loss, grads = model.loss_and_grads(x, y)
    (optimizer or SGD()).update(model, grads, lr)
    apply_masks(model)
    return loss


def eval_loss(model, data, batch_size=1024):
    """Mean next-token cross-entropy over every window of ``data``.

    ``data`` is an encoded 1-D token array; each position from ``context``
    on is predicted from the preceding window. Chunks are visited in a fixed
    order so the result is deterministic.
    """
    data = np.asarray(data)
    c = model.spec.context
    n = data.size - c
    if n <= 0:
        raise ValueError("evaluation split is empty (needs more than `context` tokens)")
    windows = np.lib.stride_tricks.sliding_window_view(data[:-1], c)
    targets = data[c:]
    total = 0.0
    for start in range(0, n, batch_size):
        x = windows[start:start + batch_size]
        y = targets[start:start + batch_size]
        total += model.loss(x, y) * len(y)
    return total / n
