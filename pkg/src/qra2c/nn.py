"""Dense feed-forward networks with hand-written backprop, Adam and gradient clipping.

Everything is float64. A network is a :class:`ParameterSet` (one MLP) or a
``dict`` of them (e.g. trunk + heads); the optimizer helpers accept either.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np

ACTIVATIONS = ("relu", "linear", "softmax-logits")


class ConfigurationError(ValueError):
    """Bad shapes or hyperparameters supplied by the caller."""


class NumericError(FloatingPointError):
    """Non-finite values where finite ones are required."""


@dataclass(frozen=True)
class LayerSpec:
    input_width: int
    output_width: int
    activation: str = "relu"

    def __post_init__(self):
        if self.input_width < 1 or self.output_width < 1:
            raise ConfigurationError(f"layer widths must be >= 1, got {self}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")


@dataclass
class ParameterSet:
    """Ordered (weight[out, in], bias[out]) pairs plus one activation per layer."""

    weights: list
    biases: list
    activations: tuple

    def __post_init__(self):
        self.activations = tuple(self.activations)
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ConfigurationError("weights, biases and activations differ in length")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ConfigurationError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ConfigurationError(f"layer {i} input width {w.shape[1]} does not chain")
        for a in self.activations[:-1]:
            if a == "softmax-logits":
                raise ConfigurationError("softmax-logits is only allowed on the final layer")

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_width(self) -> int:
        return self.weights[-1].shape[0]

    def specs(self) -> list[LayerSpec]:
        return [LayerSpec(w.shape[1], w.shape[0], a)
                for w, a in zip(self.weights, self.activations)]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ParameterSet":
        return ParameterSet([fn(w) for w in self.weights], [fn(b) for b in self.biases],
                            self.activations)

    def copy(self) -> "ParameterSet":
        return self.map(np.array)


# Gradients have exactly the structure of the parameters they belong to.
GradientSet = ParameterSet
Tree = Union[ParameterSet, Mapping[str, "Tree"]]


def init_params(specs: Sequence[LayerSpec], rng: np.random.Generator) -> ParameterSet:
    """Glorot-uniform weights, zero biases."""
    specs = list(specs)
    for prev, nxt in zip(specs, specs[1:]):
        if prev.output_width != nxt.input_width:
            raise ConfigurationError(f"layer chain broken between {prev} and {nxt}")
    weights, biases = [], []
    for s in specs:
        limit = np.sqrt(6.0 / (s.input_width + s.output_width))
        weights.append(rng.uniform(-limit, limit, size=(s.output_width, s.input_width)))
        biases.append(np.zeros(s.output_width))
    return ParameterSet(weights, biases, tuple(s.activation for s in specs))


def mlp_specs(input_width: int, hidden: Sequence[int], output_width: int | None = None,
              output_activation: str = "linear") -> list[LayerSpec]:
    widths = [input_width, *hidden]
    specs = [LayerSpec(a, b, "relu") for a, b in zip(widths, widths[1:])]
    if output_width is not None:
        specs.append(LayerSpec(widths[-1], output_width, output_activation))
    return specs


@dataclass
class Cache:
    """Per-layer inputs and pre-activations from one forward pass."""

    params_id: int
    inputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)
    squeeze: bool = False


def forward(params: ParameterSet, x: np.ndarray) -> tuple[np.ndarray, Cache]:
    """Run ``x`` (shape ``(in,)`` or ``(batch, in)``) through the network."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != params.input_width:
        raise ConfigurationError(
            f"input width {x.shape[-1] if x.ndim else 0} does not match network input {params.input_width}")
    cache = Cache(id(params), squeeze=squeeze)
    for w, b, act in zip(params.weights, params.biases, params.activations):
        cache.inputs.append(h)
        z = h @ w.T + b
        cache.preacts.append(z)
        h = np.maximum(z, 0.0) if act == "relu" else z
    return (h[0] if squeeze else h), cache


def backward(params: ParameterSet, cache: Cache, output_grad: np.ndarray,
             return_input_grad: bool = False):
    """Exact gradient of a loss w.r.t. ``params`` given dloss/doutput.

    With ``return_input_grad`` the gradient w.r.t. the network input is returned
    as well, so networks can be chained (trunk -> heads).
    """
    if cache.params_id != id(params) or len(cache.inputs) != len(params.weights):
        raise ValueError("cache was not produced by a forward pass of these parameters")
    g = np.asarray(output_grad, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.preacts[-1].shape:
        raise ConfigurationError(f"output_grad shape {g.shape} != output {cache.preacts[-1].shape}")
    n = len(params.weights)
    gw, gb = [None] * n, [None] * n
    for i in reversed(range(n)):
        if params.activations[i] == "relu":
            g = g * (cache.preacts[i] > 0.0)
        gw[i] = g.T @ cache.inputs[i]
        gb[i] = g.sum(axis=0)
        if i or return_input_grad:
            g = g @ params.weights[i]
    grads = ParameterSet(gw, gb, params.activations)
    if return_input_grad:
        return grads, (g[0] if cache.squeeze else g)
    return grads


# -- tree helpers ---------------------------------------------------------

def tree_leaves(tree: Tree) -> list[np.ndarray]:
    if isinstance(tree, ParameterSet):
        return tree.arrays()
    out = []
    for k in sorted(tree):
        out.extend(tree_leaves(tree[k]))
    return out


def tree_map(fn: Callable, tree: Tree, *rest: Tree) -> Tree:
    if isinstance(tree, ParameterSet):
        return ParameterSet(
            [fn(w, *(r.weights[i] for r in rest)) for i, w in enumerate(tree.weights)],
            [fn(b, *(r.biases[i] for r in rest)) for i, b in enumerate(tree.biases)],
            tree.activations)
    if any(set(r) != set(tree) for r in rest):
        raise ConfigurationError("parameter trees have different keys")
    return {k: tree_map(fn, tree[k], *(r[k] for r in rest)) for k in tree}


def zeros_like(tree: Tree) -> Tree:
    return tree_map(np.zeros_like, tree)


def global_norm(tree: Tree) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in tree_leaves(tree))))


def clip_global_norm(grads: Tree, max_norm: float) -> Tree:
    """Rescale so the joint L2 norm of all entries is at most ``max_norm``."""
    if not max_norm > 0:
        raise ConfigurationError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise NumericError("non-finite gradient entries")
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    clipped = tree_map(lambda a: a * scale, grads)
    # Rounding can leave the norm a hair above max_norm; one more shrink fixes it
    # and makes clipping idempotent.
    while global_norm(clipped) > max_norm:
        scale = np.nextafter(scale, 0.0)
        clipped = tree_map(lambda a: a * scale, grads)
    return clipped


@dataclass
class AdamState:
    first_moment: Tree
    second_moment: Tree
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: Tree, **kw) -> "AdamState":
        return cls(zeros_like(params), zeros_like(params), 0, **kw)


def adam_step(params: Tree, grads: Tree, state: AdamState, lr: float) -> tuple[Tree, AdamState]:
    """One bias-corrected Adam update; returns new params and new state."""
    if not lr > 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    b1, b2, eps = state.beta1, state.beta2, state.eps
    t = state.step_count + 1
    m = tree_map(lambda m_, g: b1 * m_ + (1.0 - b1) * g, state.first_moment, grads)
    v = tree_map(lambda v_, g: b2 * v_ + (1.0 - b2) * g * g, state.second_moment, grads)
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new = tree_map(lambda p, m_, v_: p - lr * (m_ / c1) / (np.sqrt(v_ / c2) + eps), params, m, v)
    return new, AdamState(m, v, t, b1, b2, eps)


class Adam:
    """Stateful convenience wrapper used by the training loops."""

    def __init__(self, params: Tree, lr: float, **kw):
        self.lr = lr
        self.state = AdamState.zeros(params, **kw)

    def step(self, params: Tree, grads: Tree) -> Tree:
        params, self.state = adam_step(params, grads, self.state, self.lr)
        return params


def gradient_check(params: Tree, loss_fn: Callable[[Tree], tuple[float, Tree]],
                   eps: float = 1e-5, max_entries: int | None = None,
                   rng: np.random.Generator | None = None) -> float:
    """Max relative error between ``loss_fn``'s analytic gradient and central differences.

    ``loss_fn(params)`` must return ``(loss, grads)``. ``max_entries`` samples a
    random subset of coordinates for large networks.
    """
    _, analytic = loss_fn(params)
    work = tree_map(np.array, params)
    leaves = tree_leaves(work)
    grad_leaves = tree_leaves(analytic)
    coords = [(li, idx) for li, a in enumerate(leaves) for idx in np.ndindex(a.shape)]
    if max_entries is not None and len(coords) > max_entries:
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(coords), size=max_entries, replace=False)
        coords = [coords[i] for i in sorted(pick)]
    worst = 0.0
    for li, idx in coords:
        a = leaves[li]
        orig = a[idx]
        a[idx] = orig + eps
        up = loss_fn(work)[0]
        a[idx] = orig - eps
        down = loss_fn(work)[0]
        a[idx] = orig
        numeric = (up - down) / (2 * eps)
        exact = grad_leaves[li][idx]
        err = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
