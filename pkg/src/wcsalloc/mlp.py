"""Dense feed-forward network with ReLU hidden units, exact backprop, SGD.

The network is y = C_L z_{L-1} + b_L with z_l = relu(C_l z_{l-1} + b_l) for
hidden layers; the output layer is affine so the policy head can emit
unbounded means and log-deviations. Parameters are immutable-in /
new-value-out: forward/backward never mutate, sgd_step returns new params.

Checkpoint format (text, UTF-8, LF): first line is the comma-separated
layer sizes, then one float per line in layer order, weights row-major
followed by the bias, layer by layer. Floats are written with repr so the
round trip is bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrainingError

DEFAULT_GRAD_CLIP = 10.0

# grad = list of (dC, db) pairs, mirroring MlpParams.layers
GradPairs = list[tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True, eq=False)
class MlpParams:
    """Ordered (weight matrix, bias vector) pairs; layer l maps d_{l-1} -> d_l."""

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        object.__setattr__(
            self,
            "layers",
            tuple((np.asarray(C, dtype=float), np.asarray(b, dtype=float)) for C, b in self.layers),
        )
        if not self.layers:
            raise ValueError("network needs at least one layer")
        prev = self.layers[0][0].shape[1]
        for i, (C, b) in enumerate(self.layers):
            if C.ndim != 2 or b.ndim != 1:
                raise ValueError(f"layer {i}: weights must be a matrix and bias a vector")
            if C.shape != (b.shape[0], prev):
                raise ValueError(
                    f"layer {i}: expected weights {b.shape[0]}x{prev}, got {C.shape}"
                )
            if not (np.isfinite(C).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i}: parameters must be finite")
            prev = C.shape[0]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.layers[0][0].shape[1],) + tuple(C.shape[0] for C, _ in self.layers)

    @property
    def n_params(self) -> int:
        return sum(C.size + b.size for C, b in self.layers)


@dataclass(frozen=True, eq=False)
class ForwardCache:
    """Per-layer pre-activations and post-activations from one forward pass.

    post[0] is the input, post[-1] the returned output; pre[l] is the affine
    value feeding layer l+1's nonlinearity (or the output itself).
    """

    pre: tuple[np.ndarray, ...]
    post: tuple[np.ndarray, ...]


def param_count(layer_sizes) -> int:
    sizes = list(layer_sizes)
    return sum(sizes[l] * (sizes[l - 1] + 1) for l in range(1, len(sizes)))


def init_params(layer_sizes, rng: np.random.Generator) -> MlpParams:
    """Fan-balanced uniform weights in +-sqrt(6/(d_in + d_out)), zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError("layer_sizes needs at least an input and an output size")
    if any(s < 1 for s in sizes):
        raise ValueError(f"layer sizes must be >= 1, got {sizes}")
    layers = []
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (d_in + d_out))
        C = rng.uniform(-bound, bound, size=(d_out, d_in))
        layers.append((C, np.zeros(d_out)))
    return MlpParams(layers=tuple(layers))


def forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate the network; the cache feeds backward()."""
    x = np.asarray(x, dtype=float)
    d0 = params.layer_sizes[0]
    if x.shape != (d0,):
        raise ValueError(f"input must have shape ({d0},), got {x.shape}")
    pre = []
    post = [x]
    z = x
    last = len(params.layers) - 1
    for l, (C, b) in enumerate(params.layers):
        a = C @ z + b
        pre.append(a)
        z = a if l == last else np.maximum(a, 0.0)
        post.append(z)
    return z, ForwardCache(pre=tuple(pre), post=tuple(post))


def backward(params: MlpParams, cache: ForwardCache, output_grad: np.ndarray) -> GradPairs:
    """Gradient of output_grad . output with respect to every parameter.

    The ReLU subgradient at exactly 0 is taken as 0.
    """
    output_grad = np.asarray(output_grad, dtype=float)
    if output_grad.shape != cache.post[-1].shape:
        raise ValueError("output_grad must match the output shape")
    grads: list[tuple[np.ndarray, np.ndarray] | None] = [None] * len(params.layers)
    delta = output_grad
    for l in range(len(params.layers) - 1, -1, -1):
        C, _ = params.layers[l]
        grads[l] = (np.outer(delta, cache.post[l]), delta.copy())
        if l > 0:
            delta = (C.T @ delta) * (cache.pre[l - 1] > 0.0)
    return grads  # type: ignore[return-value]


def zero_grads(params: MlpParams) -> GradPairs:
    return [(np.zeros_like(C), np.zeros_like(b)) for C, b in params.layers]


def accumulate_grads(acc: GradPairs, grads: GradPairs, scale: float = 1.0) -> None:
    """acc += scale * grads, in place."""
    for (aC, ab), (gC, gb) in zip(acc, grads):
        aC += scale * gC
        ab += scale * gb


def grad_norm(grads: GradPairs) -> float:
    total = 0.0
    for gC, gb in grads:
        total += float(np.sum(gC * gC)) + float(np.sum(gb * gb))
    return float(np.sqrt(total))


def sgd_step(
    params: MlpParams,
    grads: GradPairs,
    alpha: float,
    grad_clip: float | None = DEFAULT_GRAD_CLIP,
) -> MlpParams:
    """theta <- theta - alpha * grads, with the global gradient norm clipped.

    Raises TrainingError on non-finite gradient entries.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    for gC, gb in grads:
        if not (np.isfinite(gC).all() and np.isfinite(gb).all()):
            raise TrainingError("non-finite gradient entries")
    scale = 1.0
    if grad_clip is not None:
        norm = grad_norm(grads)
        if norm > grad_clip:
            scale = grad_clip / norm
    new_layers = tuple(
        (C - alpha * scale * gC, b - alpha * scale * gb)
        for (C, b), (gC, gb) in zip(params.layers, grads)
    )
    return MlpParams(layers=new_layers)


def save_params(params: MlpParams, path) -> None:
    lines = [",".join(str(s) for s in params.layer_sizes)]
    for C, b in params.layers:
        lines.extend(repr(float(v)) for v in C.ravel())
        lines.extend(repr(float(v)) for v in b)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path) -> MlpParams:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if not lines:
        raise ValueError(f"empty checkpoint file: {path}")
    try:
        sizes = [int(s) for s in lines[0].split(",")]
    except ValueError as exc:
        raise ValueError(f"bad layer-sizes header in {path}: {lines[0]!r}") from exc
    expected = param_count(sizes)
    values = lines[1:]
    if len(values) != expected:
        raise ValueError(f"{path}: expected {expected} parameters for sizes {sizes}, got {len(values)}")
    flat = np.array([float(v) for v in values])
    layers = []
    pos = 0
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        C = flat[pos : pos + d_out * d_in].reshape(d_out, d_in)
        pos += d_out * d_in
        b = flat[pos : pos + d_out]
        pos += d_out
        layers.append((C, b))
    return MlpParams(layers=tuple(layers))
