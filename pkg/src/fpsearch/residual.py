"""Residual (shortcut-connection) layer stack at toy scale, 64-bit throughout.

Each layer computes ``x_next = H(x) + shortcut(x)`` where H is a dense map
followed by an elementwise nonlinearity and the shortcut is either the
identity (dims must match) or a learned projection. The point of this module
is the additive gradient algebra of the shortcut path: backpropagation
through a stack decomposes into a direct term plus one additive path term
per layer, which :func:`gradient_decomposition` makes explicit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IDENTITY = "identity"
PROJECTION = "projection"


def _nonlin(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "linear":
        return z
    raise ValueError(f"unknown nonlinearity: {kind!r}")


def _nonlin_deriv(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if kind == "linear":
        return np.ones_like(z)
    raise ValueError(f"unknown nonlinearity: {kind!r}")


@dataclass
class ResidualLayer:
    """One residual layer: H(x) = nonlin(W x + b), plus identity or P x."""

    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    shortcut_kind: str = IDENTITY
    projection: np.ndarray | None = None  # (out_dim, in_dim) when projection
    nonlinearity: str = "tanh"

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        out_dim, in_dim = self.weight.shape
        if self.bias.shape != (out_dim,):
            raise ValueError("bias shape does not match weight rows")
        if self.shortcut_kind == IDENTITY:
            if in_dim != out_dim:
                raise ValueError(
                    "identity shortcut requires matching input/output dims, "
                    f"got {in_dim} -> {out_dim}"
                )
            if self.projection is not None:
                raise ValueError("identity shortcut must not carry a projection")
        elif self.shortcut_kind == PROJECTION:
            if self.projection is None:
                raise ValueError("projection shortcut requires a matrix")
            self.projection = np.asarray(self.projection, dtype=np.float64)
            if self.projection.shape != (out_dim, in_dim):
                raise ValueError("projection shape does not match layer dims")
        else:
            raise ValueError(f"unknown shortcut kind: {self.shortcut_kind!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class ResidualStack:
    layers: list[ResidualLayer] = field(default_factory=list)

    def __post_init__(self) -> None:
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim


@dataclass
class LayerGradients:
    weight: np.ndarray
    bias: np.ndarray
    projection: np.ndarray | None


@dataclass
class GradientReport:
    """Additive decomposition of the input gradient of a stack.

    ``total_gradient`` reconstructs the gradient at the stack input as
    ``direct_term`` (the unit shortcut path applied to the upstream
    gradient) plus one ``path_terms`` entry per layer. ``max_abs_residual``
    is the largest absolute difference against the gradient computed by
    :func:`backward` over the same stack.
    """

    total_gradient: np.ndarray
    direct_term: np.ndarray
    path_terms: list[np.ndarray]
    max_abs_residual: float


def forward(stack: ResidualStack, x: np.ndarray) -> list[np.ndarray]:
    """Run the stack, returning every activation from input to output."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (stack.input_dim,):
        raise ValueError(
            f"input has shape {x.shape}, stack expects ({stack.input_dim},)"
        )
    activations = [x]
    for layer in stack.layers:
        z = layer.weight @ activations[-1] + layer.bias
        h = _nonlin(layer.nonlinearity, z)
        if layer.shortcut_kind == IDENTITY:
            shortcut = activations[-1]
        else:
            shortcut = layer.projection @ activations[-1]
        activations.append(h + shortcut)
    return activations


def backward(
    stack: ResidualStack,
    activations: list[np.ndarray],
    upstream_gradient: np.ndarray,
) -> tuple[list[np.ndarray], list[LayerGradients]]:
    """Backpropagate through the stack.

    Returns the gradient of the loss w.r.t. every activation (same length
    and order as ``activations``) and per-layer parameter gradients.
    """
    if len(activations) != len(stack.layers) + 1:
        raise ValueError("activations do not match stack depth")
    g = np.asarray(upstream_gradient, dtype=np.float64)
    if g.shape != (stack.output_dim,):
        raise ValueError(
            f"upstream gradient has shape {g.shape}, stack output is "
            f"({stack.output_dim},)"
        )

    input_grads: list[np.ndarray] = [np.empty(0)] * (len(stack.layers) + 1)
    layer_grads: list[LayerGradients | None] = [None] * len(stack.layers)
    input_grads[-1] = g
    for i in range(len(stack.layers) - 1, -1, -1):
        layer = stack.layers[i]
        x = activations[i]
        g_out = input_grads[i + 1]
        z = layer.weight @ x + layer.bias
        dz = _nonlin_deriv(layer.nonlinearity, z) * g_out
        d_weight = np.outer(dz, x)
        d_bias = dz
        if layer.shortcut_kind == IDENTITY:
            d_proj = None
            g_in = layer.weight.T @ dz + g_out
        else:
            d_proj = np.outer(g_out, x)
            g_in = layer.weight.T @ dz + layer.projection.T @ g_out
        layer_grads[i] = LayerGradients(d_weight, d_bias, d_proj)
        input_grads[i] = g_in
    return input_grads, layer_grads  # type: ignore[return-value]


def gradient_decomposition(
    stack: ResidualStack, x: np.ndarray, upstream_gradient: np.ndarray
) -> GradientReport:
    """Split the input gradient into the unit path and per-layer path terms.

    Only valid for identity shortcuts, where the layer Jacobian is
    ``1 + dH/dx`` and the product across layers expands into a sum of path
    contributions on top of the upstream gradient itself.
    """
    for layer in stack.layers:
        if layer.shortcut_kind != IDENTITY:
            raise ValueError(
                "gradient decomposition requires identity shortcuts throughout"
            )
    activations = forward(stack, x)
    g = np.asarray(upstream_gradient, dtype=np.float64)
    if g.shape != (stack.output_dim,):
        raise ValueError("upstream gradient does not match stack output dim")

    # sensitivity[i] = d x^i / d x^0; path i contributes J_i @ sensitivity[i].
    n = stack.input_dim
    sensitivity = np.eye(n)
    path_matrices: list[np.ndarray] = []
    for layer, x_i in zip(stack.layers, activations[:-1]):
        z = layer.weight @ x_i + layer.bias
        jacobian = _nonlin_deriv(layer.nonlinearity, z)[:, None] * layer.weight
        term = jacobian @ sensitivity
        path_matrices.append(term)
        sensitivity = sensitivity + term

    direct = g.copy()
    path_terms = [m.T @ g for m in path_matrices]
    total = direct + sum(path_terms) if path_terms else direct
    reference = backward(stack, activations, g)[0][0]
    residual = float(np.max(np.abs(total - reference))) if total.size else 0.0
    return GradientReport(
        total_gradient=total,
        direct_term=direct,
        path_terms=path_terms,
        max_abs_residual=residual,
    )


def zero_stack(
    dims: list[int], nonlinearity: str = "tanh"
) -> ResidualStack:
    """Stack with all-zero parameters (H = 0; projections zero where needed)."""
    layers = []
    for din, dout in zip(dims, dims[1:]):
        kind = IDENTITY if din == dout else PROJECTION
        layers.append(
            ResidualLayer(
                weight=np.zeros((dout, din)),
                bias=np.zeros(dout),
                shortcut_kind=kind,
                projection=None if kind == IDENTITY else np.zeros((dout, din)),
                nonlinearity=nonlinearity,
            )
        )
    return ResidualStack(layers)


def random_stack(
    dims: list[int],
    rng: np.random.Generator,
    nonlinearity: str = "tanh",
    scale: float | None = None,
) -> ResidualStack:
    """Randomly initialized stack; identity shortcuts wherever dims allow."""
    layers = []
    for din, dout in zip(dims, dims[1:]):
        s = scale if scale is not None else 1.0 / np.sqrt(din)
        kind = IDENTITY if din == dout else PROJECTION
        layers.append(
            ResidualLayer(
                weight=rng.normal(0.0, s, size=(dout, din)),
                bias=np.zeros(dout),
                shortcut_kind=kind,
                projection=None if kind == IDENTITY else rng.normal(0.0, s, size=(dout, din)),
                nonlinearity=nonlinearity,
            )
        )
    return ResidualStack(layers)
