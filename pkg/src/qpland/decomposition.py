"""Parameterized orthogonal decomposition f = -grad V + g and the derived
landscape U = 2V - C.

``V(x) = Vhat(x - center) + |x - center|^2`` where Vhat is a tanh network:
the quadratic term makes V radially unbounded no matter what the (globally
bounded) network does, and the tanh choice keeps V smooth. The rotational
component g is a second network with configurable activation. Models are
immutable after training; every evaluation here is pure.
"""

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import nets
from .errors import ConfigError, FormatError
from .nets import Activation, Mlp

COSINE_NORM_FLOOR = 1e-12

CHECKPOINT_VERSION = 1


@dataclass
class DecompositionModel:
    potential_net: Mlp  # scalar output, tanh
    rotational_net: Mlp  # d outputs
    center: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        d = self.potential_net.input_dim
        if self.potential_net.output_dim != 1:
            raise ConfigError(["potential net must have scalar output"])
        if self.potential_net.activation is not Activation.TANH:
            raise ConfigError(["potential net must use tanh (bounded gradient keeps "
                               "the quadratic term dominant at infinity)"])
        if self.rotational_net.input_dim != d or self.rotational_net.output_dim != d:
            raise ConfigError(["rotational net must map R^d -> R^d matching the potential net"])
        if self.center.shape != (d,):
            raise ConfigError([f"center must have shape ({d},)"])

    @property
    def dim(self):
        return self.potential_net.input_dim

    def centered(self, x):
        return np.asarray(x, dtype=np.float64) - self.center

    def potential(self, x):
        xt = self.centered(x)
        vhat = nets.forward(self.potential_net, xt)
        return vhat[..., 0] + np.square(xt).sum(axis=-1)

    def potential_gradient(self, x):
        xt = self.centered(x)
        return nets.input_gradient(self.potential_net, xt) + 2.0 * xt

    def rotation(self, x):
        return nets.forward(self.rotational_net, self.centered(x))

    def drift(self, x):
        return -self.potential_gradient(x) + self.rotation(x)

    def copy(self):
        return DecompositionModel(
            Mlp(self.potential_net.input_dim, self.potential_net.hidden_widths, 1,
                Activation.TANH, self.potential_net.params.copy()),
            Mlp(self.rotational_net.input_dim, self.rotational_net.hidden_widths,
                self.rotational_net.output_dim, self.rotational_net.activation,
                self.rotational_net.params.copy()),
            self.center.copy(),
        )


@dataclass
class AnalyticDecomposition:
    """Closed-form decomposition (exact benchmark fixtures). Satisfies the
    same evaluation surface as DecompositionModel, minus trainability."""

    dim: int
    potential_fn: Callable
    grad_v_fn: Callable
    g_fn: Callable

    def potential(self, x):
        return self.potential_fn(np.asarray(x, dtype=np.float64))

    def potential_gradient(self, x):
        return self.grad_v_fn(np.asarray(x, dtype=np.float64))

    def rotation(self, x):
        return self.g_fn(np.asarray(x, dtype=np.float64))

    def drift(self, x):
        return -self.potential_gradient(x) + self.rotation(x)

    @classmethod
    def from_system(cls, system):
        if system.exact_grad_v is None:
            raise ConfigError([f"system '{system.name}' has no exact decomposition"])
        return cls(system.dim, system.exact_potential, system.exact_grad_v, system.exact_g)


def init_model(dim, hidden_width, rot_activation, seed):
    """Fresh model: two 2-hidden-layer nets, center zero until fitted."""
    if dim < 1 or hidden_width < 1:
        raise ConfigError([f"init_model: dim and hidden_width must be positive, "
                           f"got ({dim}, {hidden_width})"])
    seqs = np.random.SeedSequence(seed).spawn(2)
    pot = nets.init_mlp(dim, (hidden_width, hidden_width), 1, Activation.TANH,
                        np.random.default_rng(seqs[0]))
    rot = nets.init_mlp(dim, (hidden_width, hidden_width), dim, Activation(rot_activation),
                        np.random.default_rng(seqs[1]))
    return DecompositionModel(pot, rot, np.zeros(dim))


def fit_center(model, states):
    model.center = np.asarray(states, dtype=np.float64).mean(axis=0)
    return model


# -- spec-level operations (thin wrappers; any decomposition-like object works)

def potential(model, x):
    return model.potential(x)


def drift(model, x):
    return model.drift(x)


def safe_cosine(u, g):
    """Cosine of the angle between rows of u and g; 0 where either norm is
    below the degeneracy floor (attractor neighborhoods have grad V -> 0)."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    g = np.atleast_2d(np.asarray(g, dtype=np.float64))
    nu = np.linalg.norm(u, axis=-1)
    ng = np.linalg.norm(g, axis=-1)
    ok = (nu >= COSINE_NORM_FLOOR) & (ng >= COSINE_NORM_FLOOR)
    denom = np.where(ok, nu * ng, 1.0)
    return np.where(ok, (u * g).sum(axis=-1) / denom, 0.0)


def orthogonality_cosine(model, x):
    x = np.asarray(x, dtype=np.float64)
    cos = safe_cosine(model.potential_gradient(x), model.rotation(x))
    return cos[0] if x.ndim == 1 else cos


@dataclass
class Landscape:
    model: object
    offset_c: float

    def value(self, x):
        return 2.0 * self.model.potential(x) - self.offset_c


def fit_offset(model, grid_points):
    """Pin C = 2 min V over the declared evaluation grid, so min U = 0 there."""
    vmin = np.inf
    for chunk in _chunks(np.asarray(grid_points, dtype=np.float64)):
        vmin = min(vmin, model.potential(chunk).min())
    return Landscape(model, 2.0 * float(vmin))


def landscape_value(landscape, x):
    return landscape.value(x)


def vhat_bound(model):
    """A rigorous bound on |Vhat|: tanh hidden activations lie in [-1, 1], so
    the output is at most the l1 norm of the last layer's weights plus bias."""
    w, b = model.potential_net.layers()[-1]
    return float(np.abs(w).sum() + np.abs(b).sum())


# -- training-path plumbing: taped drift evaluation and its VJPs ------------

@dataclass
class ModelGrads:
    potential: np.ndarray
    rotational: np.ndarray

    @classmethod
    def zeros_like(cls, model):
        return cls(np.zeros_like(model.potential_net.params),
                   np.zeros_like(model.rotational_net.params))

    def add_scaled(self, other, scale=1.0):
        self.potential += scale * other.potential
        self.rotational += scale * other.rotational
        return self


@dataclass
class DriftTape:
    xt: np.ndarray
    pot_tape: nets.Tape
    rot_tape: nets.Tape
    grad_v: np.ndarray  # grad V (quadratic included) at the tape points
    g: np.ndarray


def drift_with_tape(model, x):
    xt = model.centered(np.atleast_2d(x))
    _, pot_tape = nets.forward_tape(model.potential_net, xt)
    g, rot_tape = nets.forward_tape(model.rotational_net, xt)
    grad_v = _scalar_grad(model.potential_net, pot_tape) + 2.0 * xt
    tape = DriftTape(xt, pot_tape, rot_tape, grad_v, g)
    return g - grad_v, tape


def drift_vjp(model, tape, cotangent, grads):
    """Accumulate d(sum_b c_b . f(x_b))/dtheta into ``grads``; return the
    input adjoint (needed when the evaluation point depends on theta)."""
    c = np.asarray(cotangent, dtype=np.float64)
    gp, x_adj_pot = nets.grad_backprop(model.potential_net, tape.pot_tape, -c)
    gr, x_adj_rot = nets.value_backprop(model.rotational_net, tape.rot_tape, c)
    grads.potential += gp
    grads.rotational += gr
    return x_adj_pot - 2.0 * c + x_adj_rot


def potential_gradient_with_tape(model, x):
    xt = model.centered(np.atleast_2d(x))
    _, pot_tape = nets.forward_tape(model.potential_net, xt)
    return _scalar_grad(model.potential_net, pot_tape) + 2.0 * xt, pot_tape


def potential_gradient_vjp(model, tape, cotangent, grads):
    c = np.asarray(cotangent, dtype=np.float64)
    gp, x_adj = nets.grad_backprop(model.potential_net, tape, c)
    grads.potential += gp
    return x_adj + 2.0 * c


def rotation_vjp(model, tape, cotangent, grads):
    gr, x_adj = nets.value_backprop(model.rotational_net, tape.rot_tape, cotangent)
    grads.rotational += gr
    return x_adj


def _scalar_grad(net, tape):
    d1 = nets._ACT[net.activation][1]
    layers = net.layers()
    return nets._scalar_gradient_from_tape(layers, tape, d1, layers[-1][0][0])


# -- checkpoint persistence -------------------------------------------------

def save_checkpoint(path, model, offset_c=None, training_config_echo=None):
    payload = {
        "version": CHECKPOINT_VERSION,
        "dim": model.dim,
        "hidden_width": model.potential_net.hidden_widths[0],
        "rot_activation": model.rotational_net.activation.value,
        "center": model.center.tolist(),
        "potential_params": model.potential_net.params.tolist(),
        "rotational_params": model.rotational_net.params.tolist(),
        "offset_C": offset_c,
        "training_config_echo": training_config_echo or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
    return payload


def load_checkpoint(path):
    """Returns (model, offset_C or None, training_config_echo)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as err:
        raise FormatError(f"checkpoint {path}: not valid JSON ({err})") from err
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint {path}: missing or unsupported version "
                          f"(want {CHECKPOINT_VERSION})")
    try:
        d = int(payload["dim"])
        w = int(payload["hidden_width"])
        model = DecompositionModel(
            Mlp(d, (w, w), 1, Activation.TANH,
                np.array(payload["potential_params"], dtype=np.float64)),
            Mlp(d, (w, w), d, Activation(payload["rot_activation"]),
                np.array(payload["rotational_params"], dtype=np.float64)),
            np.array(payload["center"], dtype=np.float64),
        )
    except KeyError as err:
        raise FormatError(f"checkpoint {path}: missing field {err}") from err
    offset = payload.get("offset_C")
    return model, (None if offset is None else float(offset)), payload.get("training_config_echo", {})


def _chunks(arr, size=200_000):
    for i in range(0, len(arr), size):
        yield arr[i : i + size]
