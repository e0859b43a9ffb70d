"""Benchmark dynamical systems: right-hand sides, initial-state samplers,
and exact reference quantities where they are known.

All right-hand sides are vectorized over a leading batch axis. Exact
decompositions (grad V, g) are provided for the two low-dimensional systems
whose quasipotential is known in closed form; the discretized
Ginzburg-Landau chain carries its energy instead (the quasipotential there
is twice the energy up to a constant).
"""

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, SamplingError
from .integrators import OdeField, rk4_step

SYSTEM_NAMES = ("bistable3d", "limitcycle2d", "yeast3d", "ginzburg_landau", "brusselator")

YEAST_PARAM_NAMES = ("j1", "j2", "j3", "k1", "k2", "k3", "ki", "ks", "ka1", "ka2", "a0")


@dataclass(frozen=True)
class ExactQuasipotential:
    system: str
    fn: Callable
    validity: str

    def __call__(self, x):
        return self.fn(x)


@dataclass(frozen=True)
class SystemSpec:
    name: str
    dim: int
    params: dict
    domain: Optional[np.ndarray]  # (d, 2) sampling box, None for mode-based samplers
    field: OdeField
    sample: Callable  # (rng, n) -> (n, d)
    exact_u: Optional[ExactQuasipotential] = None
    exact_potential: Optional[Callable] = None
    exact_grad_v: Optional[Callable] = None
    exact_g: Optional[Callable] = None
    energy: Optional[Callable] = None
    energy_gradient: Optional[Callable] = None
    extras: dict = dc_field(default_factory=dict)


# --------------------------------------------------------------------------
# Example 1: bistable system in 3-d, attractors at (+-1, 0, 0)

def rhs_bistable3d(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    c = x[..., 0] ** 3 - x[..., 0]
    out[..., 0] = -2.0 * c - (x[..., 1] + x[..., 2])
    out[..., 1] = -x[..., 1] + 2.0 * c
    out[..., 2] = -x[..., 2] + 2.0 * c
    return out


def exact_u_bistable3d(x):
    x = np.asarray(x, dtype=np.float64)
    return (1.0 - x[..., 0] ** 2) ** 2 + x[..., 1] ** 2 + x[..., 2] ** 2


def exact_decomposition_bistable3d(x):
    """(grad V, g) with V = U/2; -grad V + g reproduces the drift exactly."""
    x = np.asarray(x, dtype=np.float64)
    c = x[..., 0] ** 3 - x[..., 0]
    grad_v = np.stack([2.0 * c, x[..., 1], x[..., 2]], axis=-1)
    g = np.stack([-(x[..., 1] + x[..., 2]), 2.0 * c, 2.0 * c], axis=-1)
    return grad_v, g


def _make_bistable3d(params):
    if params:
        raise ConfigError([f"bistable3d takes no parameters, got {sorted(params)}"])
    domain = np.array([[-2.0, 2.0], [-1.5, 1.5], [-1.5, 1.5]])

    def sample(rng, n):
        return _uniform_box(rng, n, domain)

    return SystemSpec(
        name="bistable3d",
        dim=3,
        params={},
        domain=domain,
        field=OdeField(3, rhs_bistable3d),
        sample=sample,
        exact_u=ExactQuasipotential("bistable3d", exact_u_bistable3d,
                                    "basins of (+-1,0,0); separatrix excluded"),
        exact_potential=lambda x: 0.5 * exact_u_bistable3d(x),
        exact_grad_v=lambda x: exact_decomposition_bistable3d(x)[0],
        exact_g=lambda x: exact_decomposition_bistable3d(x)[1],
    )


# --------------------------------------------------------------------------
# Example 2: limit cycle on an ellipse, in 2-d

def _lc_q(x, a, b):
    p = x[..., 0] - a
    s = x[..., 1] - b
    return p, s, p * p + p * s + s * s


def exact_u_limitcycle2d(x, a=1.0, b=2.5):
    _, _, q = _lc_q(np.asarray(x, dtype=np.float64), a, b)
    return (q - 0.5) ** 2


def rhs_limitcycle2d(x, a=1.0, b=2.5):
    x = np.asarray(x, dtype=np.float64)
    p, s, q = _lc_q(x, a, b)
    out = np.empty_like(x)
    out[..., 0] = -(q - 0.5) * (2.0 * p + s) - 2.0 * (p + 2.0 * s)
    out[..., 1] = -(q - 0.5) * (p + 2.0 * s) + 2.0 * (2.0 * p + s)
    return out


def exact_decomposition_limitcycle2d(x, a=1.0, b=2.5):
    x = np.asarray(x, dtype=np.float64)
    p, s, q = _lc_q(x, a, b)
    grad_v = np.stack([(q - 0.5) * (2.0 * p + s), (q - 0.5) * (p + 2.0 * s)], axis=-1)
    g = np.stack([-2.0 * (p + 2.0 * s), 2.0 * (2.0 * p + s)], axis=-1)
    return grad_v, g


def _make_limitcycle2d(params):
    known = {"a": 1.0, "b": 2.5}
    bad = sorted(set(params) - set(known))
    if bad:
        raise ConfigError([f"limitcycle2d: unknown parameter '{k}'" for k in bad])
    known.update(params)
    a, b = known["a"], known["b"]
    domain = np.array([[-0.5, 2.5], [1.0, 4.0]])

    def sample(rng, n):
        return _uniform_box(rng, n, domain)

    return SystemSpec(
        name="limitcycle2d",
        dim=2,
        params=known,
        domain=domain,
        field=OdeField(2, lambda x: rhs_limitcycle2d(x, a, b)),
        sample=sample,
        exact_u=ExactQuasipotential("limitcycle2d", lambda x: exact_u_limitcycle2d(x, a, b),
                                    "whole plane (single limit-cycle attractor)"),
        exact_potential=lambda x: 0.5 * exact_u_limitcycle2d(x, a, b),
        exact_grad_v=lambda x: exact_decomposition_limitcycle2d(x, a, b)[0],
        exact_g=lambda x: exact_decomposition_limitcycle2d(x, a, b)[1],
    )


# --------------------------------------------------------------------------
# Example 3: budding-yeast cell-cycle network, 3-d
#
# The 11 rate constants live in an external reference and are never
# defaulted here: callers must supply all of them.

def rhs_yeast3d(x, params):
    x = np.asarray(x, dtype=np.float64)
    p = params
    xx, yy, zz = x[..., 0], x[..., 1], x[..., 2]
    out = np.empty_like(x)
    out[..., 0] = xx * xx / (p["j1"] ** 2 + xx * xx) - p["k1"] * xx - xx * yy + p["a0"]
    out[..., 1] = yy * yy / (p["j2"] ** 2 + yy * yy) - p["k2"] * yy - yy * zz + p["ka1"] * xx
    out[..., 2] = p["ks"] * zz * zz / (p["j3"] ** 2 + zz * zz) - p["k3"] * zz - p["ki"] * zz * xx + p["ka2"] * yy
    return out


def _make_yeast3d(params):
    problems = [f"yeast3d: missing parameter '{k}'" for k in YEAST_PARAM_NAMES if k not in params]
    problems += [f"yeast3d: unknown parameter '{k}'" for k in sorted(set(params) - set(YEAST_PARAM_NAMES))]
    problems += [f"yeast3d: parameter '{k}' must be positive" for k in YEAST_PARAM_NAMES
                 if k in params and not params[k] > 0]
    if problems:
        raise ConfigError(problems)
    p = dict(params)
    domain = np.array([[0.0, 5.0]] * 3)
    fld = OdeField(3, lambda x: rhs_yeast3d(x, p))

    def sample(rng, n, _max_draws=10**6):
        # rejection: keep states with sup-norm drift below 5
        out = np.empty((n, 3))
        have, drawn = 0, 0
        while have < n:
            take = min(max(4 * (n - have), 64), _max_draws - drawn)
            if take <= 0:
                raise SamplingError(
                    f"yeast3d sampler: rejection loop exceeded {_max_draws} draws "
                    f"({have}/{n} accepted); parameters likely degenerate")
            cand = _uniform_box(rng, take, domain)
            drawn += take
            ok = np.abs(fld(cand)).max(axis=1) < 5.0
            sel = cand[ok][: n - have]
            out[have : have + len(sel)] = sel
            have += len(sel)
        return out

    return SystemSpec(name="yeast3d", dim=3, params=p, domain=domain, field=fld, sample=sample)


# --------------------------------------------------------------------------
# Example 4: discretized Ginzburg-Landau chain (gradient system)
#
# I+1 nodes x_0..x_I with h = 1/I and pinned ends u_0 = u_I = 0; the state
# is the interior vector (u_1, ..., u_{I-1}).

def _gl_pad(u):
    pad = np.zeros((*u.shape[:-1], 1))
    return np.concatenate([pad, u, pad], axis=-1)


def gl_energy(u, n_cells, delta):
    """E_h[u] = sum_{i=1..I} [ delta/2 ((u_i - u_{i-1})/h)^2 + V(u_i)/delta ],
    V(u) = (1 - u^2)^2 / 4, on the padded chain."""
    up = _gl_pad(np.asarray(u, dtype=np.float64))
    h = 1.0 / n_cells
    diff = (up[..., 1:] - up[..., :-1]) / h
    v = 0.25 * (1.0 - up[..., 1:] ** 2) ** 2
    return 0.5 * delta * (diff**2).sum(axis=-1) + (v / delta).sum(axis=-1)


def gl_energy_gradient(u, n_cells, delta):
    u = np.asarray(u, dtype=np.float64)
    up = _gl_pad(u)
    h2 = (1.0 / n_cells) ** 2
    lap = (up[..., :-2] - 2.0 * up[..., 1:-1] + up[..., 2:]) / h2
    return -delta * lap + (u**3 - u) / delta


def rhs_ginzburg_landau(u, n_cells, delta):
    return -gl_energy_gradient(u, n_cells, delta)


def _make_ginzburg_landau(params):
    known = {"I": 51, "delta": 0.1}
    bad = sorted(set(params) - set(known))
    if bad:
        raise ConfigError([f"ginzburg_landau: unknown parameter '{k}'" for k in bad])
    known.update(params)
    n_cells, delta = int(known["I"]), float(known["delta"])
    if n_cells < 2 or delta <= 0:
        raise ConfigError(["ginzburg_landau: need I >= 2 and delta > 0"])
    dim = n_cells - 1
    nodes = np.arange(1, n_cells) / n_cells  # interior grid points

    def sample(rng, n):
        # 4 sine modes, normalized to sup-norm a over the interior nodes
        coeffs = rng.uniform(-1.0, 1.0, size=(n, 4))
        amps = rng.uniform(0.0, 1.5, size=(n, 1))
        modes = np.sin(np.pi * np.outer(np.arange(1, 5), nodes))  # (4, dim)
        raw = coeffs @ modes
        peak = np.abs(raw).max(axis=1, keepdims=True)
        peak[peak == 0.0] = 1.0
        # normalize before scaling so the sup-norm equals the amplitude exactly
        return amps * (raw / peak)

    return SystemSpec(
        name="ginzburg_landau",
        dim=dim,
        params={"I": n_cells, "delta": delta},
        domain=None,
        field=OdeField(dim, lambda u: rhs_ginzburg_landau(u, n_cells, delta)),
        sample=sample,
        energy=lambda u: gl_energy(u, n_cells, delta),
        energy_gradient=lambda u: gl_energy_gradient(u, n_cells, delta),
        extras={"nodes": nodes},
    )


def gl_stable_states(system, dt=5e-4, tol=1e-8, max_steps=2_000_000):
    """The two energy minima u_-, u_+, found by relaxing -+0.5 plateau seeds."""
    out = []
    for sign in (-1.0, 1.0):
        u = np.full(system.dim, 0.5 * sign)
        for _ in range(max_steps):
            u = rk4_step(system.field, u, dt)
            if np.abs(system.field(u)).max() <= tol:
                break
        else:
            raise SamplingError("ginzburg_landau relaxation did not converge")
        out.append(u)
    return out[0], out[1]


def gl_exact_quasipotential(system, u_ref):
    """U(u) = 2 E_h[u] + C with C pinned so U(u_ref) = 0."""
    c = -2.0 * system.energy(u_ref)
    return ExactQuasipotential(
        "ginzburg_landau", lambda u: 2.0 * system.energy(u) + c,
        "basins of u_-, u_+")


# --------------------------------------------------------------------------
# Example 5: discretized Brusselator (non-gradient), state (u_0..u_I, v_0..v_I)

def _neumann_lap(w, h2):
    # ghost nodes mirror the first interior neighbor: w_{-1} = w_1, w_{I+1} = w_{I-1}
    lap = np.empty_like(w)
    lap[..., 1:-1] = w[..., :-2] - 2.0 * w[..., 1:-1] + w[..., 2:]
    lap[..., 0] = 2.0 * (w[..., 1] - w[..., 0])
    lap[..., -1] = 2.0 * (w[..., -2] - w[..., -1])
    return lap / h2


def rhs_brusselator(x, n_cells, alpha, a_param):
    x = np.asarray(x, dtype=np.float64)
    m = n_cells + 1
    u, v = x[..., :m], x[..., m:]
    h2 = (1.0 / n_cells) ** 2
    uu_v = u * u * v
    du = ((_neumann_lap(u, h2) + 1.0 + uu_v - (1.0 + a_param) * u)) / alpha
    dv = _neumann_lap(v, h2) + a_param * u - uu_v
    return np.concatenate([du, dv], axis=-1)


def _make_brusselator(params):
    known = {"I": 19, "alpha": 0.1, "A": 0.5}
    bad = sorted(set(params) - set(known))
    if bad:
        raise ConfigError([f"brusselator: unknown parameter '{k}'" for k in bad])
    known.update(params)
    n_cells, alpha, a_param = int(known["I"]), float(known["alpha"]), float(known["A"])
    if n_cells < 2 or alpha <= 0:
        raise ConfigError(["brusselator: need I >= 2 and alpha > 0"])
    dim = 2 * (n_cells + 1)
    nodes = np.arange(n_cells + 1) / n_cells

    def sample(rng, n):
        # 5 cosine modes per component; offsets keep u in [1/2, 3/2], v in [0, 1]
        modes = np.cos(np.pi * np.outer(np.arange(5), nodes))  # (5, I+1)
        cu = rng.uniform(-1.0, 1.0, size=(n, 5))
        cv = rng.uniform(-1.0, 1.0, size=(n, 5))
        a1 = rng.uniform(0.0, 0.5, size=(n, 1))
        a2 = rng.uniform(0.5 + a1, 1.5 - a1)
        a3 = rng.uniform(0.0, 0.5, size=(n, 1))
        a4 = rng.uniform(a3, 1.0 - a3)
        raw_u, raw_v = cu @ modes, cv @ modes
        pu = np.abs(raw_u).max(axis=1, keepdims=True)
        pv = np.abs(raw_v).max(axis=1, keepdims=True)
        pu[pu == 0.0] = 1.0
        pv[pv == 0.0] = 1.0
        return np.concatenate([a1 * (raw_u / pu) + a2, a3 * (raw_v / pv) + a4], axis=1)

    stable = np.concatenate([np.ones(n_cells + 1), np.full(n_cells + 1, a_param)])
    return SystemSpec(
        name="brusselator",
        dim=dim,
        params={"I": n_cells, "alpha": alpha, "A": a_param},
        domain=None,
        field=OdeField(dim, lambda x: rhs_brusselator(x, n_cells, alpha, a_param)),
        sample=sample,
        extras={"nodes": nodes, "stable_state": stable},
    )


def brusselator_mean_embedding(system):
    """(u0, v0) -> flat state u(x) = u0, v(x) = v0."""
    m = system.params["I"] + 1

    def to_state(ab):
        ab = np.atleast_2d(np.asarray(ab, dtype=np.float64))
        return np.concatenate(
            [np.repeat(ab[:, :1], m, axis=1), np.repeat(ab[:, 1:], m, axis=1)], axis=1)

    return to_state


def brusselator_mode1_embedding(system):
    """(u1, v1) -> state u = 1 + u1 cos(pi x), v = A + v1 cos(pi x)."""
    nodes = system.extras["nodes"]
    cosx = np.cos(np.pi * nodes)
    a_param = system.params["A"]

    def to_state(ab):
        ab = np.atleast_2d(np.asarray(ab, dtype=np.float64))
        return np.concatenate(
            [1.0 + ab[:, :1] * cosx, a_param + ab[:, 1:] * cosx], axis=1)

    return to_state


# --------------------------------------------------------------------------

_MAKERS = {
    "bistable3d": _make_bistable3d,
    "limitcycle2d": _make_limitcycle2d,
    "yeast3d": _make_yeast3d,
    "ginzburg_landau": _make_ginzburg_landau,
    "brusselator": _make_brusselator,
}


def make_system(name, params=None):
    if name not in _MAKERS:
        raise ConfigError([f"unknown system '{name}'; choose one of {SYSTEM_NAMES}"])
    return _MAKERS[name](dict(params or {}))


def sample_initial(system, seed, n=None):
    """n seeded initial states (or one state when n is None)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    states = system.sample(rng, 1 if n is None else int(n))
    return states[0] if n is None else states


def _uniform_box(rng, n, box):
    lo, hi = box[:, 0], box[:, 1]
    return lo + (hi - lo) * rng.random((n, box.shape[0]))
