"""Keypoint densities in the residual re-parameterization.

A keypoint prediction is a location ``mu`` with per-axis scale ``sigma``.
The probability of the true keypoint sitting at ``x`` is modeled on the
standardized residual ``r = (x - mu) / sigma``::

    log P(x) = log p(r) - log sigma_u - log sigma_v

where ``p`` is a standard Gaussian, a standard Laplace, or a stack of affine
coupling layers pushing ``r`` onto one of those base densities.

All evaluation functions broadcast over leading axes; points are ``(..., 2)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import BoundingBox
from .errors import InvalidBBox, NonFiniteInput, ParseError

SIGMA_FLOOR = 1e-6
SCALE_BOUND = 3.0

_LOG_2PI = math.log(2 * math.pi)
_LOG_2 = math.log(2.0)


def _base_logp(kind: str, z: np.ndarray):
    """Log density and gradient of the 2D standard base density."""
    if kind == "gaussian":
        return -0.5 * np.sum(z * z, axis=-1) - _LOG_2PI, -z
    if kind == "laplace":
        return -np.sum(np.abs(z), axis=-1) - 2 * _LOG_2, -np.sign(z)
    raise ValueError(f"unknown base density {kind!r}")


def _base_sample(kind: str, rng, n: int) -> np.ndarray:
    if kind == "gaussian":
        return rng.standard_normal((n, 2))
    return rng.laplace(size=(n, 2))


class DensityModel:
    """Density over the standardized residual; subclasses define ``std_logp``."""

    kind: str = ""

    def std_logp(self, r: np.ndarray, grad: bool = False):
        raise NotImplementedError

    def sample_std(self, rng, n: int) -> np.ndarray:
        raise NotImplementedError


class GaussianDensity(DensityModel):
    kind = "gaussian"

    def std_logp(self, r, grad=False):
        lp, g = _base_logp("gaussian", r)
        return (lp, g) if grad else lp

    def sample_std(self, rng, n):
        return _base_sample("gaussian", rng, n)

    def __repr__(self):
        return "GaussianDensity()"


class LaplaceDensity(DensityModel):
    """Product of unit-scale Laplace densities; gradient is 0 at the kink."""

    kind = "laplace"

    def std_logp(self, r, grad=False):
        lp, g = _base_logp("laplace", r)
        return (lp, g) if grad else lp

    def sample_std(self, rng, n):
        return _base_sample("laplace", rng, n)

    def __repr__(self):
        return "LaplaceDensity()"


@dataclass(frozen=True, eq=False)
class CouplingLayer:
    """Affine coupling: transforms coordinate ``1 - split`` conditioned on ``split``.

    The conditioner is ``tanh`` perceptron with one hidden layer; output row 0
    is the raw scale-log (squashed to ``3 * tanh``), row 1 the shift.
    """

    split: int
    w1: np.ndarray  # (h,)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (2, h)
    b2: np.ndarray  # (2,)

    def __post_init__(self):
        if self.split not in (0, 1):
            raise ValueError("split must be 0 or 1")
        h = np.asarray(self.w1).shape[0]
        shapes = {"w1": (h,), "b1": (h,), "w2": (2, h), "b2": (2,)}
        for name, shape in shapes.items():
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def conditioner(self, c):
        pre = c[..., None] * self.w1 + self.b1
        hdn = np.tanh(pre)
        raw = hdn @ self.w2.T + self.b2
        th = np.tanh(raw[..., 0])
        return SCALE_BOUND * th, raw[..., 1], hdn, th

    def conditioner_derivs(self, hdn, th):
        """d(scale-log)/dc and d(shift)/dc."""
        dpre = (1.0 - hdn * hdn) * self.w1
        ds = SCALE_BOUND * (1.0 - th * th) * (dpre @ self.w2[0])
        dt = dpre @ self.w2[1]
        return ds, dt


class CouplingFlow(DensityModel):
    """Stack of affine coupling layers mapping the residual onto a base density."""

    kind = "coupling_flow"

    def __init__(self, layers=(), base: str = "gaussian"):
        if base not in ("gaussian", "laplace"):
            raise ValueError(f"unknown base density {base!r}")
        self.layers = tuple(layers)
        self.base = base

    @property
    def hidden(self) -> int:
        return self.layers[0].hidden if self.layers else 0

    def __repr__(self):
        return f"CouplingFlow(n_layers={len(self.layers)}, hidden={self.hidden}, base={self.base!r})"

    def forward(self, r, record=False):
        z = np.array(r, dtype=float, copy=True)
        log_det = np.zeros(z.shape[:-1])
        tape = []
        for layer in self.layers:
            k = layer.split
            c = z[..., k]
            y = z[..., 1 - k]
            s, t, hdn, th = layer.conditioner(c)
            if record:
                tape.append((c.copy(), y.copy(), s, hdn, th))
            z[..., 1 - k] = y * np.exp(s) + t
            log_det = log_det + s
        return (z, log_det, tape) if record else (z, log_det)

    def inverse(self, z):
        r = np.array(z, dtype=float, copy=True)
        for layer in reversed(self.layers):
            k = layer.split
            s, t, _, _ = layer.conditioner(r[..., k])
            r[..., 1 - k] = (r[..., 1 - k] - t) * np.exp(-s)
        return r

    def std_logp(self, r, grad=False):
        r = np.asarray(r, dtype=float)
        if not self.layers:
            lp, g = _base_logp(self.base, r)
            return (lp, g) if grad else lp
        z, log_det, tape = self.forward(r, record=True)
        lp, g = _base_logp(self.base, z)
        lp = lp + log_det
        if not grad:
            return lp
        g = np.array(g, dtype=float)
        for layer, (c, y, s, hdn, th) in zip(reversed(self.layers), reversed(tape)):
            k = layer.split
            ds, dt = layer.conditioner_derivs(hdn, th)
            es = np.exp(s)
            gy = g[..., 1 - k]
            g_c = g[..., k] + gy * (y * es * ds + dt) + ds
            g[..., k] = g_c
            g[..., 1 - k] = gy * es
        return lp, g

    def sample_std(self, rng, n):
        return self.inverse(_base_sample(self.base, rng, n))


@dataclass(frozen=True, eq=False)
class KeypointObservation:
    """Predicted keypoint ``mu`` with per-axis scale ``sigma`` and its density."""

    mu: np.ndarray
    sigma: np.ndarray
    density: DensityModel

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(2)
        sigma = np.array(self.sigma, dtype=float).reshape(2)
        if not np.all(np.isfinite(mu)):
            raise NonFiniteInput("keypoint location must be finite")
        if not np.all(np.isfinite(sigma)):
            raise NonFiniteInput("keypoint scale must be finite")
        sigma = np.maximum(sigma, SIGMA_FLOOR)
        mu.flags.writeable = False
        sigma.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)


def _standardize(x, obs):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("evaluation point must be finite")
    return (x - obs.mu) / obs.sigma


def log_prob(model: DensityModel, x, obs: KeypointObservation):
    """Log density of the true keypoint sitting at pixel(s) ``x``."""
    r = _standardize(x, obs)
    return model.std_logp(r) - np.sum(np.log(obs.sigma))


def grad_log_prob(model: DensityModel, x, obs: KeypointObservation) -> np.ndarray:
    """Gradient of ``log_prob`` with respect to ``x``."""
    r = _standardize(x, obs)
    _, g = model.std_logp(r, grad=True)
    return g / obs.sigma


def log_prob_and_grad(model: DensityModel, x, obs: KeypointObservation):
    r = _standardize(x, obs)
    lp, g = model.std_logp(r, grad=True)
    return lp - np.sum(np.log(obs.sigma)), g / obs.sigma


def flow_forward(model: CouplingFlow, r):
    """Map a standardized residual to base space; returns ``(z, log_det)``."""
    return model.forward(np.asarray(r, dtype=float))


def flow_inverse(model: CouplingFlow, z):
    return model.inverse(np.asarray(z, dtype=float))


def sample(model: DensityModel, obs: KeypointObservation, n: int, rng) -> np.ndarray:
    """Draw ``n`` pixel locations from the keypoint density."""
    return obs.mu + obs.sigma * model.sample_std(rng, n)


def random_coupling_flow(
    rng, n_layers: int = 4, hidden: int = 8, base: str = "gaussian", scale: float = 0.5
) -> CouplingFlow:
    """Coupling flow with i.i.d. normal weights, alternating split order."""
    layers = []
    for i in range(n_layers):
        layers.append(
            CouplingLayer(
                split=i % 2,
                w1=scale * rng.standard_normal(hidden),
                b1=scale * rng.standard_normal(hidden),
                w2=scale * rng.standard_normal((2, hidden)),
                b2=scale * rng.standard_normal(2),
            )
        )
    return CouplingFlow(layers, base=base)


# -- density grids -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """Log-density sampled at cell centers; ``values[row, col]`` with rows along v."""

    origin: np.ndarray
    cell: float
    values: np.ndarray

    def cell_centers(self):
        h, w = self.values.shape
        us = self.origin[0] + (np.arange(w) + 0.5) * self.cell
        vs = self.origin[1] + (np.arange(h) + 0.5) * self.cell
        return us, vs

    def argmax_center(self) -> np.ndarray:
        row, col = np.unravel_index(np.argmax(self.values), self.values.shape)
        us, vs = self.cell_centers()
        return np.array([us[col], vs[row]])

    def integral(self) -> float:
        return float(np.exp(self.values).sum() * self.cell**2)


def render_density_grid(model: DensityModel, obs: KeypointObservation, bbox: BoundingBox, cell: float) -> DensityGrid:
    if not (np.isfinite(cell) and cell > 0):
        raise InvalidBBox(f"cell size must be positive, got {cell}")
    w = max(1, int(math.ceil((bbox.u_max - bbox.u_min) / cell - 1e-9)))
    h = max(1, int(math.ceil((bbox.v_max - bbox.v_min) / cell - 1e-9)))
    origin = np.array([bbox.u_min, bbox.v_min])
    us = origin[0] + (np.arange(w) + 0.5) * cell
    vs = origin[1] + (np.arange(h) + 0.5) * cell
    pts = np.stack(np.meshgrid(us, vs), axis=-1)
    return DensityGrid(origin, float(cell), log_prob(model, pts, obs))


def write_pgm(grid: DensityGrid, path) -> Path:
    """Write an ASCII (P2) PGM plus a ``.json`` sidecar with the value range."""
    path = Path(path)
    vals = grid.values
    lo, hi = float(vals.min()), float(vals.max())
    span = hi - lo if hi > lo else 1.0
    img = np.rint((vals - lo) / span * 255).astype(int)
    h, w = img.shape
    lines = ["P2", f"{w} {h}", "255"]
    lines += [" ".join(map(str, row)) for row in img]
    path.write_text("\n".join(lines) + "\n")
    sidecar = path.with_suffix(".json")
    sidecar.write_text(
        json.dumps(
            {"origin": grid.origin.tolist(), "cell": grid.cell, "min": lo, "max": hi, "width": w, "height": h}
        )
    )
    return sidecar


# -- model files -------------------------------------------------------------


def density_to_dict(model: DensityModel) -> dict:
    if isinstance(model, CouplingFlow):
        return {
            "kind": "coupling_flow",
            "base": model.base,
            "hidden": model.hidden,
            "layers": [
                {
                    "split": layer.split,
                    "w1": layer.w1.tolist(),
                    "b1": layer.b1.tolist(),
                    "w2": layer.w2.tolist(),
                    "b2": layer.b2.tolist(),
                }
                for layer in model.layers
            ],
        }
    return {"kind": model.kind}


def density_from_dict(d, where="model") -> DensityModel:
    if not isinstance(d, dict):
        raise ParseError(f"{where}: expected an object")
    kind = d.get("kind")
    if kind == "gaussian":
        return GaussianDensity()
    if kind == "laplace":
        return LaplaceDensity()
    if kind != "coupling_flow":
        raise ParseError(f"{where}.kind: unknown density kind {kind!r}")
    base = d.get("base", "gaussian")
    if base not in ("gaussian", "laplace"):
        raise ParseError(f"{where}.base: unknown base {base!r}")
    hidden = d.get("hidden")
    if not isinstance(hidden, int) or isinstance(hidden, bool) or hidden < 0:
        raise ParseError(f"{where}.hidden: expected a non-negative integer, got {hidden!r}")
    raw_layers = d.get("layers", [])
    if not isinstance(raw_layers, list):
        raise ParseError(f"{where}.layers: expected a list")
    layers = []
    for i, ld in enumerate(raw_layers):
        loc = f"{where}.layers[{i}]"
        if not isinstance(ld, dict):
            raise ParseError(f"{loc}: expected an object")
        for key in ("split", "w1", "b1", "w2", "b2"):
            if key not in ld:
                raise ParseError(f"{loc}.{key}: missing")
        if len(ld["w1"]) != hidden:
            raise ParseError(f"{loc}.w1: length {len(ld['w1'])} does not match hidden={hidden}")
        try:
            layers.append(CouplingLayer(ld["split"], ld["w1"], ld["b1"], ld["w2"], ld["b2"]))
        except (ValueError, TypeError) as e:
            raise ParseError(f"{loc}: {e}") from None
    return CouplingFlow(layers, base=base)


def save_density_model(model: DensityModel, path) -> None:
    Path(path).write_text(json.dumps(density_to_dict(model)))


def load_density_model(path) -> DensityModel:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    return density_from_dict(d, where=str(path))
