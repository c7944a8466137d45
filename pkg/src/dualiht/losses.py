"""Per-sample loss models and their convex conjugates.

All functions are vectorized: ``u``, ``y`` and ``alpha`` may be scalars or
equally shaped arrays. Classification losses (huber, hinge) take labels in
{-1, +1} and are functions of the margin ``y*u``.

    squared   l(u) = (y - u)^2             l*(a) = a^2/4 + y a
    huber     smoothed hinge, width gamma   l*(a) = y a + gamma/2 a^2, y a in [-1, 0]
    hinge     l(u) = max(0, 1 - y u)        l*(a) = y a,               y a in [-1, 0]
"""
from dataclasses import dataclass

import numpy as np

LOSS_IDS = ("squared", "huber", "hinge")
DEFAULT_GAMMA = 0.25


class LabelError(ValueError):
    pass


class DomainError(ValueError):
    """Dual variable outside the conjugate's domain."""


@dataclass(frozen=True)
class LossModel:
    kind: str
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if self.kind not in LOSS_IDS:
            raise ValueError(
                "unknown loss %r; valid ids: %s" % (self.kind, ", ".join(LOSS_IDS))
            )
        if self.kind == "huber" and not self.gamma > 0:
            raise ValueError("huber loss needs gamma > 0, got %r" % (self.gamma,))

    @property
    def mu(self):
        """Smoothness modulus: the loss is 1/mu-smooth (0 = non-smooth)."""
        if self.kind == "squared":
            return 0.5
        if self.kind == "huber":
            return float(self.gamma)
        return 0.0

    @property
    def is_classification(self):
        return self.kind != "squared"

    def to_dict(self):
        if self.kind == "huber":
            return {"loss": self.kind, "gamma": self.gamma}
        return {"loss": self.kind}


def make_loss(kind, gamma=DEFAULT_GAMMA):
    return LossModel(kind, DEFAULT_GAMMA if gamma is None else float(gamma))


@dataclass(frozen=True)
class FeasibleInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError("empty interval [%r, %r]" % (self.lo, self.hi))

    def contains(self, a, tol=0.0):
        return bool(self.lo - tol <= a <= self.hi + tol)


def check_labels(model, y):
    y = np.asarray(y, dtype=np.float64)
    if model.is_classification and not np.all(np.abs(y) == 1.0):
        raise LabelError("%s loss needs labels in {-1, +1}" % model.kind)
    return y


def _bounds(y):
    # y*a in [-1, 0]  <=>  a in [min(-y, 0), max(-y, 0)]
    y = np.asarray(y, dtype=np.float64)
    return np.minimum(-y, 0.0), np.maximum(-y, 0.0)


def loss_value(model, u, y):
    u = np.asarray(u, dtype=np.float64)
    y = check_labels(model, y)
    if model.kind == "squared":
        return (y - u) ** 2
    z = y * u
    if model.kind == "hinge":
        return np.maximum(0.0, 1.0 - z)
    g = model.gamma
    return np.where(
        z >= 1.0,
        0.0,
        np.where(z < 1.0 - g, 1.0 - z - 0.5 * g, (1.0 - z) ** 2 / (2.0 * g)),
    )


def loss_derivative(model, u, y):
    """Derivative (subgradient selection) of the loss w.r.t. ``u``.

    Hinge takes the zero element of the subdifferential at the kink y*u = 1.
    """
    u = np.asarray(u, dtype=np.float64)
    y = check_labels(model, y)
    if model.kind == "squared":
        return 2.0 * (u - y)
    z = y * u
    if model.kind == "hinge":
        return np.where(z < 1.0, -y, 0.0)
    g = model.gamma
    return y * np.where(z >= 1.0, 0.0, np.where(z < 1.0 - g, -1.0, -(1.0 - z) / g))


def loss_subdifferential(model, u, y):
    """Endpoints (lo, hi) of the subdifferential of the loss at ``u``."""
    d = loss_derivative(model, u, y)
    if model.kind != "hinge":
        return d, d
    y = np.asarray(y, dtype=np.float64)
    kink = y * np.asarray(u, dtype=np.float64) == 1.0
    lo, hi = _bounds(y)
    return np.where(kink, lo, d), np.where(kink, hi, d)


def conjugate_value(model, alpha, y):
    """Convex conjugate; ``+inf`` outside the feasible interval."""
    a = np.asarray(alpha, dtype=np.float64)
    y = check_labels(model, y)
    if model.kind == "squared":
        return a * a / 4.0 + y * a
    lo, hi = _bounds(y)
    val = y * a
    if model.kind == "huber":
        val = val + 0.5 * model.gamma * a * a
    return np.where((a >= lo) & (a <= hi), val, np.inf)


def conjugate_derivative(model, alpha, y):
    """Derivative of the conjugate; hinge selects the constant ``y``."""
    a = np.asarray(alpha, dtype=np.float64)
    y = check_labels(model, y)
    if model.kind == "squared":
        return a / 2.0 + y
    lo, hi = _bounds(y)
    if np.any((a < lo) | (a > hi)):
        raise DomainError("dual variable outside feasible interval")
    if model.kind == "huber":
        return y + model.gamma * a
    return y + 0.0 * a


def conjugate_derivative_unchecked(model, alpha, y):
    """Hot-loop variant: no label or domain checks."""
    if model.kind == "squared":
        return alpha / 2.0 + y
    if model.kind == "huber":
        return y + model.gamma * alpha
    return y


def feasible_interval(model, y):
    if model.kind == "squared":
        return FeasibleInterval(-np.inf, np.inf)
    y = float(check_labels(model, y))
    lo, hi = _bounds(y)
    return FeasibleInterval(float(lo), float(hi))


def feasible_bounds(model, y):
    """Vectorized (lo, hi) arrays; infinite for squared loss."""
    y = check_labels(model, y)
    if model.kind == "squared":
        return np.full(y.shape, -np.inf), np.full(y.shape, np.inf)
    return _bounds(y)


def project_feasible(model, alpha, y):
    a = np.asarray(alpha, dtype=np.float64)
    if model.kind == "squared":
        return a.copy() if a.ndim else a
    lo, hi = _bounds(check_labels(model, y))
    return np.clip(a, lo, hi)


def is_feasible(model, alpha, y, tol=0.0):
    if model.kind == "squared":
        return bool(np.all(np.isfinite(alpha)))
    lo, hi = feasible_bounds(model, y)
    a = np.asarray(alpha, dtype=np.float64)
    return bool(np.all((a >= lo - tol) & (a <= hi + tol)))
