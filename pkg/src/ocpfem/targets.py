"""Desired states used by the benchmarks, selectable by name."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quadrature import BoxInterface, SphereInterface, any_straddles


@dataclass(frozen=True)
class TargetFunction:
    """A desired state ybar on a box domain (a, b)^dim.

    ``interfaces`` lists the sets across which ybar jumps or kinks; quadrature
    subdivides the elements they cut.
    """

    name: str
    dim: int
    func: object
    smoothness: str = "smooth"  # smooth | piecewise-linear | discontinuous
    interfaces: tuple = field(default_factory=tuple)
    domain: tuple = (0.0, 1.0)

    def __call__(self, x):
        x = np.asarray(x, float)
        return self.func(x.reshape(-1, self.dim)).reshape(x.shape[:-1])

    @property
    def straddles(self):
        return any_straddles(self.interfaces)

    @property
    def expected_eoc(self) -> float:
        """Asymptotic L2 rate under rho = h^2 from the target's regularity."""
        return {"smooth": 2.0, "piecewise-linear": 1.5, "discontinuous": 0.5}[self.smoothness]


def _y1(x):
    t = x[:, 0]
    return 4 * t * (1 - t)


def _y2(x):
    t = x[:, 0]
    return np.clip(1 - 4 * np.abs(t - 0.5), 0.0, None)


def _y3(x):
    t = x[:, 0]
    return ((t > 0.25) & (t < 0.75)).astype(float)


def _peak(center):
    c = np.asarray(center)

    def f(x):
        return np.exp(-50 * ((x - c) ** 2).sum(axis=1))

    return f


def _pedestal(x):
    return np.all(np.abs(x) < 0.5, axis=1).astype(float)


_BALLS = [
    (1.0, (0.5, 0.5, 0.5), 0.05),
    (2.0, (0.5, 0.25, 0.75), 0.0625),
    (3.0, (0.5, 0.75, 0.75), 0.0625),
    (4.0, (0.5, 0.75, 0.25), 0.075),
]
_SLAB = (5.0, (0.25, 0.45, 0.125), (0.75, 0.5, 0.375))
_BALL6 = (6.0, (0.5, 0.25, 0.25), 0.0625)


def _inclusions(x):
    out = np.zeros(x.shape[0])
    todo = np.ones(x.shape[0], bool)

    def put(mask, value):
        nonlocal todo
        hit = mask & todo
        out[hit] = value
        todo &= ~hit

    for value, c, r in _BALLS:
        put(((x - np.asarray(c)) ** 2).sum(axis=1) <= r**2, value)
    value, lo, hi = _SLAB
    put(np.all((x >= lo) & (x <= hi), axis=1), value)
    value, c, r = _BALL6
    put(((x - np.asarray(c)) ** 2).sum(axis=1) <= r**2, value)
    return out


def get_target(name: str, dim: int | None = None) -> TargetFunction:
    """Look up a benchmark target.

    Names: target1, target2, target3 (on (0,1)), peak2d, peak3d,
    pedestal (d = 2 or 3, on (-1,1)^d), inclusions (on (0,1)^3).
    """
    if name == "target1":
        return TargetFunction(name, 1, _y1, "smooth", (), (0.0, 1.0))
    if name == "target2":
        kinks = (BoxInterface(0.25, 0.25), BoxInterface(0.5, 0.5), BoxInterface(0.75, 0.75))
        return TargetFunction(name, 1, _y2, "piecewise-linear", kinks, (0.0, 1.0))
    if name == "target3":
        return TargetFunction(name, 1, _y3, "discontinuous", (BoxInterface(0.25, 0.75),), (0.0, 1.0))
    if name == "peak2d":
        return TargetFunction(name, 2, _peak((0.2, -0.1)), "smooth", (), (-1.0, 1.0))
    if name == "peak3d":
        return TargetFunction(name, 3, _peak((0.2, -0.1, -0.3)), "smooth", (), (-1.0, 1.0))
    if name == "pedestal":
        d = 3 if dim is None else dim
        if d not in (1, 2, 3):
            raise ValueError(f"pedestal needs d in 1..3, got {d}")
        box = BoxInterface([-0.5] * d, [0.5] * d)
        return TargetFunction(name, d, _pedestal, "discontinuous", (box,), (-1.0, 1.0))
    if name == "inclusions":
        itf = [SphereInterface(c, r) for _, c, r in _BALLS]
        itf.append(BoxInterface(_SLAB[1], _SLAB[2]))
        itf.append(SphereInterface(_BALL6[1], _BALL6[2]))
        return TargetFunction(name, 3, _inclusions, "discontinuous", tuple(itf), (0.0, 1.0))
    raise KeyError(f"unknown target {name!r}")


TARGET_NAMES = ("target1", "target2", "target3", "peak2d", "peak3d", "pedestal", "inclusions")


def constant_target(value: float, dim: int = 1, domain=(0.0, 1.0)) -> TargetFunction:
    """Constant desired state, handy for tests."""
    return TargetFunction(f"const{value:g}", dim, lambda x: np.full(x.shape[0], float(value)), "smooth", (), domain)
