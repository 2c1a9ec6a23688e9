"""Registry of ready-made problems addressable by name.

All presets live on periodic unit boxes with periodic coefficients so that
rate studies are free of boundary layers.  Each entry is documented in
:data:`DESCRIPTIONS`.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .expression import as_expression
from .model import (
    CoefficientSet,
    ControlCoefficients,
    ControlGrid,
    LipschitzConstants,
    ModelError,
    Obstacle,
    ProblemSpec,
    Regularity,
    Sense,
)

__all__ = ["PRESETS", "DESCRIPTIONS", "get_preset", "preset_names", "register"]

TWO_PI = 2.0 * math.pi

PRESETS: dict[str, Callable[[], ProblemSpec]] = {}
DESCRIPTIONS: dict[str, str] = {}


def register(name: str, description: str):
    def deco(fn):
        PRESETS[name] = fn
        DESCRIPTIONS[name] = description
        return fn

    return deco


def preset_names() -> list[str]:
    return sorted(PRESETS)


def get_preset(name: str) -> ProblemSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ModelError(f"unknown preset {name!r}; known: {', '.join(preset_names())}") from None


def _cs(controls, dim=1):
    cs = [ControlCoefficients.build(dim, **c) for c in controls]
    # presets only use constant c
    vals = [float(c.c_at(np.zeros((dim, 1)))[0]) for c in cs]
    return CoefficientSet(tuple(cs), min(vals), max(vals))


def _box(dim):
    return (0.0,) * dim, (1.0,) * dim


@register("zero-diffusion-1d", "a = b = 0, two controls; closed form u = max(g, min_k f_k/c_k)")
def zero_diffusion_1d() -> ProblemSpec:
    coefs = _cs([
        dict(a=[[0.0]], b=[0.0], c=1.0, f="1 + 0.5*sin(2*pi*x1)", lipschitz=LipschitzConstants(f=0.5 * TWO_PI)),
        dict(a=[[0.0]], b=[0.0], c=2.0, f="2*cos(2*pi*x1)", lipschitz=LipschitzConstants(f=2 * TWO_PI)),
    ])
    g = Obstacle(as_expression("0.8*sin(2*pi*x1)", 1), Regularity.SEMICONVEX_LIPSCHITZ, 0.8 * TWO_PI,
                 d2_minus_bound=0.8 * TWO_PI**2)
    lo, hi = _box(1)
    return ProblemSpec(1, lo, hi, ControlGrid(2, ("a1", "a2")), coefs, g, Sense.SUP, name="zero-diffusion-1d")


@register("zero-diffusion-2d", "two-dimensional zero-diffusion problem with the same closed form")
def zero_diffusion_2d() -> ProblemSpec:
    coefs = _cs([
        dict(a=[[0.0, 0.0], [0.0, 0.0]], b=[0.0, 0.0], c=1.0, f="1 + 0.5*sin(2*pi*x1)*cos(2*pi*x2)",
             lipschitz=LipschitzConstants(f=0.5 * TWO_PI * math.sqrt(2))),
        dict(a=[[0.0, 0.0], [0.0, 0.0]], b=[0.0, 0.0], c=2.0, f="2*cos(2*pi*(x1 - x2))",
             lipschitz=LipschitzConstants(f=2 * TWO_PI * math.sqrt(2))),
    ], dim=2)
    g = Obstacle(as_expression("0.8*sin(2*pi*x1)*sin(2*pi*x2)", 2), Regularity.SEMICONVEX_LIPSCHITZ,
                 0.8 * TWO_PI * math.sqrt(2), d2_minus_bound=0.8 * TWO_PI**2 * 2)
    lo, hi = _box(2)
    return ProblemSpec(2, lo, hi, ControlGrid(2), coefs, g, Sense.SUP, name="zero-diffusion-2d")


@register("smooth-obstacle-1d", "two diffusive controls, smooth obstacle with bounded negative curvature")
def smooth_obstacle_1d() -> ProblemSpec:
    coefs = _cs([
        dict(a=[[0.1]], b=[0.2], c=1.0, f="sin(2*pi*x1)", lipschitz=LipschitzConstants(f=TWO_PI)),
        dict(a=[[0.1]], b=["0.1*sin(2*pi*x1)"], c=2.0, f="1 + cos(2*pi*x1)",
             lipschitz=LipschitzConstants(b=0.1 * TWO_PI, f=TWO_PI)),
    ])
    g = Obstacle(as_expression("0.3 + 0.2*cos(2*pi*x1)", 1), Regularity.SEMICONVEX_LIPSCHITZ, 0.2 * TWO_PI,
                 d2_minus_bound=0.2 * TWO_PI**2)
    lo, hi = _box(1)
    return ProblemSpec(1, lo, hi, ControlGrid(2), coefs, g, Sense.SUP, name="smooth-obstacle-1d")


@register("degenerate-obstacle-1d", "one control without diffusion; Lipschitz obstacle with a concave kink")
def degenerate_obstacle_1d() -> ProblemSpec:
    coefs = _cs([
        dict(a=[[0.0]], b=[0.3], c=1.0, f="sin(2*pi*x1)", lipschitz=LipschitzConstants(f=TWO_PI)),
        dict(a=[[0.2]], b=[-0.2], c=1.5, f="0.5*cos(2*pi*x1)", lipschitz=LipschitzConstants(f=0.5 * TWO_PI)),
    ])
    g = Obstacle(as_expression("0.4 - abs(x1 - 0.5)", 1), Regularity.LIPSCHITZ, 1.0)
    lo, hi = _box(1)
    return ProblemSpec(1, lo, hi, ControlGrid(2), coefs, g, Sense.SUP, name="degenerate-obstacle-1d")


@register("hoelder-obstacle-1d", "diffusive problem with a Hoelder-1/2 cusp obstacle")
def hoelder_obstacle_1d() -> ProblemSpec:
    coefs = _cs([
        dict(a=[[0.5]], b=[0.0], c=1.0, f="0.2*sin(2*pi*x1)", lipschitz=LipschitzConstants(f=0.2 * TWO_PI)),
    ])
    g = Obstacle(as_expression("0.5 - 0.5*sqrt(abs(x1 - 0.5))", 1), Regularity.HOELDER, 0.5, mu=0.5)
    lo, hi = _box(1)
    return ProblemSpec(1, lo, hi, ControlGrid(1), coefs, g, Sense.SUP, name="hoelder-obstacle-1d")


@register("cross-derivative-2d", "a11 = a22 = 1/2, a12 = +-1/4 over two controls, small drift")
def cross_derivative_2d() -> ProblemSpec:
    a_plus = [[0.5, 0.25], [0.25, 0.5]]
    a_minus = [[0.5, -0.25], [-0.25, 0.5]]
    coefs = _cs([
        dict(a=a_plus, b=[0.1, 0.05], c=1.0, f="sin(2*pi*x1)*sin(2*pi*x2)",
             lipschitz=LipschitzConstants(f=TWO_PI * math.sqrt(2))),
        dict(a=a_minus, b=["0.1*sin(2*pi*x2)", "0.1*cos(2*pi*x1)"], c=2.0, f="0.5*cos(2*pi*(x1 + x2))",
             lipschitz=LipschitzConstants(b=0.1 * TWO_PI, f=0.5 * TWO_PI * math.sqrt(2))),
    ], dim=2)
    g = Obstacle(as_expression("0.1 + 0.3*cos(2*pi*x1)*cos(2*pi*x2)", 2), Regularity.SEMICONVEX_LIPSCHITZ,
                 0.3 * TWO_PI * math.sqrt(2), d2_minus_bound=0.3 * TWO_PI**2 * 2)
    lo, hi = _box(2)
    return ProblemSpec(2, lo, hi, ControlGrid(2), coefs, g, Sense.SUP, name="cross-derivative-2d")


@register("isaacs-1d", "inf over two outer controls of sup over two inner controls")
def isaacs_1d() -> ProblemSpec:
    coefs = _cs([
        dict(a=[[0.4]], b=[0.1], c=1.0, f="sin(2*pi*x1)", lipschitz=LipschitzConstants(f=TWO_PI)),
        dict(a=[[0.2]], b=[-0.2], c=1.5, f="cos(2*pi*x1)", lipschitz=LipschitzConstants(f=TWO_PI)),
        dict(a=[[0.6]], b=[0.0], c=1.0, f="0.5", lipschitz=LipschitzConstants()),
        dict(a=[[0.1]], b=["0.1*sin(2*pi*x1)"], c=2.0, f="sin(4*pi*x1)",
             lipschitz=LipschitzConstants(b=0.1 * TWO_PI, f=2 * TWO_PI)),
    ])
    g = Obstacle(as_expression("0.2*cos(2*pi*x1)", 1), Regularity.SEMICONVEX_LIPSCHITZ, 0.2 * TWO_PI,
                 d2_minus_bound=0.2 * TWO_PI**2)
    lo, hi = _box(1)
    return ProblemSpec(1, lo, hi, ControlGrid(2, second_axis=ControlGrid(2)), coefs, g, Sense.INFSUP,
                       name="isaacs-1d")
