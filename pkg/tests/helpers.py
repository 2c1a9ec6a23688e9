"""Small problem builders shared by the test modules."""

import numpy as np

from hjbobstacle.model import CoefficientSet, ControlCoefficients, ControlGrid, ProblemSpec, Sense


def make_spec(dim, controls, lam=None, obstacle=None, sense=Sense.SUP, cgrid=None, policy="periodic", box=(0.0, 1.0)):
    cs = [ControlCoefficients.build(dim, **c) for c in controls]
    cvals = [float(c.c_at(np.zeros((dim, 1)))[0]) for c in cs]
    lam = lam if lam is not None else min(cvals)
    coefs = CoefficientSet(tuple(cs), lam, max(max(cvals), lam))
    return ProblemSpec(dim, (box[0],) * dim, (box[1],) * dim, cgrid or ControlGrid(len(cs)), coefs, obstacle, sense,
                       policy)


# pass/fail lines of the acceptance suite, echoed in the terminal summary
ACCEPTANCE: list = []
