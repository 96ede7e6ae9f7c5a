"""Exceptions raised across the package."""

import numpy as np


class OutputSubproblemNonconvex(ValueError):
    """The negatively nudged output subproblem has lost its curvature."""


class NoConvergence(RuntimeError):
    pass


class UnsupportedActivation(ValueError):
    pass


class DivergedState(RuntimeError):
    """A gradient was requested from an inference run that diverged."""


class AbortedDiverged(RuntimeError):
    """Training stopped because inference diverged on every batch of an epoch."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []


class IndefiniteSubproblem(ValueError):
    pass


class SingularMatrix(np.linalg.LinAlgError):
    pass


# The coupled saddle-point system is singular in exactly the same sense.
SingularSystem = SingularMatrix


class BadMagic(ValueError):
    pass


class TruncatedFile(ValueError):
    pass


class CountMismatch(ValueError):
    pass
