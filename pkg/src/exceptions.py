# src/exceptions.py
"""
Exception and warning types shared by the certification toolkit.

Every error derives from CertificateError so callers (the CLI in particular)
can map whole families onto exit codes, and from the builtin the rest of the
code base would raise for the same situation.
"""
from __future__ import annotations

from typing import Any, Optional, Sequence


class CertificateError(Exception):
    """Root of all toolkit errors."""


# ------------------------------- Inputs -------------------------------------
class InvalidTopologyError(CertificateError, ValueError):
    pass


class InvalidPermutationError(CertificateError, ValueError):
    pass


class ShapeError(CertificateError, ValueError):
    pass


class NumericError(CertificateError, ValueError):
    pass


class UsageError(CertificateError, RuntimeError):
    pass


# ------------------------------ System oracle -------------------------------
class DomainError(CertificateError, ValueError):
    """An oracle was queried outside of its state/input box."""

    def __init__(self, message: str, point: Any = None):
        super().__init__(message)
        self.point = point


class ClosureError(CertificateError, ValueError):
    """A local transition was requested without the states it depends on."""

    def __init__(self, message: str, missing: Sequence[int] = ()):
        super().__init__(message)
        self.missing = tuple(missing)


# -------------------------------- Training ----------------------------------
class TrainingDivergedError(CertificateError, RuntimeError):
    """Loss became non-finite; carries the last parameters with finite loss."""

    def __init__(self, message: str, last_params: Any = None, epoch: Optional[int] = None):
        super().__init__(message)
        self.last_params = last_params
        self.epoch = epoch


class TransferError(CertificateError, ValueError):
    pass


# ------------------------------- Verification -------------------------------
class GridBudgetError(CertificateError, RuntimeError):
    """A covering grid or pair enumeration exceeds the configured budget."""

    def __init__(self, message: str, required: int, budget: int):
        super().__init__(message)
        self.required = int(required)
        self.budget = int(budget)


class VerificationAbortedError(CertificateError, RuntimeError):
    """The oracle rejected a grid point; the witness is the offending point."""

    def __init__(self, message: str, witness: Any = None):
        super().__init__(message)
        self.witness = witness


class CompositionRefusedError(CertificateError, RuntimeError):
    pass


# ------------------------------ Files / config ------------------------------
class ConfigError(CertificateError, ValueError):
    """Configuration problem; `diagnostics` holds `line N: message` strings."""

    def __init__(self, message: str, diagnostics: Sequence[str] = ()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        return base + "\n" + "\n".join(f"  {d}" for d in self.diagnostics)


class CheckpointError(CertificateError, ValueError):
    pass


# --------------------------------- Warnings ---------------------------------
class ContractivityWarning(UserWarning):
    pass


class DegenerateDomainWarning(UserWarning):
    pass


class NonCertifiedBoundWarning(RuntimeWarning):
    pass


class TransferMismatchWarning(UserWarning):
    pass
