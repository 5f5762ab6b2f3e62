"""Exception hierarchy.

Every numerical failure derives from :class:`NumericalError` so the CLI can
map it to exit status 1; configuration problems derive from
:class:`ConfigInvalid` (exit status 2).
"""


class SchottkyError(Exception):
    """Base class for all package errors."""


class NumericalError(SchottkyError):
    pass


class GroupInvalid(NumericalError):
    """Raised when disc/generator data do not define a Schottky group."""


class DiscsOverlap(GroupInvalid):
    pass


class PairingViolated(GroupInvalid):
    pass


class NonUnitDeterminant(GroupInvalid):
    pass


class DegenerateDiscs(GroupInvalid):
    pass


class BadLetter(NumericalError):
    pass


class PoleEncountered(NumericalError):
    pass


class BranchCutHit(NumericalError):
    pass


class ZeroEncountered(NumericalError):
    pass


class WordLengthMismatch(NumericalError):
    pass


class NonHyperbolicElement(NumericalError):
    pass


class NonConvergedEigenvalue(NumericalError):
    pass


class DegenerateEigenpair(NumericalError):
    pass


class NoSignChange(NumericalError):
    pass


class RefinementBudgetExceeded(NumericalError):
    pass


class ImageEscapesCover(NumericalError):
    pass


class SeparationNotCertified(NumericalError):
    pass


class CutoffTooSmall(NumericalError):
    pass


class ContourTooCloseToZero(NumericalError):
    pass


class NonIntegerWindingNumber(NumericalError):
    pass


class NewtonDiverged(NumericalError):
    pass


class InsufficientData(NumericalError):
    pass


class NuOutOfRange(NumericalError):
    pass


class ConfigInvalid(SchottkyError):
    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class CorruptRecord(SchottkyError):
    pass
