"""Exception hierarchy shared across the toolkit.

The CLI maps ``PodsError`` subclasses to exit code 1 and ``OSError`` to 2.
"""


class PodsError(Exception):
    """Base class for validation and metric-domain errors."""


class CatalogError(PodsError, ValueError):
    pass


class UnknownClass(PodsError, ValueError):
    pass


class InvalidMap(PodsError, ValueError):
    pass


class FormatError(PodsError, ValueError):
    """A file exists but does not follow the expected on-disk layout."""


class DimensionMismatch(PodsError, ValueError):
    pass


class CatalogMismatch(PodsError, ValueError):
    pass


class ShapeMismatch(PodsError, ValueError):
    pass


class DomainError(PodsError, ValueError):
    pass


class NoOodEvidence(PodsError):
    """The OOD class has neither ground-truth nor predicted segments."""


class NoInDistributionEvidence(PodsError):
    pass


class MissingPrediction(PodsError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"{len(self.missing)} item(s) have no prediction: {self.missing[:5]}")


class NoCenters(PodsError):
    pass


class BadTemperature(PodsError, ValueError):
    pass


class NoPositives(PodsError):
    pass


class NoInstances(PodsError):
    pass


class EmptyBinStats(PodsError):
    pass


class RejectLowVisibility(PodsError):
    pass


class NonFinite(PodsError, ValueError):
    pass


class KinkProximity(PodsError):
    pass
