"""Exception types shared across the package."""


class MsbnIdsError(Exception):
    """Base class for all package-specific failures."""


class InvalidAssignmentError(MsbnIdsError):
    """An assignment references an unknown variable or state, or misses one."""


class InconsistentEvidenceError(MsbnIdsError):
    """The observed evidence has probability zero under the model."""


class NetworkTooLargeError(MsbnIdsError):
    """Brute-force enumeration would exceed the configured entry cap."""


class InsufficientDataError(MsbnIdsError):
    """Parameter fitting was asked to run on an empty record set."""


class OutOfDomainError(MsbnIdsError):
    """A sub-domain operation referenced a variable outside that sub-domain."""


class InvalidMsbnError(MsbnIdsError):
    """Compilation was attempted on a sectioned network that fails validation."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ModelFormatError(MsbnIdsError):
    """A model file could not be parsed into a network."""


class KddFormatError(MsbnIdsError):
    """A connection-record line does not match the expected field layout."""


class UnknownLabelError(MsbnIdsError):
    """A connection record carries a label outside the known attack map."""
