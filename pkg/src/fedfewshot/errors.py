"""Exception hierarchy.

Three families map onto the CLI exit codes: :class:`ConfigError` (1),
:class:`DataError` (2) and :class:`FederationError` / everything else (3).
"""


class FedFewShotError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(FedFewShotError, ValueError):
    pass


class DataError(FedFewShotError, ValueError):
    pass


# dsp ---------------------------------------------------------------------

class ClipTooShort(DataError):
    pass


class NonFiniteInput(DataError):
    pass


class RateMismatch(DataError):
    pass


class NoiseTooShort(DataError):
    pass


class BadFeatureBlock(DataError):
    pass


# tensor engine -----------------------------------------------------------

class ShapeMismatch(FedFewShotError, ValueError):
    pass


class NotScalar(FedFewShotError, ValueError):
    pass


class DetachedGraph(FedFewShotError, RuntimeError):
    pass


class MissingGrad(FedFewShotError, RuntimeError):
    pass


class NonFiniteTensor(FedFewShotError, FloatingPointError):
    pass


# layers ------------------------------------------------------------------

class BadRatio(ConfigError):
    pass


class KernelTooLarge(ConfigError):
    pass


class InputTooSmall(ShapeMismatch):
    pass


# few-shot ----------------------------------------------------------------

class InsufficientClasses(DataError):
    pass


class InsufficientSamplesPerClass(DataError):
    def __init__(self, label, available, required):
        self.label = label
        self.available = available
        self.required = required
        super().__init__(
            f"class {label!r} has {available} samples, episode needs {required}"
        )


class EmptyClass(DataError):
    pass


class EmbedDimMismatch(ShapeMismatch):
    pass


# federation / protocol ---------------------------------------------------

class FederationError(FedFewShotError, RuntimeError):
    pass


class StructureMismatch(FederationError):
    pass


class ZeroTotalTasks(FederationError):
    pass


class ClientTimeout(FederationError):
    def __init__(self, client_id, deadline_s=None):
        self.client_id = client_id
        self.deadline_s = deadline_s
        msg = f"client {client_id} timed out"
        if deadline_s is not None:
            msg += f" after {deadline_s:g} s"
        super().__init__(msg)


class ProtocolError(FederationError):
    pass


class BadMagic(ProtocolError):
    pass


class VersionMismatch(ProtocolError):
    pass


class TruncatedPayload(ProtocolError):
    pass


class ChecksumMismatch(ProtocolError):
    pass


# data hub ----------------------------------------------------------------

class InsufficientSamplesForSplit(DataError):
    pass


class UnknownLabel(DataError):
    pass


class PairNotDistinct(DataError):
    pass


class SpecOverlap(DataError):
    pass


# metrics -----------------------------------------------------------------

class EmptyInput(DataError):
    pass
