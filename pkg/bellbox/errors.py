class BellboxError(Exception):
    """Base class for every error raised by bellbox.

    :param code: stable, machine-parseable identifier printed by the CLI.
    :param exit_code: process exit status used by the CLI.
    """

    code = "domain-error"
    exit_code = 1


class NonFiniteTensorError(BellboxError, ValueError):
    code = "non-finite"


class TensorFormatError(BellboxError):
    code = "bad-tensor-file"


class BadMagicError(TensorFormatError):
    code = "bad-magic"


class TruncatedPayloadError(TensorFormatError):
    code = "truncated-payload"


class UnknownDtypeError(TensorFormatError):
    code = "unknown-dtype"


class UnsupportedVersionError(TensorFormatError):
    code = "unsupported-version"


class DtypeMismatchError(TensorFormatError):
    code = "dtype-mismatch"


class CsvSchemaError(BellboxError, ValueError):
    code = "csv-schema"


class ShapeError(BellboxError, ValueError):
    code = "shape-mismatch"


class ConfigError(BellboxError, ValueError):
    code = "invalid-config"


class DomainError(BellboxError, ValueError):
    code = "domain"


class InsufficientSamplesError(BellboxError, ValueError):
    code = "insufficient-samples"


class StaleTraceError(BellboxError):
    code = "stale-trace"


class UninitializedEmaError(BellboxError):
    code = "uninitialized-ema"


class EncodingError(BellboxError, ValueError):
    code = "unrepresentable"


class EmptyInputError(BellboxError, ValueError):
    code = "empty-input"


class DivergenceError(BellboxError):
    code = "diverged"
