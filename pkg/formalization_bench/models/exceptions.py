class ExceptionWithCause(Exception):
    def __init__(self, message: str, *, cause: str = None):
        super().__init__(message)
        self.cause = cause


# Corpus and store
class CorpusError(ExceptionWithCause):
    pass


class DuplicateIdError(CorpusError):
    pass


class InvariantViolationError(ExceptionWithCause):
    pass


class StoreConflictError(ExceptionWithCause):
    pass


class StorageError(ExceptionWithCause):
    pass


# Toolbelt
class ToolchainConfigurationError(ExceptionWithCause):
    pass


class SandboxViolationError(ExceptionWithCause):
    pass


class ToolArgumentError(ExceptionWithCause):
    pass


# Gateway
class GatewayError(ExceptionWithCause):
    pass


class DecodeError(GatewayError):
    def __init__(self, message: str, *, raw_body: str = '', cause: str = None):
        super().__init__(message, cause=cause)
        self.raw_body = raw_body


class FixtureMissError(ExceptionWithCause):
    """Replay mode found no stored response; never retried"""

    def __init__(self, message: str, *, key: str, cause: str = None):
        super().__init__(message, cause=cause)
        self.key = key


class ScriptExhaustedError(ExceptionWithCause):
    pass


# Judging
class JudgeParseError(ExceptionWithCause):
    pass


class JudgeInvalidError(ExceptionWithCause):
    pass


# Analysis
class MissingCellError(ExceptionWithCause):
    pass


class DuplicateCellError(ExceptionWithCause):
    pass


class UsageError(ExceptionWithCause):
    pass
