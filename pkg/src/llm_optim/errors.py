"""Exception hierarchy shared across the package."""


class OptimError(Exception):
    """Base class for every error raised by llm_optim."""


# history buffer
class StepMismatch(OptimError):
    pass


class EmptyBuffer(OptimError):
    pass


# templates
class TemplateError(OptimError):
    pass


class UnbalancedBlock(TemplateError):
    pass


class UnknownTag(TemplateError):
    pass


class MissingVariable(TemplateError):
    def __init__(self, path: str):
        super().__init__(f"missing template variable: {path}")
        self.path = path


class TypeMismatch(TemplateError):
    pass


# environments
class NonFinite(OptimError):
    pass


# optimizer
class ParseFailure(OptimError):
    pass


class EmptyCompletion(OptimError):
    pass


class RunAborted(OptimError):
    """Raised by the optimization loop; carries the partial trace."""

    def __init__(self, cause: Exception, trace):
        super().__init__(f"run aborted: {cause}")
        self.cause = cause
        self.trace = trace


# backends
class BackendError(OptimError):
    pass


class AuthError(BackendError):
    pass


class RateLimited(BackendError):
    pass


class BackendTimeout(BackendError):
    pass


class MalformedResponse(BackendError):
    pass


class ExhaustedScript(BackendError):
    pass


class MissingFeedback(BackendError):
    pass


# harness
class EmptyTrace(OptimError):
    pass


class ConfigError(OptimError):
    pass
