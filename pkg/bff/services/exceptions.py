class BffException(Exception):
    def __init__(self, message: str, exit_code: int = 1):
        super().__init__(message)
        self.message = message
        self.exit_code = exit_code


class DomainError(BffException, ValueError):
    def __init__(self, message: str):
        super().__init__(message, 2)


class InvalidNetworkError(BffException):
    def __init__(self, message: str):
        super().__init__(message, 3)


class SingularSystemError(BffException):
    def __init__(self, message: str, component: list[int]):
        super().__init__(message, 4)
        self.component = component


class DeadBranchError(BffException):
    def __init__(self, message: str):
        super().__init__(message, 3)


class IntegrationError(BffException):
    def __init__(self, message: str, time: float, bubble_id: int | None = None):
        super().__init__(message, 5)
        self.time = time
        self.bubble_id = bubble_id


class InputError(BffException):
    def __init__(self, message: str):
        super().__init__(message, 6)


class StageError(BffException):
    """Wraps a service failure with the CLI stage it happened in"""

    def __init__(self, stage: str, cause: BffException):
        super().__init__(f"[{stage}] {cause.message}", cause.exit_code)
        self.stage = stage
        self.cause = cause
