from typing import Optional


class DataSpaceError(Exception):
    kind = "error"


class ValidationError(DataSpaceError, ValueError):
    kind = "validation_error"


class ConflictError(DataSpaceError):
    kind = "conflict"

    def __init__(self, what: str, identifier: str):
        super().__init__(f"{what} {identifier!r} already exists")


class NotFoundError(DataSpaceError):
    kind = "not_found"

    def __init__(self, what: str, identifier: str):
        super().__init__(f"{what} {identifier!r} not found")


class AuthenticationError(DataSpaceError):
    kind = "authentication_failed"

    def __init__(self, detail: str = "invalid credentials"):
        super().__init__(detail)


class InvalidTokenError(DataSpaceError):
    kind = "invalid_token"

    def __init__(self, reason: str):
        super().__init__(f"Identity token rejected: {reason}")
        self.reason = reason


class KeyMismatchError(DataSpaceError):
    kind = "key_mismatch"

    def __init__(self):
        super().__init__("Presentation key does not match the credential subject key")


class StatusListFullError(DataSpaceError):
    kind = "status_list_full"

    def __init__(self, capacity: int):
        super().__init__(f"No free index left in status list of capacity {capacity}")


class IndexOutOfRangeError(DataSpaceError):
    kind = "out_of_range"

    def __init__(self, index: int, bit_count: int):
        super().__init__(f"Status index {index} outside list of {bit_count} bits")


class CorruptStatusListError(DataSpaceError):
    kind = "corrupt_status_list"

    def __init__(self, detail: str):
        super().__init__(f"Could not decode status list: {detail}")


class UnclassifiableRequestError(DataSpaceError):
    kind = "unclassifiable_request"

    def __init__(self, method: str, path: str, detail: Optional[str] = None):
        message = f"Cannot classify {method} {path}"
        if detail:
            message += f": {detail}"
        super().__init__(message)


class ServiceUnavailableError(DataSpaceError):
    kind = "service_unavailable"

    def __init__(self, service: str, detail: str):
        super().__init__(f"{service} unavailable: {detail}")
