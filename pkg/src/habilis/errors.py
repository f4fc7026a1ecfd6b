"""Exception types. Each carries a stable machine-readable ``code``."""

from __future__ import annotations


class HabilisError(Exception):
    code = "ERROR"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details

    def to_doc(self) -> dict:
        return {"code": self.code, "message": self.message}


class UnknownGeoEntity(HabilisError):
    code = "UNKNOWN_GEO_ENTITY"


class UnknownUser(HabilisError):
    code = "UNKNOWN_USER"


class MalformedStore(HabilisError):
    code = "MALFORMED_STORE"

    def __init__(self, message: str = "", violations=()):
        super().__init__(message, violations=list(violations))
        self.violations = list(violations)


class NotMigrated(HabilisError):
    code = "NOT_MIGRATED"


class MalformedRequest(HabilisError):
    code = "MALFORMED_REQUEST"


class CommandRejected(HabilisError):
    """An admin command would break referential integrity (or is otherwise invalid)."""

    code = "REJECTED"

    def __init__(self, constraint: str, message: str = ""):
        super().__init__(message or constraint, constraint=constraint)
        self.constraint = constraint

    def to_doc(self) -> dict:
        return {"code": self.code, "message": self.message, "constraint": self.constraint}


class JournalCorrupt(HabilisError):
    code = "JOURNAL_CORRUPT"

    def __init__(self, path, offset: int, message: str = ""):
        super().__init__(f"{path}: corrupt journal record at byte offset {offset}" + (f": {message}" if message else ""))
        self.path = path
        self.offset = offset


class UpstreamUnreachable(HabilisError):
    code = "UPSTREAM_UNREACHABLE"


class Unauthorized(HabilisError):
    code = "UNAUTHORIZED"
