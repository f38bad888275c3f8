"""Error types shared across the navigation engine.

Every error carries a stable ``code`` string so the service layer and the
CLI can map failures onto wire responses and exit codes without matching on
message text.
"""


class UsNavError(Exception):
    """Base class for all navigation-engine errors."""

    code = "ERROR"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)


class PoseMissingError(UsNavError):
    code = "POSE_MISSING"


class RangeError(UsNavError):
    code = "RANGE"


class ParseError(UsNavError):
    """Malformed log, volume, mesh or session input.

    ``line`` / ``offset`` locate the failure in the source when known.
    """

    code = "PARSE"

    def __init__(self, message: str = "", line: int | None = None,
                 offset: int | None = None):
        self.line = line
        self.offset = offset
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif offset is not None:
            where = f" (byte offset {offset})"
        super().__init__(f"{message}{where}")


class OrderError(UsNavError):
    code = "ORDER"


class DisconnectedError(UsNavError):
    code = "DISCONNECTED"


class FrameDroppedError(UsNavError):
    code = "FRAME_DROPPED"


class EmptySweepError(UsNavError):
    code = "EMPTY_SWEEP"


class BudgetError(UsNavError):
    code = "BUDGET"


class SeedConflictError(UsNavError):
    code = "SEED_CONFLICT"


class EmptySegmentError(UsNavError):
    code = "EMPTY_SEGMENT"


class InvalidPointError(UsNavError):
    code = "INVALID_POINT"


class UnknownDeviceError(UsNavError):
    code = "UNKNOWN_DEVICE"


class NotNavigatingError(UsNavError):
    code = "NOT_NAVIGATING"


class NavigationLostError(UsNavError):
    code = "NAVIGATION_LOST"


class NoClipsError(UsNavError):
    code = "NO_CLIPS"


class EmptyCohortError(UsNavError):
    code = "EMPTY_COHORT"
