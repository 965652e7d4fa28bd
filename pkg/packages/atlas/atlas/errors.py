class AtlasError(Exception):
    """Base class; `module` names the pipeline stage that raised."""

    module = "atlas"

    @property
    def name(self) -> str:
        return type(self).__name__

    def line(self) -> str:
        return f"error={self.name} module={self.module} detail={self}"


# plant


class DimensionMismatch(AtlasError):
    module = "plant"


class DomainViolation(AtlasError):
    module = "plant"


class UnboundedDomain(AtlasError):
    module = "plant"


class BudgetExhausted(AtlasError):
    module = "plant"


# spaces


class ZeroVectorDraw(AtlasError):
    module = "spaces"


class OriginOutsideDomain(AtlasError):
    module = "spaces"


# search


class NoAcceptableControl(AtlasError):
    module = "search"

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class OriginNotAcceptable(AtlasError):
    module = "search"


# boundary


class InsufficientSamples(AtlasError):
    module = "boundary"


class DegenerateDirections(AtlasError):
    module = "boundary"


# librarybuild


class EmptyIntersection(AtlasError):
    module = "librarybuild"


class AllOriginsFailed(AtlasError):
    module = "librarybuild"


class StateFeedbackDimMismatch(AtlasError):
    module = "librarybuild"


class WaypointInfeasible(AtlasError):
    module = "librarybuild"

    def __init__(self, index: int, message: str, plan=None):
        super().__init__(f"waypoint {index}: {message}")
        self.index = index
        self.plan = plan


class FormatVersionMismatch(AtlasError):
    module = "librarybuild"


class CorruptFile(AtlasError):
    module = "librarybuild"


# oracle


class DimensionTooHigh(AtlasError):
    module = "oracle"


# cli


class ConfigInvalid(AtlasError):
    module = "cli"

    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


class FileUnreadable(AtlasError):
    module = "cli"
