"""Exception hierarchy shared by all modules."""


class PmirisError(Exception):
    """Base class for toolkit errors."""


class InvalidInputError(PmirisError, ValueError):
    pass


class ManifestError(PmirisError, ValueError):
    """Malformed manifest row; carries the 1-based data row number and field."""

    def __init__(self, message: str, row: int | None = None, field: str | None = None):
        self.row = row
        self.field = field
        where = []
        if row is not None:
            where.append(f"row {row}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class SegmentationError(PmirisError):
    pass


class NormalizationError(PmirisError):
    pass


class EncoderError(PmirisError):
    pass


class MatchError(PmirisError):
    pass


class InsufficientOverlapError(MatchError):
    """Joint validity mask holds fewer bits than the configured minimum."""


class CalibrationError(PmirisError):
    pass
