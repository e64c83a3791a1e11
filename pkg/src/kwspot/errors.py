"""Exception hierarchy shared by all kwspot modules."""


class KwspotError(Exception):
    """Base class for every error raised by kwspot."""


class GeometryError(KwspotError):
    pass


class DegenerateGeometry(GeometryError):
    pass


class InvalidGrid(GeometryError):
    pass


class EmptyMask(GeometryError):
    pass


class DataError(KwspotError):
    """Base for dataset / file-format problems (CLI exit code 2)."""


class SchemaError(DataError):
    def __init__(self, message, index=None):
        self.index = index
        if index is not None:
            message = f"record {index}: {message}"
        super().__init__(message)


class InvariantError(DataError):
    def __init__(self, message, index=None):
        self.index = index
        if index is not None:
            message = f"record {index}: {message}"
        super().__init__(message)


class VocabError(DataError):
    pass


class IoError(DataError):
    pass


class AtlasGenerationError(KwspotError):
    pass


class PlacementError(KwspotError):
    pass


class DegenerateBox(KwspotError):
    pass


class ShapeError(KwspotError):
    pass


class EvalError(KwspotError):
    pass


class ConfigError(KwspotError):
    pass


class NonFiniteLoss(KwspotError):
    def __init__(self, message, sample_ids=()):
        self.sample_ids = list(sample_ids)
        super().__init__(f"{message}; batch sample ids: {self.sample_ids}")
