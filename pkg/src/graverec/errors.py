"""Exception hierarchy shared across the package."""


class GraverecError(Exception):
    """Base class for all package errors."""


# -- document / page store ----------------------------------------------------

class EmptyDocument(GraverecError):
    pass


class InvalidScaleConfig(GraverecError):
    pass


class UndecodableRaster(GraverecError):
    def __init__(self, page_index: int, reason: str = ""):
        self.page_index = page_index
        super().__init__(f"page {page_index} is not a decodable raster{': ' + reason if reason else ''}")


class UnknownPage(GraverecError):
    pass


class UnknownDocument(GraverecError):
    pass


class StorageFailure(GraverecError):
    pass


# -- detection ingest ---------------------------------------------------------

class SchemaError(GraverecError):
    def __init__(self, line: int, field: str, reason: str):
        self.line = line
        self.field = field
        super().__init__(f"line {line}, field {field!r}: {reason}")


class UnknownLabel(GraverecError):
    def __init__(self, label: str, line: int | None = None):
        self.label = label
        self.line = line
        at = f" (line {line})" if line is not None else ""
        super().__init__(f"unknown class label {label!r}{at}")


class DetectorFailure(GraverecError):
    pass


# -- grouping -----------------------------------------------------------------

class PageMismatch(GraverecError):
    pass


# -- geometry -----------------------------------------------------------------

class NoContours(GraverecError):
    pass


class DegenerateContour(GraverecError):
    pass


# -- calibration --------------------------------------------------------------

class UnparseableLabel(GraverecError):
    def __init__(self, text: str):
        self.text = text
        super().__init__(f"cannot parse scale label {text!r}")


class NonPositiveInput(GraverecError):
    pass


# -- orientation --------------------------------------------------------------

class ZeroVector(GraverecError):
    pass


class InvalidSector(GraverecError):
    pass


class AdapterFailure(GraverecError):
    pass


# -- morphometrics ------------------------------------------------------------

class TooFewPoints(GraverecError):
    pass


class TooFewSamples(GraverecError):
    pass


# -- records / workflow -------------------------------------------------------

class IllegalTransition(GraverecError):
    pass


class DuplicateGraveId(GraverecError):
    def __init__(self, grave_id: str):
        self.grave_id = grave_id
        super().__init__(f"grave id {grave_id!r} already recorded in this document")


class ValidationPayloadError(GraverecError):
    pass


class StaleVersion(GraverecError):
    pass


class UnknownRecord(GraverecError):
    pass


class QueueEmpty(GraverecError):
    pass


class NoMatchedGraves(GraverecError):
    pass


# -- synthetic generator ------------------------------------------------------

class InvalidParams(GraverecError):
    pass
