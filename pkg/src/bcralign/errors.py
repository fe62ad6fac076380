"""Exception types raised across the package."""


class BcrError(Exception):
    """Base class for all errors raised by bcralign."""


class DimensionMismatchError(BcrError, ValueError):
    pass


class EmptyInputError(BcrError, ValueError):
    pass


class DegenerateAlignmentError(BcrError, ValueError):
    """Too few visible landmarks, or no spread among them."""


class DegenerateNormalizerError(BcrError, ValueError):
    pass


class SingularSystemError(BcrError, ValueError):
    pass


class SingleClassError(BcrError, ValueError):
    pass


class UnimputableLandmarkError(BcrError, ValueError):
    """A landmark is missing from every training shape."""


class ZeroVarianceError(BcrError, ValueError):
    pass


class UnderPopulatedNodeError(BcrError, RuntimeError):
    pass


class ParseError(BcrError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class ModelFileError(BcrError):
    """Base class for model container load failures."""


class BadMagicError(ModelFileError):
    pass


class VersionMismatchError(ModelFileError):
    pass


class TruncatedSectionError(ModelFileError):
    def __init__(self, section, message=None):
        self.section = section
        super().__init__(message or f"section {section!r} is truncated")
