"""Exception types shared across the package."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class ShapeError(ContractError):
    """Operand dimensions are incompatible."""


class CategoryError(ContractError):
    """A categorical index fell outside its table's range."""


class DataError(ContractError):
    """Input data violates the record schema or its invariants."""


class NumericError(ArithmeticError):
    """A computation produced or received non-finite values."""


class DivergenceError(NumericError):
    """Training loss became non-finite."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


class ModelFileError(ValueError):
    """Base class for model (de)serialization failures."""


class ModelFormatError(ModelFileError):
    """Model file is structurally malformed."""


class ModelChecksumError(ModelFileError):
    """Model file CRC-32 does not match its contents."""


class ModelVersionError(ModelFileError):
    """Model file declares an unsupported format version."""
