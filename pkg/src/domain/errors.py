class CimTrainError(Exception):
    pass


# Violated preconditions of the numeric kernels.
class ContractViolation(CimTrainError, ValueError):
    pass


class ShapeMismatchError(ContractViolation):

    def __init__(self, operation: str, left, right):
        self.operation = operation
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(f'{operation}: incompatible shapes {self.left} and {self.right}')


class QuantizerError(ContractViolation):
    pass


class IdxFormatError(CimTrainError):

    def __init__(self, path, message: str):
        self.path = str(path)
        super().__init__(f'{self.path}: {message}')


class BadMagicError(IdxFormatError):

    def __init__(self, path, expected: int, found: int):
        self.expected = expected
        self.found = found
        super().__init__(path, f'bad magic number {found:#010x}, expected {expected:#010x}')


class TruncatedFileError(IdxFormatError):

    def __init__(self, path, needed: int, available: int):
        self.needed = needed
        self.available = available
        super().__init__(path, f'truncated file, need {needed} bytes but found {available}')


class CountMismatchError(IdxFormatError):

    def __init__(self, path, images: int, labels: int):
        self.images = images
        self.labels = labels
        super().__init__(path, f'{images} images but {labels} labels')


class CheckpointError(CimTrainError):
    pass


class ConfigError(CimTrainError):

    def __init__(self, field: str, message: str, line: int = None, column: int = None):
        self.field = field
        self.message = message
        self.line = line
        self.column = column
        super().__init__(str(self))

    def __str__(self):
        location = f'config error at {self.field}'
        if self.line is not None:
            location += f' (line {self.line}, column {self.column})'
        return f'{location}: {self.message}'


class ProfileError(ConfigError):
    pass
