class GmahError(Exception):
    exit_code = 1


class DimensionError(GmahError):
    exit_code = 4


class NumericError(GmahError):
    exit_code = 4

    def __init__(self, message, layer=None):
        if layer is not None:
            message = "{} (layer {})".format(message, layer)
        super().__init__(message)
        self.layer = layer


class ConsistencyError(GmahError):
    exit_code = 4


class ContractError(GmahError):
    exit_code = 2


class DomainError(ContractError):
    pass


class OrderingError(ContractError):
    pass


class LifecycleError(ContractError):
    pass


class ConformanceError(ContractError):
    pass


class ConfigError(GmahError):
    exit_code = 2

    def __init__(self, message, key=None, line=None):
        if key is not None:
            message = "{}: {}".format(key, message)
        if line is not None:
            message = "{} (line {})".format(message, line)
        super().__init__(message)
        self.key = key
        self.line = line


class DependencyError(GmahError):
    exit_code = 3


class SchemaError(GmahError):
    exit_code = 2
