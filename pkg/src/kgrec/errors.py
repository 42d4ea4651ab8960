"""Exception types shared across the package."""


class ParseError(ValueError):
    """A data file line could not be parsed; message carries the line number."""


class EmptyDatasetError(ValueError):
    """An interaction file contained no usable pairs."""


class AlignmentError(ValueError):
    """The item-entity alignment is not a partial injection."""


class ConfigurationError(ValueError):
    """Requested sizes or options are infeasible or inconsistent."""
