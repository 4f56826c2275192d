"""Exception types shared across the pipeline."""


class CodeSearchError(Exception):
    """Base class for all pipeline errors."""


class LexError(CodeSearchError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class ParseError(CodeSearchError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class ContractError(CodeSearchError, ValueError):
    """A documented precondition was violated by the caller."""


class IngestError(CodeSearchError):
    pass


class DivergenceError(CodeSearchError):
    """Training produced a non-finite loss."""


class ArtifactError(CodeSearchError):
    """A saved artifact is missing files or fails its hash check."""
