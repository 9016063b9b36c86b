class ProplabException(Exception):
    """
    General proplab exception.
    """


class ProplabInputException(ProplabException):
    """
    To indicate invalid input data (non-finite values, empty or malformed logs).
    """

    def __init__(self, message: str, line_number: int = None):
        super().__init__(message)
        self.line_number = line_number


class ProplabValidationException(ProplabInputException):
    """
    To be thrown when an event log violates its per-user ordering contract.
    """

    def __init__(self, message: str, user: str = None, line_number: int = None):
        super().__init__(message, line_number=line_number)
        self.user = user


class ProplabArgumentException(ProplabException, ValueError):
    """
    To be thrown for invalid arguments or configuration values.
    """


class ProplabIndexException(ProplabException, IndexError):
    """
    To be thrown when a slot index is outside a propensity state.
    """


class ProplabStateException(ProplabException):
    """
    To be thrown for degenerate propensity states.
    """


class ProplabInitializationException(ProplabException):
    """
    To be thrown when the sampler cannot find a starting point.
    """
