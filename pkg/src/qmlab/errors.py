"""Exception types raised by the lab."""


class QMLabError(ValueError):
    """Base class for every error the lab raises on bad input."""


class DegenerateStateError(QMLabError):
    def __init__(self, msg="degenerate state"):
        super().__init__(msg)


class DimensionError(QMLabError):
    pass


class InsufficientDimensionError(QMLabError):
    def __init__(self, msg="insufficient dimension"):
        super().__init__(msg)


class RankError(QMLabError):
    def __init__(self, msg="projector rank too small for requested n"):
        super().__init__(msg)


class UndefinedConditionalError(QMLabError):
    def __init__(self, msg="undefined conditional"):
        super().__init__(msg)


class NotDeterministicError(QMLabError):
    def __init__(self, msg="not deterministic"):
        super().__init__(msg)


class InvarianceError(QMLabError):
    def __init__(self, msg="unitary does not fix target"):
        super().__init__(msg)
