from typing import Optional


class SmoothLocError(Exception):
    pass


class DomainError(SmoothLocError, ValueError):
    pass


class PreconditionError(SmoothLocError, ValueError):
    pass


class ConfigurationError(SmoothLocError, ValueError):
    pass


class SpecParseError(SmoothLocError, ValueError):
    position: int

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class TailUnderflowError(SmoothLocError, ArithmeticError):
    point: float
    coordinate: Optional[int]

    def __init__(self, point: float, coordinate: Optional[int] = None):
        where = f"x={point!r}" if coordinate is None else f"coordinate {coordinate}, x={point!r}"
        super().__init__(f"smoothed density underflows at {where}; clamp the evaluation point")
        self.point = point
        self.coordinate = coordinate


class EstimatorError(SmoothLocError, RuntimeError):
    point: float
    coordinate: Optional[int]

    def __init__(self, point: float, coordinate: Optional[int] = None):
        where = f"x={point!r}"
        if coordinate is not None:
            where = f"coordinate {coordinate}, {where}"
        super().__init__(
            f"score evaluation underflowed at {where}; the initial estimate is likely far off"
        )
        self.point = point
        self.coordinate = coordinate
