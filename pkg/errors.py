"""例外クラス群。ソルバーの「結果としての例外」はペイロードを保持する。"""
from typing import Any, FrozenSet, Optional


class KkmError(Exception):
    """Base class for every solver error raised by this project."""


# --- 入力検証 ---
class NegativeCoordinate(ValueError):
    def __init__(self, index: int, value: Any):
        super().__init__(f"barycentric coordinate {index} is negative: {value}")
        self.index = index
        self.value = value


class SumNotOne(ValueError):
    def __init__(self, total: Any):
        super().__init__(f"barycentric coordinates sum to {total}, not 1")
        self.total = total


class IndexOutOfRange(ValueError):
    pass


class ResolutionZero(ValueError):
    pass


class OutOfRange(ValueError):
    pass


class SettingError(ValueError):
    pass


# --- サイズ制限 ---
class TooLarge(KkmError):
    pass


class BudgetExceeded(KkmError):
    pass


class MissingWeights(KkmError):
    pass


# --- ソルバーの結果 ---
class NotCovered(KkmError):
    """Every score vanishes at ``point``: the covering hypothesis fails there."""

    def __init__(self, point: Any):
        super().__init__(f"point is not covered by any score: {point}")
        self.point = point


class Infeasible(KkmError):
    """No quota assignment exists; ``violating`` breaks the quota-Hall inequality."""

    def __init__(self, violating: FrozenSet[int], neighbours: int, demand: int):
        super().__init__(
            f"quota-Hall condition fails for rows {sorted(violating)}: "
            f"{neighbours} neighbours < demand {demand}"
        )
        self.violating = violating
        self.neighbours = neighbours
        self.demand = demand


class ExtractionFailed(KkmError):
    pass


class ResidualAboveTolerance(KkmError):
    def __init__(self, point: Any, residual: float):
        super().__init__(f"refinement budget exhausted with residual {residual:.3e}")
        self.point = point
        self.residual = residual


class SolverExhausted(KkmError):
    def __init__(self, message: str, residual: Optional[float] = None, point: Any = None):
        super().__init__(message)
        self.residual = residual
        self.point = point


class MatchingTooSmall(KkmError):
    def __init__(self, size: int, bound: int):
        super().__init__(f"support matching has size {size} < required {bound}")
        self.size = size
        self.bound = bound


class UnsupportedCertificate(KkmError):
    pass
