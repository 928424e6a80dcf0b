from django.core.management.base import CommandError


class EllikornError(Exception):
    """Базовая ошибка инструментов. Раннер переводит её в код выхода 1."""


# --- операторы и полиномы ---
class MalformedSpec(EllikornError):
    pass


class InhomogeneousOrder(EllikornError):
    pass


class ZeroOperator(EllikornError):
    pass


class DimensionMismatch(EllikornError):
    pass


# --- эллиптичность ---
class NotCElliptic(EllikornError):
    pass


class NotElliptic(EllikornError):
    pass


class WitnessInvalid(EllikornError):
    pass


class OrderTooLow(EllikornError):
    pass


# --- проекции и квадратуры ---
class SingularGram(EllikornError):
    pass


class BallOutsideGrid(EllikornError):
    pass


class CoincidentPoints(EllikornError):
    pass


class DegenerateDenominator(EllikornError):
    pass


class ZeroDenominator(EllikornError):
    pass


# --- области и покрытия ---
class DisconnectedMask(EllikornError):
    pass


class EmptyMask(EllikornError):
    pass


class UnreachableCube(EllikornError):
    pass


class DomainTooThin(EllikornError):
    pass


# --- разложения и максимальные функции ---
class MomentsNotZero(EllikornError):
    pass


class ScaleTooFine(EllikornError):
    pass


class ThresholdTooSmall(EllikornError):
    pass


class TooFewPoints(EllikornError):
    pass


class NonPowerOfTwoGrid(EllikornError):
    pass


# --- неравенства Корна ---
class SingularPencil(EllikornError):
    pass


class InvalidOrlicz(EllikornError):
    pass


# --- CLI ---
class UsageError(EllikornError, CommandError):
    pass


class FileError(EllikornError):
    pass
