"""
Adversarial Go Lab - Error hierarchy

Every error carries the process exit code the CLI maps it to.
"""

from typing import Optional


class GoLabError(Exception):
    """Base class for all lab errors"""

    exit_code: int = 1


# Rules

class IllegalMove(GoLabError):
    """A move rejected by the rules engine"""


class OccupiedVertex(IllegalMove):
    pass


class SuicideMove(IllegalMove):
    pass


class SuperkoViolation(IllegalMove):
    pass


class GameOver(GoLabError):
    pass


# Networks

class ShapeMismatch(GoLabError):
    pass


class NonFiniteLoss(GoLabError):
    pass


class CorruptCheckpoint(GoLabError):
    exit_code = 3


class VersionMismatch(GoLabError):
    exit_code = 3


# Data and configuration

class DomainError(GoLabError):
    """Argument outside the domain of a formula"""


class EmptyWindow(GoLabError):
    pass


class ConfigError(GoLabError):
    exit_code = 2


class StorageError(GoLabError):
    exit_code = 3


# Curriculum

class InsufficientData(GoLabError):
    pass


class ScheduleExhausted(GoLabError):
    pass


class BudgetExhausted(GoLabError):
    """Raised when a phase budget runs out; phases treat it as normal completion"""


# Evaluation

class CheckpointMissing(GoLabError):
    exit_code = 2


class DisconnectedGraph(GoLabError):
    pass


class NeverAchieved(GoLabError):
    pass


# Analysis

class ParseError(GoLabError):
    exit_code = 2

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class ReplayError(GoLabError):
    def __init__(self, message: str, move_index: Optional[int] = None):
        super().__init__(message)
        self.move_index = move_index


class MixedSizes(GoLabError):
    exit_code = 2
