# analyzers/base.py

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence, Tuple, TypeVar

from core.errors import AnalysisError

T = TypeVar('T')


@dataclass
class BaseAnalysis:
    """Base class for analysis results."""
    label: str
    success: bool
    error_message: Optional[str] = None

    def fail(self, message: str) -> 'BaseAnalysis':
        self.success = False
        self.error_message = message
        return self


class BaseAnalyzer(ABC):
    """Base class for all trajectory analyzers.

    Analyzers wrap the pure analysis functions: they log and convert
    failures into unsuccessful results instead of raising.
    """

    def __init__(self, logger=None):
        self.logger = logger or logging.getLogger(f'gradvac.analysis.{self.__class__.__name__}')

    @abstractmethod
    def analyze(self, *args, **kwargs) -> BaseAnalysis:
        """Run the analysis. Must be implemented by subclasses."""
        pass

    def safe_call(self, label: str, func: Callable[..., T], *args,
                  **kwargs) -> Tuple[Optional[T], Optional[str]]:
        """Call func, returning (result, None) or (None, error message)."""
        try:
            return func(*args, **kwargs), None
        except AnalysisError as e:
            self.logger.error(f"Error in {label}: {e}")
            return None, str(e)
        except Exception as e:
            self.logger.error(f"Unexpected error in {label}: {e}", exc_info=True)
            return None, str(e)

    @staticmethod
    def select_steps(items: Sequence[Any], step_range: Optional[Tuple[int, int]]) -> list:
        """Keep items whose .step lies in the inclusive range."""
        if step_range is None:
            return list(items)
        start, stop = step_range
        if start > stop:
            raise AnalysisError(f"Empty step range [{start}, {stop}]")
        return [item for item in items if start <= item.step <= stop]
