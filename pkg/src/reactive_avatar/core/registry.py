"""
Gradient check registry module.

This module provides a registry of gradient checks, so the CLI and the
tests can list and run every differentiable operation's analytic versus
finite-difference comparison through one interface.
"""

from typing import Callable, Dict, List, Optional

from pydantic import BaseModel


class GradCheckResult(BaseModel):
    """
    Outcome of one gradient check.

    Args:
        name: The registered check name.
        rel_error: Relative L2 error between backprop and finite differences.
        tolerance: Maximum admitted relative error.
        parameters: Number of scalar coordinates compared.
        error: Failure message when the check itself raised.
    """

    name: str
    rel_error: float
    tolerance: float = 1e-4
    parameters: int = 0
    error: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.error is None and self.rel_error < self.tolerance


GradCheck = Callable[[], GradCheckResult]


class GradCheckRegistry:
    """
    Registry for gradient checks.

    Checks are zero-argument callables returning a GradCheckResult.
    """

    _registry: Dict[str, GradCheck] = {}

    @classmethod
    def register(cls, name: str, check: GradCheck) -> None:
        """
        Register a check under a name.

        Raises:
            ValueError: If a check is already registered under the name.
        """
        if name in cls._registry:
            raise ValueError(f"Gradient check '{name}' is already registered")
        cls._registry[name] = check

    @classmethod
    def unregister(cls, name: str) -> None:
        cls._registry.pop(name, None)

    @classmethod
    def get_check(cls, name: str) -> GradCheck:
        """
        Get a registered check.

        Raises:
            KeyError: If no check is registered under the name.
        """
        if name not in cls._registry:
            raise KeyError(f"No gradient check registered as '{name}'")
        return cls._registry[name]

    @classmethod
    def run(cls, names: Optional[List[str]] = None) -> List[GradCheckResult]:
        """
        Run checks in registration order.

        Args:
            names: Subset to run; all checks when None.

        Returns:
            One result per check. A check that raises is reported as failed.
        """
        selected = list(cls._registry) if names is None else names
        results = []
        for name in selected:
            check = cls.get_check(name)
            try:
                results.append(check())
            except Exception as e:
                results.append(GradCheckResult(name=name, rel_error=float("inf"), error=str(e)))
        return results

    @classmethod
    def get_available_checks(cls) -> Dict[str, GradCheck]:
        return cls._registry.copy()


def register_check(name: str) -> Callable[[GradCheck], GradCheck]:
    """Decorator registering a function as a gradient check."""

    def decorator(check: GradCheck) -> GradCheck:
        GradCheckRegistry.register(name, check)
        return check

    return decorator
