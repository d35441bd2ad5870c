"""Exception base shared by every module.

Each module defines its own subclasses; ``module`` is used by the CLI to
prefix error lines so failures can be traced to the stage that raised them.
"""

from __future__ import annotations


class GestaltFuseError(Exception):
    """Base class for all errors raised by the package."""

    @property
    def module(self) -> str:
        return type(self).__module__.rsplit(".", 1)[-1]

    @property
    def code(self) -> str:
        return type(self).__name__
