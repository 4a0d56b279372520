"""Exception hierarchy shared by all simulator modules.

Configuration and input-file problems are reported before cycle 0 and map
to CLI exit code 2.  Invariant violations indicate a bug in a mapping or
in the scheduler; they abort the simulation and map to exit code 1.
"""


class SimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(SimError):
    """Bad hardware/scenario configuration or unreadable input file."""


class ModelFormatError(ConfigError):
    """Model description file failed to parse or validate."""


class InvariantViolation(SimError):
    """A runtime invariant was broken; the simulation cannot continue."""


class InvalidPageError(InvariantViolation):
    """A virtual cache page was accessed without a valid table entry.

    This signals a scheduler or mapping bug: pages must be allocated and
    the page table programmed before any paged access.
    """


class ScratchpadOverflow(InvariantViolation):
    """A mapping candidate's working tiles exceed the core scratchpad."""
