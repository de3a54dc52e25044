"""Shared exception base for the package.

Every domain error raised by this package derives from VddError so callers
(notably the CLI) can distinguish data problems from genuine bugs.
"""


class VddError(Exception):
    pass
