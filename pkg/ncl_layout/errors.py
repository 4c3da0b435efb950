#!/usr/bin/env python3
"""
Exception base classes shared by all ncl_layout modules.
"""

# =============================================================================


class NclLayoutException(Exception):
    """
    Generic layout recovery exception
    """
    pass


class InputError(NclLayoutException):
    """
    Invalid, missing or malformed input data (files, arguments)
    """
    pass
