"""Weight-manipulation training for imbalanced, noisy web-style data."""

try:
    from ._urnet import *  # noqa: F401,F403
    from ._urnet import __doc__  # noqa: F401
except ImportError:
    # in-tree builds put the extension on PYTHONPATH instead of the package dir
    from _urnet import *  # noqa: F401,F403
