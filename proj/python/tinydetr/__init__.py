"""Python face of the tinydetr C++ core."""

try:
    from ._tinydetr import *  # noqa: F401,F403  (installed layout)
    from ._tinydetr import __version__  # noqa: F401
except ImportError:  # in-tree use: the build directory provides _tinydetr
    from _tinydetr import *  # noqa: F401,F403
    from _tinydetr import __version__  # noqa: F401
