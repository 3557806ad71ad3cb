# Apache License, Version 2.0, refer to LICENSE.txt
"""Hidden tree Markov models over labeled positional trees.

Thin package wrapper around the compiled extension: finite top-down and
bottom-up models trained by EM, exact inference with a brute-force
enumeration oracle, and a truncated nonparametric bottom-up sampler.
"""

try:
    from ._treehmm_core import *  # noqa: F401,F403  (installed layout)
    from ._treehmm_core import __version__  # noqa: F401
except ImportError:  # in-build layout: extension on PYTHONPATH
    from _treehmm_core import *  # noqa: F401,F403
    from _treehmm_core import __version__  # noqa: F401
