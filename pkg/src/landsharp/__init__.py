"""Loss-landscape sharpness toolkit for small audio classifiers.

Submodules: ``tensor`` (autodiff engine), ``nn`` (models), ``optim``,
``features`` (log-mel front end), ``synth`` (synthetic device-shift data),
``trainer``, ``landscape`` (surface scans), ``sharpness``, ``study``
(grid harness), ``checkpoint``, ``plots`` and ``cli``.
"""

__version__ = "0.1.0"
