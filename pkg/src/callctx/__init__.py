"""Toolkit for building and evaluating function-call argument completion datasets.

The pipeline stages are: environment building (``environments``), call
extraction (``extraction``), analyzer-backed resolution (``wire``,
``analyzer_server``, ``bridge``), context assembly (``assembly``), split
construction (``splits``) and evaluation (``metrics``).  The ``cli`` module
ties them together.
"""

__version__ = "0.1.0"
