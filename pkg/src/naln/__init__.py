"""Align EEG epochs with frozen image embeddings and inspect what the encoders learned.

Submodules: ``tensor`` (reverse-mode autodiff), ``preproc``, ``encoders``,
``trainer``, ``retrieval``, ``attribution``, ``evalstats``, ``synthgen``,
``io`` and ``cli``.
"""

from .errors import NalnError

__version__ = "0.1.0"
__all__ = ["NalnError", "__version__"]
