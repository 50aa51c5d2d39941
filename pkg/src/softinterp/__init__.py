"""Runtime error prediction by soft execution of an imperative mini-language.

Two discrete reference interpreters provide ground truth; a differentiable one
learns from it: the model propagates a soft instruction pointer over the
control flow graph and predicts whether a program raises, which error kind,
and (without line supervision) which line raised.
"""

from __future__ import annotations

from .corpus import CorpusManifest, generate_corpus
from .estimators import ErrorPredictor, NotFittedError

__version__ = "0.1.0"

__all__ = [
    "CorpusManifest",
    "ErrorPredictor",
    "NotFittedError",
    "generate_corpus",
    "__version__",
]
