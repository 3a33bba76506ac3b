"""Cross-vocabulary knowledge distillation toolkit for entity-aware transcription.

Modules: :mod:`transcript` (tagged transcripts), :mod:`annotator`,
:mod:`chunker`, :mod:`ot` (Sinkhorn alignment), :mod:`losses`, :mod:`toy`
(desk-scale training harness), :mod:`metrics`, :mod:`cli`.
"""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
