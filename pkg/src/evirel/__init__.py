"""evirel: joint relation and evidence-sentence extraction for documents.

A compact, numpy-backed implementation of evidence-aware document-level
relation extraction: a small self-attention encoder with reverse-mode
autodiff, an adaptive-threshold relation classifier, a per-pair evidence
scorer, heuristic silver-evidence rules, and evidence-fused inference
through a one-parameter blending layer.
"""

__version__ = "0.1.0"
