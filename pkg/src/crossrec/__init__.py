"""Cold-start cross-domain recommendation toolkit.

Frozen per-domain BPR backbones, a plug-in alignment adapter trained with
contrastive, scale-alignment, and reconstruction terms, a mapping-function
baseline, leave-one-out ranking evaluation, and a config-driven pipeline.
"""

__version__ = "0.1.0"
