"""Point cloud quality assessment workbench.

Distortion synthesis, full-reference metric scoring, pseudo-MOS annotation
and a sparse-CNN no-reference metric, all driven by reproducible manifests.
"""

__version__ = "0.1.0"
