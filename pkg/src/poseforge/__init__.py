"""Synthetic-image pose classification toolkit.

Modules: ``rotmath`` (quaternions), ``posespace`` (viewpoint sampling and
pose labels), ``renderer`` (software rasterizer and image I/O), ``dataset``
(labelled datasets and manifests), ``classifier`` (two-layer softmax
network), ``evaluation`` (metrics and reports) and ``cli``.
"""

__version__ = "0.1.0"
