"""Large-scale multi-label text classification toolkit.

Subpackages cover the full pipeline: corpus ingestion and TF-IDF
features (:mod:`lmtc.corpus`), the label hierarchy with its annotation
proximity measure and frequency buckets (:mod:`lmtc.hierarchy`),
probabilistic label trees (:mod:`lmtc.labeltree`), frozen label
representations (:mod:`lmtc.labelrep`), label-wise attention networks
(:mod:`lmtc.neural`), ranking metrics (:mod:`lmtc.metrics`), and the
``lmtc`` command line (:mod:`lmtc.cli`).
"""

__version__ = "0.1.0"
