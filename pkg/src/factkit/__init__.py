"""factkit: build, annotate, and evaluate factual consistency in
knowledge-grounded dialog.

Subpackages map one-to-one onto the pipeline stages: corpus ingestion,
text primitives, corruption-based data synthesis, retrieval, decoding,
detection, annotation aggregation, and the annotation task server.
"""

__version__ = "0.1.0"
