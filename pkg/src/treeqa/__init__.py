"""Tree-structured knowledge QA: path retrieval, structure-aware descriptions, evaluation."""

__version__ = "0.1.0"
