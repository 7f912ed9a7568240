"""Neural extractive summarization: data construction, models, evaluation."""

from extsum.errors import PipelineError

__version__ = "0.1.0"

__all__ = ["PipelineError", "__version__"]
