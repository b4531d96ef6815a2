"""Multi-task full-reference proxy pretraining for no-reference video quality."""

from proxyvqa.errors import PipelineError, ValidationError

__version__ = "0.1.0"

__all__ = ["PipelineError", "ValidationError", "__version__"]
