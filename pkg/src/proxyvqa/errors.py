"""Exception types shared by the pipeline stages."""


class ValidationError(ValueError):
    """Bad input: wrong shape, out-of-range parameter, missing artifact."""


class PipelineError(RuntimeError):
    """A stage failed while computing (non-finite loss, solver blow-up)."""
