"""Error type shared across the pipeline.

Every operational failure carries a stable string code (e.g. "shape-error",
"empty-support") so tests and the CLI can match on the condition instead of
parsing messages.
"""


class PipelineError(Exception):
    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)
