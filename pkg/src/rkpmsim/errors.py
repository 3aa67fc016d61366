class RkpmError(Exception):
    """Error carrying a short machine-readable kind plus free-form detail."""

    def __init__(self, kind: str, detail: str = "", **context):
        self.kind = kind
        self.detail = detail
        self.context = context
        self.stage = None  # set by the pipeline stage that raised it
        super().__init__(f"{kind}: {detail}" if detail else kind)
