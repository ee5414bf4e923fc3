from langcl.strategies.base import Strategy


class FineTune(Strategy):
    """Plain sequential fine-tuning on the current task only."""

    kind = "FT"
