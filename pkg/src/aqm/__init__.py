"""Information-gain questioner with an explicit model of the answerer."""

__version__ = "0.1.0"
