"""Joint charge prediction and statute-article extraction toolkit."""

__version__ = "0.1.0"
