"""scenmine: event-anchored highway scenario extraction and
knowledge-guided clustering."""

__version__ = "0.1.0"
