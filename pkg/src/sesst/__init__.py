"""Session types with synchronous and asynchronous subtyping."""

__version__ = "0.1.0"
