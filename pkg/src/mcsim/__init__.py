"""mcsim: a deterministic trace-driven multicore memory-hierarchy simulator."""

__version__ = "0.1.0"
