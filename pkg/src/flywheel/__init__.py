"""Governed safety-patch runtime: typed artifacts, event store, oracle stack, enforcement and governance roles."""

__version__ = "0.1.0"
