"""Benchmark harness for prompt patterns on requirements engineering tasks."""

__version__ = "0.1.0"
