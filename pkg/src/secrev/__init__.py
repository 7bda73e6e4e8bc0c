"""Mining, curation, and benchmarking of security-related code-review data."""

__version__ = "0.1.0"
