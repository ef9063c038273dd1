"""Multi-task transformer language modeling and ASR decoding at desk scale."""

__version__ = "0.1.0"
