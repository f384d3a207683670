"""Band diagonalization pipeline with hybrid-parallel scheduling and a
performance-analysis toolkit."""

__version__ = "0.1.0"
