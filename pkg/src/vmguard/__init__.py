"""Bytecode virtualization with self-checking guards for a small typed IR.

The pipeline: parse `.vir` text, eliminate phis, lift selected functions
into per-function randomized bytecode, weave an acyclic checker network of
hash guards through the lifted code, and emit a `.vsc` bundle that the
secure or optimized engine can execute.
"""

__version__ = "0.1.0"
