"""IR front end: data model, text format, validation, phi elimination and
the reference interpreter."""

from .core import (BINARY_KINDS, CAST_KINDS, EXTERN_SIGS, ICMP_PREDICATES,
                   Block, ExecutionResult, Instruction, IrFunction, IrModule,
                   TypeTag, format_function, format_instruction,
                   format_module)
from .interp import evaluate_function, reference_interpret, value_tags
from .parser import ParseError, parse_function, parse_module
from .phi import PhiEliminationError, eliminate_phis, eliminate_phis_function
from .validate import validate_function, validate_module

__all__ = [
    "BINARY_KINDS", "CAST_KINDS", "EXTERN_SIGS", "ICMP_PREDICATES",
    "Block", "ExecutionResult", "Instruction", "IrFunction", "IrModule",
    "TypeTag", "format_function", "format_instruction", "format_module",
    "evaluate_function", "reference_interpret", "value_tags",
    "ParseError", "parse_function", "parse_module",
    "PhiEliminationError", "eliminate_phis", "eliminate_phis_function",
    "validate_function", "validate_module",
]
