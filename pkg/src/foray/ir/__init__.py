"""Textual protocol IR: data model, reader/writer, validation and inlining."""
from .inline import DEFAULT_DEPTH, inline_calls
from .model import *  # noqa: F401,F403
from .model import IRError, ProtocolIR
from .parser import load_protocol, parse_protocol, serialize, to_json
from .validate import Diagnostic, validate_protocol

__all__ = [
    "DEFAULT_DEPTH",
    "Diagnostic",
    "IRError",
    "ProtocolIR",
    "inline_calls",
    "load_protocol",
    "parse_protocol",
    "serialize",
    "to_json",
    "validate_protocol",
]
