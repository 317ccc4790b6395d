"""Loading of the relaxed, brace-style config documents.

The grammar is YAML flow/block syntax, extended with C-style comments so a
packet-set definition can be pasted verbatim from C sources::

    /* Each TCP flow is a packet set. */
    [ { nic: 0,
        pattern: { "ipv4": [src_ip, dst_ip],
                   "tcp": [src_port, dst_port] } } ]

``/* ... */`` blocks and ``//`` line comments are blanked out (newlines are
kept so diagnostics still point at the right line) before the text is handed
to the YAML composer.  ``#`` comments work as usual.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any

import yaml


class ParseError(ValueError):
    """Config document rejected; carries 1-based line and the offending field."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


_BLOCK_COMMENT = re.compile(r"/\*.*?\*/", re.S)
_LINE_COMMENT = re.compile(r"(^|[ \t])//[^\n]*")


def strip_c_comments(text: str) -> str:
    def blank(m: re.Match) -> str:
        return re.sub(r"[^\n]", " ", m.group(0))

    text = _BLOCK_COMMENT.sub(blank, text)
    return _LINE_COMMENT.sub(lambda m: m.group(1) + " " * (len(m.group(0)) - len(m.group(1))), text)


@dataclass
class Located:
    """A scalar/list/dict value paired with the line it came from."""

    value: Any
    line: int


def _convert(node: yaml.Node) -> Located:
    line = node.start_mark.line + 1
    if isinstance(node, yaml.ScalarNode):
        return Located(_CONSTRUCTOR.construct_object(node), line)
    if isinstance(node, yaml.SequenceNode):
        return Located([_convert(n) for n in node.value], line)
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = _convert(k)
            if not isinstance(key.value, (str, int)):
                raise ParseError("mapping keys must be scalars", key.line)
            out[key.value] = _convert(v)
        return Located(out, line)
    raise ParseError(f"unsupported node {node.tag}", line)


_CONSTRUCTOR = yaml.constructor.SafeConstructor()


def compose(text: str) -> Located | None:
    """Parse ``text`` into a tree of :class:`Located` values (``None`` if empty)."""
    try:
        node = yaml.compose(strip_c_comments(text), Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ParseError(str(exc.problem or exc), mark.line + 1 if mark else None) from None
    if node is None:
        return None
    return _convert(node)


def strip(loc: Located | None) -> Any:
    """Drop line information, returning plain Python values."""
    if loc is None:
        return None
    v = loc.value
    if isinstance(v, list):
        return [strip(x) for x in v]
    if isinstance(v, dict):
        return {k: strip(x) for k, x in v.items()}
    return v


def load_document(text: str) -> Any:
    return strip(compose(text))


def load_file(path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return load_document(fh.read())
