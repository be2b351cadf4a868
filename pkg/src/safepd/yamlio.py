"""YAML loading that remembers source lines, for line-anchored validation errors."""
from __future__ import annotations

from pathlib import Path
from typing import Any

import yaml
from pydantic import BaseModel, ValidationError

from .errors import ConfigError


class LocatedDoc:
    """Parsed YAML plus a map from key paths to 1-based line numbers."""

    def __init__(self, data: Any, lines: dict, source: str):
        self.data = data
        self.lines = lines
        self.source = source

    def line_of(self, path) -> int | None:
        path = tuple(path)
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return self.lines.get((), None)

    def error(self, path, message: str) -> ConfigError:
        line = self.line_of(path)
        where = f"{self.source}:{line}" if line is not None else self.source
        dotted = ".".join(str(p) for p in path) or "<document>"
        return ConfigError(f"{where}: {dotted}: {message}")


def _walk(node, path, lines):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            lines[path + (key,)] = k.start_mark.line + 1
            _walk_children(v, path + (key,), lines)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _walk(v, path + (i,), lines)


def _walk_children(node, path, lines):
    keep = lines[path]
    _walk(node, path, lines)
    lines[path] = keep


def parse_yaml(text: str, source: str = "<string>") -> LocatedDoc:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark is not None else source
        raise ConfigError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from exc
    lines: dict = {}
    if node is not None:
        _walk(node, (), lines)
    return LocatedDoc(data, lines, source)


def load_yaml(path) -> LocatedDoc:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read: {exc.strerror or exc}") from exc
    return parse_yaml(text, str(path))


def _drop_union_tags(doc: LocatedDoc, loc: tuple) -> tuple:
    """Remove the union-member tags pydantic inserts into error locations."""
    out = ()
    for i, p in enumerate(loc):
        nxt = loc[i + 1] if i + 1 < len(loc) else None
        if (out + (p,)) not in doc.lines and nxt is not None and (out + (nxt,)) in doc.lines:
            continue
        out += (p,)
    return out


def validate(doc: LocatedDoc, model: type[BaseModel], data=None):
    """Validate ``doc`` against a pydantic model, re-raising with line anchors."""
    try:
        return model.model_validate(doc.data if data is None else data)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = tuple(p for p in err["loc"] if not (isinstance(p, str) and p.startswith("function-")))
            msgs.append(str(doc.error(_drop_union_tags(doc, loc), err["msg"])))
        raise ConfigError("\n".join(msgs)) from None
