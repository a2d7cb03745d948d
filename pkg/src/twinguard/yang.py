"""YANG subset: parsing, path resolution, KPI manifests and feature extraction.

Only the container/leaf skeleton of YANG is understood::

    module NAME {
      namespace "URI";
      prefix P;                      // optional, ignored
      container NAME {
        leaf NAME { type T; }        // T in int | decimal | counter | gauge
      }
    }

``description`` and ``units`` statements are accepted and dropped.  Statements
that belong to the rest of the language (``rpc``, ``grouping``, ...) raise
:class:`UnsupportedKeyword` so that a model relying on them is never silently
truncated.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import (
    CountMismatch,
    DuplicatePath,
    MissingSensor,
    PathIsContainer,
    PathNotFound,
    UnsupportedKeyword,
    YangSyntaxError,
)

LEAF_TYPES = ("int", "decimal", "counter", "gauge")
KPI_TAGS = ("KPI1", "KPI2")

UNSUPPORTED = frozenset({
    "rpc", "notification", "grouping", "augment", "when", "must", "uses",
    "include", "import", "submodule", "choice", "case", "list", "leaf-list",
    "typedef", "identity", "feature", "if-feature", "deviation", "action",
    "anydata", "anyxml", "refine", "extension",
})
_IGNORED = frozenset({"description", "units", "prefix"})


@dataclass(frozen=True)
class Leaf:
    name: str
    leaf_type: str


@dataclass(frozen=True)
class Container:
    name: str
    children: tuple = ()


Node = Union[Leaf, Container]


@dataclass(frozen=True)
class YangModule:
    name: str
    namespace: str
    body: tuple = ()

    def leaves(self):
        """Yield ``(path, Leaf)`` for every leaf, depth first in text order."""
        stack = [("", node) for node in reversed(self.body)]
        while stack:
            prefix, node = stack.pop()
            path = f"{prefix}/{node.name}"
            if isinstance(node, Leaf):
                yield path, node
            else:
                stack.extend((path, child) for child in reversed(node.children))


@dataclass(frozen=True)
class SensorDescriptor:
    path: str
    leaf_type: str
    kpi: str
    source_column: str | None = None


@dataclass(frozen=True)
class KpiManifest:
    sensors: tuple = ()

    def __len__(self):
        return len(self.sensors)

    def __iter__(self):
        return iter(self.sensors)

    @property
    def paths(self):
        return tuple(s.path for s in self.sensors)

    @property
    def source_columns(self):
        return tuple(s.source_column for s in self.sensors)

    def count(self, kpi):
        return sum(1 for s in self.sensors if s.kpi == kpi)

    def index_of(self, path):
        for i, s in enumerate(self.sensors):
            if s.path == path:
                return i
        raise PathNotFound(path)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    twin_id: object = None
    timestamp: int = 0

    def __len__(self):
        return len(self.values)


# ---------------------------------------------------------------- tokenizer

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<line_comment>//[^\n]*)
  | (?P<block_comment>/\*)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<punct>[{};])
  | (?P<word>[A-Za-z_][A-Za-z0-9_.\-:]*)
""", re.VERBOSE)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text):
    pos, line, line_start = 0, 1, 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise YangSyntaxError(line, col, "token", text[pos])
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "block_comment":
            end = text.find("*/", m.end())
            if end < 0:
                raise YangSyntaxError(line, col, "'*/' closing block comment", "end of input")
            chunk = text[pos:end + 2]
            nls = chunk.count("\n")
            if nls:
                line += nls
                line_start = pos + chunk.rfind("\n") + 1
            pos = end + 2
            continue
        elif kind == "string":
            raw = m.group()
            out.append(_Tok("string", re.sub(r"\\(.)", r"\1", raw[1:-1]), line, col))
        elif kind in ("punct", "word"):
            out.append(_Tok(m.group() if kind == "punct" else "word", m.group(), line, col))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0
        lines = text.split("\n")
        self._eof = (len(lines), len(lines[-1]) + 1)

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def fail(self, expected):
        tok = self.peek()
        if tok is None:
            raise YangSyntaxError(*self._eof, expected, "end of input")
        raise YangSyntaxError(tok.line, tok.col, expected, tok.text)

    def take(self, kind, expected=None):
        tok = self.peek()
        if tok is None or tok.kind != kind:
            self.fail(expected or repr(kind))
        self.i += 1
        return tok

    def keyword(self):
        tok = self.take("word", "statement keyword")
        if tok.text in UNSUPPORTED:
            raise UnsupportedKeyword(tok.text, tok.line)
        return tok

    def argument(self):
        tok = self.peek()
        if tok is None or tok.kind not in ("word", "string"):
            self.fail("argument")
        self.i += 1
        return tok.text

    def skip_simple(self):
        self.argument()
        self.take(";", "';'")

    def module(self):
        tok = self.keyword()
        if tok.text != "module":
            raise YangSyntaxError(tok.line, tok.col, "'module'", tok.text)
        name = self.take("word", "module name").text
        self.take("{", "'{'")
        namespace = None
        body = []
        while (tok := self.peek()) is not None and tok.kind != "}":
            kw = self.keyword()
            if kw.text == "namespace":
                namespace = self.argument()
                self.take(";", "';'")
            elif kw.text in _IGNORED:
                self.skip_simple()
            elif kw.text in ("container", "leaf"):
                self.i -= 1
                body.append(self.node())
            else:
                raise YangSyntaxError(kw.line, kw.col, "namespace, container or leaf", kw.text)
        self.take("}", "'}'")
        if self.peek() is not None:
            self.fail("end of input")
        if namespace is None:
            raise YangSyntaxError(*self._eof, "namespace statement")
        _check_unique(body, self.toks[-1].line)
        return YangModule(name, namespace, tuple(body))

    def node(self):
        kw = self.keyword()
        name = self.take("word", f"{kw.text} name").text
        self.take("{", "'{'")
        if kw.text == "container":
            children = []
            while (tok := self.peek()) is not None and tok.kind != "}":
                sub = self.keyword()
                if sub.text in ("container", "leaf"):
                    self.i -= 1
                    children.append(self.node())
                elif sub.text in _IGNORED:
                    self.skip_simple()
                else:
                    raise YangSyntaxError(sub.line, sub.col, "container or leaf", sub.text)
            close = self.take("}", "'}'")
            _check_unique(children, close.line)
            return Container(name, tuple(children))
        leaf_type = None
        while (tok := self.peek()) is not None and tok.kind != "}":
            sub = self.keyword()
            if sub.text == "type":
                t = self.take("word", "type name")
                if t.text not in LEAF_TYPES:
                    raise YangSyntaxError(t.line, t.col, "one of " + "/".join(LEAF_TYPES), t.text)
                leaf_type = t.text
                self.take(";", "';'")
            elif sub.text in _IGNORED:
                self.skip_simple()
            else:
                raise YangSyntaxError(sub.line, sub.col, "type", sub.text)
        close = self.take("}", "'}'")
        if leaf_type is None:
            raise YangSyntaxError(close.line, close.col, f"type statement in leaf {name}")
        return Leaf(name, leaf_type)


def _check_unique(nodes, line):
    seen = set()
    for n in nodes:
        if n.name in seen:
            raise YangSyntaxError(line, 1, "unique sibling names", n.name)
        seen.add(n.name)


def parse_module(text: str) -> YangModule:
    return _Parser(text).module()


def print_module(module: YangModule) -> str:
    """Render ``module`` back to text in the supported subset."""
    out = [f"module {module.name} {{", f'  namespace "{_escape(module.namespace)}";']

    def emit(node, depth):
        pad = "  " * depth
        if isinstance(node, Leaf):
            out.append(f"{pad}leaf {node.name} {{ type {node.leaf_type}; }}")
        else:
            out.append(f"{pad}container {node.name} {{")
            for child in node.children:
                emit(child, depth + 1)
            out.append(f"{pad}}}")

    for node in module.body:
        emit(node, 1)
    out.append("}")
    return "\n".join(out) + "\n"


def _escape(s):
    return s.replace("\\", "\\\\").replace('"', '\\"')


def load_module(path) -> YangModule:
    return parse_module(Path(path).read_text())


def default_modules() -> list[YangModule]:
    base = resources.files("twinguard") / "data"
    return [parse_module((base / name).read_text()) for name in ("kpi-1.yang", "kpi-2.yang")]


# ------------------------------------------------------- paths and manifests

def resolve_path(modules: Sequence[YangModule], path: str, kpi: str | None = None) -> SensorDescriptor:
    if not path.startswith("/"):
        raise PathNotFound(f"path must be absolute: {path!r}")
    parts = path.split("/")[1:]
    if not parts or not all(parts):
        raise PathNotFound(path)
    last = len(parts) - 1
    for module in modules:
        nodes = module.body
        for depth, part in enumerate(parts):
            node = next((n for n in nodes if n.name == part), None)
            if node is None:
                break
            if isinstance(node, Leaf):
                if depth == last:
                    return SensorDescriptor(path, node.leaf_type, kpi)
                break
            if depth == last:
                raise PathIsContainer(path)
            nodes = node.children
    raise PathNotFound(path)


def build_manifest(modules: Sequence[YangModule], kpi_spec: Iterable, expected: Mapping[str, int] | None = None) -> KpiManifest:
    """Resolve ``kpi_spec`` entries into an ordered manifest.

    Each entry is ``(path, kpi)`` or ``(path, kpi, source_column)``.  When
    ``expected`` maps KPI tags to declared totals, the resolved counts must
    agree with it.
    """
    sensors = []
    seen = set()
    for entry in kpi_spec:
        path, kpi = entry[0], entry[1]
        source = entry[2] if len(entry) > 2 else None
        if kpi not in KPI_TAGS:
            raise CountMismatch(f"unknown KPI tag {kpi!r} for {path}")
        if path in seen:
            raise DuplicatePath(path)
        seen.add(path)
        desc = resolve_path(modules, path, kpi)
        sensors.append(SensorDescriptor(path, desc.leaf_type, kpi, source))
    manifest = KpiManifest(tuple(sensors))
    for tag, n in (expected or {}).items():
        if manifest.count(tag) != n:
            raise CountMismatch(f"{tag}: declared {n}, manifest has {manifest.count(tag)}")
    return manifest


_EXPECT = re.compile(r"#\s*expect\s+(.*)")


def read_manifest_spec(text: str):
    """Parse manifest CSV text into ``(entries, expected_counts)``.

    A leading ``# expect KPI1=37 KPI2=55`` comment declares totals.
    """
    expected = {}
    body = []
    for line in text.splitlines():
        m = _EXPECT.match(line.strip())
        if m:
            for item in m.group(1).split():
                tag, _, n = item.partition("=")
                expected[tag] = int(n)
        elif line.strip() and not line.lstrip().startswith("#"):
            body.append(line)
    reader = csv.DictReader(io.StringIO("\n".join(body)))
    missing = {"path", "kpi", "source_column"} - set(reader.fieldnames or ())
    if missing:
        raise CountMismatch(f"manifest spec lacks columns: {sorted(missing)}")
    entries = [(r["path"].strip(), r["kpi"].strip(), r["source_column"].strip() or None) for r in reader]
    return entries, expected


def load_manifest(spec_path=None, modules=None) -> KpiManifest:
    if modules is None:
        modules = default_modules()
    if spec_path is None:
        text = (resources.files("twinguard") / "data" / "kpi-manifest.csv").read_text()
    else:
        text = Path(spec_path).read_text()
    entries, expected = read_manifest_spec(text)
    return build_manifest(modules, entries, expected)


def default_manifest() -> KpiManifest:
    return load_manifest()


def extract_features(manifest: KpiManifest, frame, twin_id=None, timestamp=None) -> FeatureVector:
    """Order a sensor frame into the manifest's feature vector.

    ``frame`` is a :class:`~twinguard.twin_graph.SensorFrame` or any mapping
    from path to value.
    """
    values = getattr(frame, "values", frame)
    if callable(values):              # a plain mapping, not a SensorFrame
        values = frame
    if twin_id is None:
        twin_id = getattr(frame, "twin_id", None)
    if timestamp is None:
        timestamp = getattr(frame, "last_sync", 0)
    out = np.empty(len(manifest.sensors))
    for i, s in enumerate(manifest.sensors):
        try:
            v = values[s.path]
        except KeyError:
            raise MissingSensor(s.path) from None
        if not math.isfinite(v):
            raise MissingSensor(s.path)
        out[i] = v
    out.setflags(write=False)
    return FeatureVector(out, twin_id, timestamp)
