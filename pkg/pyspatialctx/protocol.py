#
# Copyright (C) 2025 Kris Kirby
#
# This file is part of PySpatialCtx.
#
# PySpatialCtx is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# You should have received a copy of the GNU General Public License
# along with PySpatialCtx. If not, see <http://www.gnu.org/licenses/>.
#

"""
Agent protocol: the readout document an agent reads, the line-oriented
hypergraph and edit grammars it answers in, and the read/update session loop.

Hypergraph grammar (one item per line, ``#`` comments)::

    node(<id>) name="<json string>" [planned] [fixed]
    <relation>(<id>[,<id>[,<id>]]) [w=<f>] [eps=<f>] [dmin=<f>] [axes=<xyz>] [axis=(<x>,<y>,<z>)]

Edit grammar::

    move <id> [s=<f>] [r=quat(<w>,<x>,<y>,<z>)] t=(<x>,<y>,<z>)
    replace <id> file=<path>
    addedge <edge line>
    dropedge <ordinal>
    addnode <id> name="<name>" [planned] [fixed] [file=<path>]
"""

import abc
import json
import logging
import os
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import requests

from .config import AGENT_TOKEN_ENV, RELATION_ARITY, RELATIONS, RenderConfig
from .context import (HyperEdge, RelationParams, SceneHypergraph, SceneNode, ScenePortrait,
                      SpatialContext, add_instance, instance_mask, replace_instance,
                      require_valid, transform_instance)
from .errors import (ArityMismatch, IoError, ParseError, ScriptExhausted, SessionAborted,
                     SpatialContextError, UnknownInstance, UnknownRelation)
from .geometry import AABB, SimilarityTransform
from .projection import canonical_cameras, export_views

logger = logging.getLogger(__name__)

# Which option keys each relation accepts (besides the weight ``w``).
RELATION_OPTIONS = {
    "contact": ("eps",),
    "clearance": ("dmin",),
    "alignment": ("axes",),
    "symmetry": ("axes",),
    "equidistance": ("axis",),
}

QUATERNION_TOLERANCE = 1e-6
SCRIPT_SEPARATOR = "---"

_NODE_RE = re.compile(r"node\(\s*([^)]*?)\s*\)")
_EDGE_RE = re.compile(r"([A-Za-z_]\w*)\(([^)]*)\)")
_OPTION_RE = re.compile(r"(\w+)=(quat\([^)]*\)|\([^)]*\)|\S+)")


# --- Portrait Text ---

def format_portrait(portrait: ScenePortrait) -> str:
    """Description text followed by one ``image: <ref>`` line per image."""
    lines = [portrait.description.rstrip("\n")] if portrait.description else []
    lines.extend(f"image: {ref}" for ref in portrait.image_refs)
    return "\n".join(lines) + "\n" if lines else ""


def parse_portrait(text: str) -> ScenePortrait:
    description, images = [], []
    for line in text.splitlines():
        if line.startswith("image:"):
            images.append(line[len("image:"):].strip())
        else:
            description.append(line)
    return ScenePortrait("\n".join(description).strip("\n"), tuple(images))


# --- Hypergraph Text ---

def _fmt(value: float) -> str:
    return repr(float(value))


def format_edge(edge: HyperEdge) -> str:
    """Canonical single-line form of an edge (floats in shortest round-trip form)."""
    parts = [f"{edge.relation}({','.join(str(m) for m in edge.members)})", f"w={_fmt(edge.weight)}"]
    p = edge.params
    if p.epsilon is not None:
        parts.append(f"eps={_fmt(p.epsilon)}")
    if p.clearance_radius is not None:
        parts.append(f"dmin={_fmt(p.clearance_radius)}")
    if p.axes is not None:
        parts.append(f"axes={p.axes}")
    if p.axis is not None:
        parts.append("axis=(" + ",".join(_fmt(c) for c in p.axis) + ")")
    return " ".join(parts)


def format_node(node: SceneNode) -> str:
    parts = [f"node({node.id})", "name=" + json.dumps(node.name)]
    if node.planned:
        parts.append("planned")
    if node.fixed:
        parts.append("fixed")
    return " ".join(parts)


def format_hypergraph(graph: SceneHypergraph) -> str:
    """Node lines in id order, then edge lines in definition order."""
    lines = [format_node(n) for n in graph.nodes.values()]
    lines.extend(format_edge(e) for e in graph.edges)
    return "\n".join(lines) + "\n" if lines else ""


def _parse_int(token: str, lineno: int, column: int, what: str) -> int:
    token = token.strip()
    if not re.fullmatch(r"\d+", token):
        raise ParseError(f"expected a non-negative integer {what}, got {token!r}", lineno, column)
    return int(token)


def _parse_float(token: str, lineno: int, column: int, key: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"{key}: expected a number, got {token!r}", lineno, column) from None
    if not np.isfinite(value):
        raise ParseError(f"{key}: value must be finite", lineno, column)
    return value


def _parse_vector(token: str, lineno: int, column: int, key: str, size: int, prefix: str = "") -> tuple:
    body = token[len(prefix):]
    if not (body.startswith("(") and body.endswith(")")):
        raise ParseError(f"{key}: expected {prefix}(...) with {size} numbers", lineno, column)
    items = [t for t in body[1:-1].split(",")]
    if len(items) != size:
        raise ParseError(f"{key}: expected {size} components, got {len(items)}", lineno, column)
    return tuple(_parse_float(t.strip(), lineno, column, key) for t in items)


def _parse_options(rest: str, offset: int, lineno: int, flags: Sequence[str] = ()) -> tuple:
    """
    Splits ``key=value`` options and bare flags.

    :returns: ``(options, flags_seen)``; options map key -> (value, column).
    """
    options, seen = {}, set()
    pos = 0
    while pos < len(rest):
        if rest[pos].isspace():
            pos += 1
            continue
        column = offset + pos + 1
        match = _OPTION_RE.match(rest, pos)
        if match:
            key = match.group(1)
            if key in options:
                raise ParseError(f"option {key!r} given twice", lineno, column)
            options[key] = (match.group(2), column)
            pos = match.end()
            continue
        word = re.match(r"\S+", rest[pos:]).group(0)
        if word in flags and word not in seen:
            seen.add(word)
            pos += len(word)
            continue
        raise ParseError(f"unexpected token {word!r}", lineno, column)
    return options, seen


def _split_name(rest: str, offset: int, lineno: int) -> tuple:
    """Pulls a ``name="<json>"`` option (which may contain spaces) out of ``rest``."""
    idx = rest.find("name=")
    if idx < 0:
        return "", rest
    start = idx + len("name=")
    try:
        name, end = json.JSONDecoder().raw_decode(rest, start)
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad name string: {exc.msg}", lineno, offset + start + 1) from None
    if not isinstance(name, str):
        raise ParseError("name must be a quoted string", lineno, offset + start + 1)
    return name, rest[:idx] + " " * (end - idx) + rest[end:]


def _parse_node_line(line: str, lineno: int) -> SceneNode:
    match = _NODE_RE.match(line)
    node_id = _parse_int(match.group(1), lineno, 6, "node id")
    name, rest = _split_name(line[match.end():], match.end(), lineno)
    options, flags = _parse_options(rest, match.end(), lineno, flags=("planned", "fixed"))
    if options:
        key, (_, column) = next(iter(options.items()))
        raise ParseError(f"unknown node option {key!r}", lineno, column)
    try:
        return SceneNode(node_id, name, "planned" in flags, "fixed" in flags)
    except ValueError as exc:
        raise ParseError(str(exc), lineno, 6) from None


def parse_edge(line: str, lineno: int = 1, offset: int = 0) -> HyperEdge:
    """
    Parses one edge line.

    :param offset: Column offset of ``line`` within the original text line.
    :raises UnknownRelation: Relation keyword is not supported.
    :raises ArityMismatch: Member count differs from the relation's arity.
    :raises ParseError: Any other malformation.
    """
    match = _EDGE_RE.match(line)
    if not match:
        raise ParseError("expected <relation>(<ids>)", lineno, offset + 1)
    relation = match.group(1)
    if relation not in RELATIONS:
        raise UnknownRelation(f"unknown relation {relation!r}", lineno, offset + 1)
    members, column = [], offset + match.start(2) + 1
    for token in match.group(2).split(","):
        members.append(_parse_int(token, lineno, column, "member id"))
        column += len(token) + 1
    arity = RELATION_ARITY[relation]
    if len(members) != arity:
        raise ArityMismatch(f"{relation} needs {arity} member(s), got {len(members)}",
                            lineno, offset + match.start(2) + 1)

    options, _ = _parse_options(line[match.end():], offset + match.end(), lineno)
    allowed = ("w",) + RELATION_OPTIONS[relation]
    values = {}
    for key, (token, col) in options.items():
        if key not in allowed:
            raise ParseError(f"option {key!r} does not apply to {relation}", lineno, col)
        if key == "axes":
            if relation == "symmetry" and len(token) != 1:
                raise ParseError("symmetry takes a single axis (x, y or z)", lineno, col)
            values[key] = token
        elif key == "axis":
            values[key] = _parse_vector(token, lineno, col, key, 3)
        else:
            values[key] = _parse_float(token, lineno, col, key)
    try:
        params = RelationParams(epsilon=values.get("eps"), clearance_radius=values.get("dmin"),
                                axes=values.get("axes"), axis=values.get("axis"))
        return HyperEdge(relation, tuple(members), values.get("w"), params)
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc), lineno, offset + match.end() + 1) from None


def _content_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield lineno, stripped, len(raw) - len(raw.lstrip())


def parse_hypergraph(text: str) -> SceneHypergraph:
    """
    Parses node and edge lines. Members never declared by a ``node`` line
    become nodes with an empty name.

    :raises ParseError: Malformed text (with 1-based line/column).
    """
    nodes, edges = {}, []
    for lineno, line, indent in _content_lines(text):
        if _NODE_RE.match(line):
            node = _parse_node_line(line, lineno)
            if node.id in nodes:
                raise ParseError(f"node {node.id} declared twice", lineno, indent + 1)
            nodes[node.id] = node
        else:
            edges.append(parse_edge(line, lineno, indent))
    for edge in edges:
        for member in edge.members:
            if member not in nodes:
                if member == 0:
                    raise ParseError("instance id 0 is the background label")
                nodes[member] = SceneNode(member)
    return SceneHypergraph(list(nodes.values()), edges)


# --- Readout Document ---

@dataclass(frozen=True)
class InstanceRow:
    id: int
    name: str
    point_count: int
    aabb: Optional[AABB] = None

    def text(self) -> str:
        def vec(v):
            return "(" + ",".join(f"{c:.4f}" for c in v) + ")"
        box = f"min={vec(self.aabb.min)} max={vec(self.aabb.max)}" if self.aabb else "min=- max=-"
        return f"{self.id} {json.dumps(self.name)} points={self.point_count} {box}"


@dataclass(frozen=True)
class ReadoutDocument:
    """
    Deterministic textual serialization of a context.

    :param view_refs: Exported point-map files, relative to ``view_dir``.
    """

    portrait_text: str
    instance_table: tuple
    hypergraph_text: str
    view_refs: tuple = ()
    view_dir: Optional[str] = field(default=None, compare=False)

    def text(self) -> str:
        sections = [
            "[portrait]", self.portrait_text.rstrip("\n"),
            "[instances]", *(row.text() for row in self.instance_table),
            "[hypergraph]", self.hypergraph_text.rstrip("\n"),
            "[views]", *self.view_refs,
        ]
        return "\n".join(s for s in sections if s != "") + "\n"


def instance_table(context: SpatialContext) -> tuple:
    rows = []
    for node in context.graph.nodes.values():
        mask = instance_mask(context, node.id)
        count = int(mask.sum())
        box = AABB.of(context.cloud.positions[mask]) if count else None
        rows.append(InstanceRow(node.id, node.name, count, box))
    return tuple(rows)


def serialize_readout(context: SpatialContext, view_dir=None,
                      render: RenderConfig = None) -> ReadoutDocument:
    """
    Builds the readout document; when ``view_dir`` is given, renders the
    canonical views into it and lists them.

    :raises ValidationFailed: The context does not validate.
    """
    require_valid(context)
    refs = ()
    if view_dir is not None:
        if len(context.cloud):
            render = render or RenderConfig()
            cameras = canonical_cameras(context.cloud, render.width, render.height)
            written = export_views(context.cloud, cameras, view_dir, render)
            refs = tuple(os.path.relpath(p, view_dir).replace(os.sep, "/") for p in written)
        else:
            logger.warning("context has no points; readout carries no views")
    return ReadoutDocument(format_portrait(context.portrait), instance_table(context),
                           format_hypergraph(context.graph), refs,
                           None if view_dir is None else str(view_dir))


# --- Edit Commands ---

class EditCommand:
    """Base class of the typed edit commands."""

    kind = ""


@dataclass(frozen=True)
class MoveInstance(EditCommand):
    label: int
    transform: SimilarityTransform
    kind = "transform_instance"


@dataclass(frozen=True)
class ReplaceInstance(EditCommand):
    label: int
    path: str
    kind = "replace_instance"


@dataclass(frozen=True)
class AddEdge(EditCommand):
    edge: HyperEdge
    kind = "add_edge"


@dataclass(frozen=True)
class DropEdge(EditCommand):
    ordinal: int
    kind = "remove_edge"


@dataclass(frozen=True)
class AddNode(EditCommand):
    node: SceneNode
    path: Optional[str] = None
    kind = "add_node"


def _parse_move(rest: str, offset: int, lineno: int, label: int) -> MoveInstance:
    options, _ = _parse_options(rest, offset, lineno)
    for key, (_, col) in options.items():
        if key not in ("s", "r", "t"):
            raise ParseError(f"unknown move option {key!r}", lineno, col)
    if "t" not in options:
        raise ParseError("move needs t=(<x>,<y>,<z>)", lineno, offset + 1)
    token, column = options["t"]
    translation = _parse_vector(token, lineno, column, "t", 3)
    scale = 1.0
    if "s" in options:
        scale = _parse_float(options["s"][0], lineno, options["s"][1], "s")
    quat = (1.0, 0.0, 0.0, 0.0)
    if "r" in options:
        quat = _parse_vector(options["r"][0], lineno, options["r"][1], "r", 4, prefix="quat")
    # InvalidTransform (s <= 0, non-unit quaternion) propagates as is
    transform = SimilarityTransform.from_quaternion(quat, translation, scale, tol=QUATERNION_TOLERANCE)
    return MoveInstance(label, transform)


def _file_option(options: dict, lineno: int, required: bool, offset: int) -> Optional[str]:
    if "file" not in options:
        if required:
            raise ParseError("missing file=<path>", lineno, offset + 1)
        return None
    return options["file"][0]


def parse_edit_commands(text: str) -> list:
    """
    Parses an edit batch, one command per line.

    :raises ParseError: Malformed command.
    :raises InvalidTransform: ``s <= 0`` or a non-unit quaternion.
    """
    commands = []
    for lineno, line, indent in _content_lines(text):
        verb, _, rest = line.partition(" ")
        offset = indent + len(verb) + 1
        if verb == "addedge":
            stripped = rest.lstrip()
            commands.append(AddEdge(parse_edge(stripped, lineno, offset + len(rest) - len(stripped))))
            continue
        if verb not in ("move", "replace", "dropedge", "addnode"):
            raise ParseError(f"unknown edit command {verb!r}", lineno, indent + 1)
        arg, _, tail = rest.strip().partition(" ")
        tail_offset = offset + len(rest) - len(rest.lstrip()) + len(arg) + 1
        number = _parse_int(arg, lineno, offset + 1, "ordinal" if verb == "dropedge" else "instance id")
        if verb == "move":
            commands.append(_parse_move(tail, tail_offset, lineno, number))
        elif verb == "dropedge":
            if tail.strip():
                raise ParseError("dropedge takes only an ordinal", lineno, tail_offset + 1)
            commands.append(DropEdge(number))
        elif verb == "replace":
            options, _ = _parse_options(tail, tail_offset, lineno)
            path = _file_option(options, lineno, True, tail_offset)
            if set(options) - {"file"}:
                raise ParseError("replace takes only file=<path>", lineno, tail_offset + 1)
            commands.append(ReplaceInstance(number, path))
        else:
            name, tail = _split_name(tail, tail_offset, lineno)
            options, flags = _parse_options(tail, tail_offset, lineno, flags=("planned", "fixed"))
            if set(options) - {"file"}:
                raise ParseError("addnode takes name=, file= and flags only", lineno, tail_offset + 1)
            try:
                node = SceneNode(number, name, "planned" in flags, "fixed" in flags)
            except ValueError as exc:
                raise ParseError(str(exc), lineno, offset + 1) from None
            commands.append(AddNode(node, _file_option(options, lineno, False, tail_offset)))
    return commands


def _load_points(path: str, base_dir):
    # scene_io imports this module for the graph grammar
    from .scene_io import load_cloud
    full = path if os.path.isabs(path) else os.path.join(str(base_dir), path)
    return load_cloud(full)


def _apply_one(context: SpatialContext, cmd: EditCommand, base_dir) -> SpatialContext:
    if isinstance(cmd, MoveInstance):
        return transform_instance(context, cmd.label, cmd.transform)
    if isinstance(cmd, ReplaceInstance):
        if cmd.label not in context.graph:
            raise UnknownInstance(cmd.label)
        return replace_instance(context, cmd.label, _load_points(cmd.path, base_dir))
    if isinstance(cmd, AddEdge):
        for member in cmd.edge.members:
            if member not in context.graph:
                raise UnknownInstance(member, f"edge references missing instance {member}")
        return context.replace(graph=context.graph.with_edge(cmd.edge))
    if isinstance(cmd, DropEdge):
        return context.replace(graph=context.graph.without_edge(cmd.ordinal))
    if isinstance(cmd, AddNode):
        points = None if cmd.path is None else _load_points(cmd.path, base_dir)
        return add_instance(context, cmd.node, points)
    raise TypeError(f"not an edit command: {cmd!r}")


def apply_edits(context: SpatialContext, commands: Sequence[EditCommand],
                base_dir=".") -> SpatialContext:
    """
    Applies a batch in order. The batch is all-or-nothing: on any error
    nothing is returned and the input context is unchanged.

    :param base_dir: Directory relative ``file=`` paths are resolved against.
    :raises UnknownInstance: A command references a missing instance.
    :raises ValidationFailed: The post-state does not validate.
    """
    result = context
    for cmd in commands:
        result = _apply_one(result, cmd, base_dir)
    if commands:
        require_valid(result)
    logger.debug("applied %d edit command(s)", len(commands))
    return result


# --- Agent Endpoints ---

class AgentEndpoint(abc.ABC):
    """A transport answering readout text with response text."""

    @abc.abstractmethod
    def respond(self, readout_text: str) -> Optional[str]:
        ...

    def has_more(self) -> bool:
        return True


class ScriptedStub(AgentEndpoint):
    """Replays canned responses in order; used for offline sessions and tests."""

    def __init__(self, responses: Sequence[str]):
        self._responses = list(responses)
        self._next = 0

    @classmethod
    def from_text(cls, text: str) -> "ScriptedStub":
        """Splits a script on lines consisting of ``---``."""
        blocks, current = [], []
        for line in text.splitlines():
            if line.strip() == SCRIPT_SEPARATOR:
                blocks.append("\n".join(current))
                current = []
            else:
                current.append(line)
        if any(l.strip() for l in current):
            blocks.append("\n".join(current))
        return cls([b.strip("\n") + "\n" for b in blocks if b.strip()])

    @classmethod
    def from_file(cls, path) -> "ScriptedStub":
        try:
            with open(path, "r") as fh:
                return cls.from_text(fh.read())
        except OSError as exc:
            raise IoError(f"cannot read script {path}: {exc}") from exc

    @property
    def remaining(self) -> int:
        return len(self._responses) - self._next

    def has_more(self) -> bool:
        return self.remaining > 0

    def respond(self, readout_text: str) -> str:
        if not self.has_more():
            raise ScriptExhausted(f"script exhausted after {self._next} response(s)")
        response = self._responses[self._next]
        self._next += 1
        return response


class HttpEndpoint(AgentEndpoint):
    """
    External agent over HTTP: POSTs the readout as ``text/plain`` and reads
    the plain-text reply.

    :param url: Service URL.
    :param token: Bearer token; defaults to ``$PYSPATIALCTX_AGENT_TOKEN``.
    :param timeout: Request timeout in seconds.
    """

    def __init__(self, url: str, token: Optional[str] = None, timeout: float = 60.0):
        self.url = url
        self.token = token if token is not None else os.environ.get(AGENT_TOKEN_ENV)
        self.timeout = timeout

    def respond(self, readout_text: str) -> str:
        headers = {"Content-Type": "text/plain; charset=utf-8"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        try:
            r = requests.post(self.url, data=readout_text.encode("utf-8"), headers=headers,
                              timeout=self.timeout)
            r.raise_for_status()
        except requests.RequestException as exc:
            raise IoError(f"agent request to {self.url} failed: {exc}") from exc
        return r.text


# --- Sessions ---

class Transcript:
    """Ordered record of readouts and responses."""

    def __init__(self):
        self.entries = []

    def add(self, kind: str, number: int, text: str):
        self.entries.append((kind, number, text))

    def count(self, kind: str) -> int:
        return sum(1 for k, _, _ in self.entries if k == kind)

    def text(self) -> str:
        blocks = []
        for kind, number, body in self.entries:
            blocks.append(f"=== {kind} {number} ===\n" + body.rstrip("\n") + "\n")
        return "".join(blocks)

    def write(self, path):
        try:
            with open(path, "w") as fh:
                fh.write(self.text())
        except OSError as exc:
            raise IoError(f"cannot write transcript {path}: {exc}") from exc


def _is_done(response: Optional[str]) -> bool:
    return response is None or response.strip().lower() in ("", "done")


def run_session(endpoint: AgentEndpoint, context: SpatialContext, max_rounds: Optional[int] = None,
                view_dir=None, base_dir=".", render: RenderConfig = None) -> tuple:
    """
    Read/update loop: readout -> agent response -> parse and apply, until the
    endpoint has nothing more to say, replies ``done`` or ``max_rounds`` is hit.
    Round ``n`` views go to ``<view_dir>/round_<n>``. A scripted endpoint
    that runs out of responses ends the session cleanly; only a direct
    :py:meth:`ScriptedStub.respond` call on an empty script raises
    :py:class:`~pyspatialctx.errors.ScriptExhausted`.

    :returns: ``(context, transcript)``.
    :raises SessionAborted: Any transport, parse or apply failure; the
        partial transcript is attached.
    """
    transcript = Transcript()

    def readout(ctx, n):
        vdir = None if view_dir is None else os.path.join(str(view_dir), f"round_{n}")
        doc = serialize_readout(ctx, vdir, render)
        if view_dir is not None:
            prefix = f"round_{n}/"
            doc = ReadoutDocument(doc.portrait_text, doc.instance_table, doc.hypergraph_text,
                                  tuple(prefix + r for r in doc.view_refs), str(view_dir))
        transcript.add("readout", n, doc.text())
        return doc

    rounds = 0
    try:
        doc = readout(context, 0)
        while endpoint.has_more() and (max_rounds is None or rounds < max_rounds):
            response = endpoint.respond(doc.text())
            rounds += 1
            transcript.add("response", rounds, response or "")
            if _is_done(response):
                logger.info("agent ended the session after %d round(s)", rounds)
                break
            context = apply_edits(context, parse_edit_commands(response), base_dir)
            logger.info("session round %d applied", rounds)
            doc = readout(context, rounds)
    except (SpatialContextError, OSError) as exc:
        raise SessionAborted(exc, transcript) from exc
    return context, transcript


def run_stub_session(endpoint: ScriptedStub, context: SpatialContext, **kwargs) -> tuple:
    """:py:func:`run_session` restricted to the scripted stub."""
    if not isinstance(endpoint, ScriptedStub):
        raise TypeError("run_stub_session needs a ScriptedStub endpoint")
    return run_session(endpoint, context, **kwargs)
