"""Meta-path algebra: path counts via sparse chain products and PathSim.

Textual path grammar (whitespace-separated tokens):

    <Type0> <arrow> <Type1> <arrow> ... <TypeK>

where an arrow is either ``-rel->`` (follow relation ``rel`` forward) or
``<-rel-`` (follow it against its declared direction).  Example::

    Author -writes-> Paper <-writes- Author

A path-set file groups one path per line under ``UU:`` (user-user),
``II:`` (item-item) or ``UI:`` (user-item) prefixes.

Similarity cache files are plain text: header lines ``#hetecf-sim 1``,
``#graph <sha256>``, ``#group <UU|II|UI>``, ``#path <path string>``,
``#variant <rowcol|diagonal>``, ``#shape <rows> <cols>`` followed by one
``row\\tcol\\tvalue`` triple per stored entry.
"""

import hashlib
import logging
import os
import re
import tempfile
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import adjacency, content_hash

log = logging.getLogger(__name__)

_FORWARD = re.compile(r"-([A-Za-z_]\w*)->")
_BACKWARD = re.compile(r"<-([A-Za-z_]\w*)-")
_TYPE = re.compile(r"[A-Za-z_]\w*")

GROUPS = ("UU", "II", "UI")


class PathError(ValueError):
    """Malformed or schema-incompatible meta-path."""


@dataclass(frozen=True)
class Step:
    """One hop: a relation name and whether it is followed forward."""

    relation: str
    forward: bool = True


@dataclass(frozen=True)
class MetaPath:
    """Ordered relation steps with the node-type sequence they traverse."""

    steps: tuple
    node_types: tuple

    def __post_init__(self):
        if not self.steps:
            raise PathError("meta-path needs at least one step")
        if len(self.node_types) != len(self.steps) + 1:
            raise PathError("node_types must have one more entry than steps")

    @property
    def source_type(self):
        return self.node_types[0]

    @property
    def target_type(self):
        return self.node_types[-1]

    @property
    def is_palindromic(self):
        """True when the path equals its own reverse, step for step."""
        return self == reverse(self)

    def to_string(self):
        parts = [self.node_types[0]]
        for step, t in zip(self.steps, self.node_types[1:]):
            arrow = f"-{step.relation}->" if step.forward else f"<-{step.relation}-"
            parts.append(arrow)
            parts.append(t)
        return " ".join(parts)

    def __str__(self):
        return self.to_string()


def make_path(schema, steps):
    """Build a MetaPath from (relation, forward) pairs, deriving node types."""
    built = []
    types = None
    for rel_name, forward in steps:
        rel = schema.relation(rel_name)
        src, dst = (rel.source, rel.target) if forward else (rel.target, rel.source)
        if types is None:
            types = [src]
        elif types[-1] != src:
            raise PathError(
                f"step {rel_name!r} starts at {src!r} but path is at {types[-1]!r}"
            )
        types.append(dst)
        built.append(Step(rel_name, bool(forward)))
    return MetaPath(tuple(built), tuple(types))


def parse_path(text, schema):
    """Parse the textual path grammar and validate it against the schema."""
    tokens = text.split()
    if len(tokens) < 3 or len(tokens) % 2 == 0:
        raise PathError(f"malformed path {text!r}: expected 'Type arrow Type ...'")
    types = tokens[0::2]
    arrows = tokens[1::2]
    steps = []
    for tok in arrows:
        m = _FORWARD.fullmatch(tok)
        if m:
            steps.append((m.group(1), True))
            continue
        m = _BACKWARD.fullmatch(tok)
        if m:
            steps.append((m.group(1), False))
            continue
        raise PathError(f"malformed arrow {tok!r} in path {text!r}")
    for t in types:
        if not _TYPE.fullmatch(t):
            raise PathError(f"malformed type token {t!r} in path {text!r}")
        if t not in schema.node_types:
            raise PathError(f"undeclared node type {t!r} in path {text!r}")
    path = make_path(schema, steps)
    if tuple(types) != path.node_types:
        raise PathError(
            f"path {text!r} writes types {tuple(types)} but its relations "
            f"traverse {path.node_types}"
        )
    return path


def reverse(path):
    """The reverse meta-path: steps in opposite order, each direction flipped."""
    steps = tuple(Step(s.relation, not s.forward) for s in reversed(path.steps))
    return MetaPath(steps, tuple(reversed(path.node_types)))


@dataclass
class PathCountMatrix:
    """Weighted path-instance counts between source-type and target-type nodes."""

    path: MetaPath
    matrix: sp.csr_array

    @property
    def source_type(self):
        return self.path.source_type

    @property
    def target_type(self):
        return self.path.target_type


@dataclass
class SimilarityMatrix:
    """PathSim-normalized path counts; values lie in [0, 1]."""

    path: MetaPath
    variant: str
    matrix: sp.csr_array


def validate_path(path, schema):
    """Check every step against the schema's relation declarations."""
    at = path.node_types[0]
    if at not in schema.node_types:
        raise PathError(f"undeclared node type {at!r}")
    for step, nxt in zip(path.steps, path.node_types[1:]):
        rel = schema.relation(step.relation)
        src, dst = (rel.source, rel.target) if step.forward else (rel.target, rel.source)
        if src != at or dst != nxt:
            raise PathError(
                f"step {step.relation!r} runs {src!r} -> {dst!r}, path expects "
                f"{at!r} -> {nxt!r}"
            )
        at = nxt


def path_count(graph, path):
    """Ordered product of per-step adjacency matrices.

    Counts every path instance, revisiting nodes freely; with unit edge
    weights the entries are exact instance counts.
    """
    validate_path(path, graph.schema)
    product = None
    for step in path.steps:
        m = adjacency(graph, step.relation, transposed=not step.forward)
        product = m if product is None else product @ m
    product = sp.csr_array(product)
    product.eliminate_zeros()
    return PathCountMatrix(path, product)


def pathsim(pc, variant="rowcol"):
    """Normalize path counts to [0, 1] similarities.

    ``rowcol`` (default): sim(s, t) = 2*PC(s, t) / (rowsum(s) + colsum(t)),
    i.e. paths from s plus paths into t.  ``diagonal``: the classic
    2*PC(s, t) / (PC(s, s) + PC(t, t)), defined only for palindromic paths.
    A zero denominator yields similarity 0.
    """
    if variant not in ("rowcol", "diagonal"):
        raise PathError(f"unknown PathSim variant {variant!r}")
    m = sp.csr_array(pc.matrix, dtype=np.float64).tocoo()
    if variant == "diagonal":
        if not pc.path.is_palindromic:
            raise PathError(
                f"diagonal variant needs a palindromic path, got "
                f"{pc.path.to_string()!r}"
            )
        diag = sp.csr_array(pc.matrix).diagonal()
        denom = diag[m.row] + diag[m.col]
    else:
        rowsum = np.asarray(pc.matrix.sum(axis=1)).ravel()
        colsum = np.asarray(pc.matrix.sum(axis=0)).ravel()
        denom = rowsum[m.row] + colsum[m.col]
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.where(denom > 0, 2.0 * m.data / np.where(denom > 0, denom, 1.0), 0.0)
    out = sp.csr_array((vals, (m.row, m.col)), shape=m.shape)
    out.eliminate_zeros()
    return SimilarityMatrix(pc.path, variant, out)


class PathSpecError(ValueError):
    """Malformed meta-path set file."""

    def __init__(self, message, path=None, line=None):
        prefix = ""
        if path is not None:
            prefix = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(prefix + message)


@dataclass
class PathGroups:
    """Meta-paths grouped by role: user-user, item-item, user-item."""

    user_user: list
    item_item: list
    user_item: list

    @property
    def counts(self):
        return (len(self.user_user), len(self.item_item), len(self.user_item))


def parse_path_spec(text, schema, source=None):
    """Parse a path-set file body into PathGroups (see module docstring)."""
    groups = {g: [] for g in GROUPS}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, sep, rest = line.partition(":")
        head = head.strip()
        if not sep or head not in GROUPS:
            raise PathSpecError(
                f"expected 'UU:|II:|UI: <path>', got {line!r}", source, lineno
            )
        try:
            path = parse_path(rest.strip(), schema)
        except PathError as exc:
            raise PathSpecError(str(exc), source, lineno) from exc
        u, i = schema.user_type, schema.item_type
        want = {"UU": (u, u), "II": (i, i), "UI": (u, i)}[head]
        got = (path.source_type, path.target_type)
        if got != want:
            raise PathSpecError(
                f"{head} path must run {want[0]!r} -> {want[1]!r}, got "
                f"{got[0]!r} -> {got[1]!r}",
                source,
                lineno,
            )
        groups[head].append(path)
    return PathGroups(groups["UU"], groups["II"], groups["UI"])


def load_path_spec(path, schema):
    with open(path, encoding="utf-8") as fh:
        return parse_path_spec(fh.read(), schema, source=path)


@dataclass
class RelationSet:
    """Similarity matrices per group, the model-side view of the meta-paths."""

    user_user: list
    item_item: list
    user_item: list

    @property
    def counts(self):
        return (len(self.user_user), len(self.item_item), len(self.user_item))


def _symmetrize(mat):
    return sp.csr_array((mat + mat.T) * 0.5)


def build_relation_set(graph, groups, variant="rowcol", cache_dir=None):
    """Compute (or load cached) similarity matrices for every declared path.

    User-user and item-item matrices are symmetrized (S + S^T)/2 so the
    graph regularizer sees exactly symmetric input regardless of float
    round-off or non-palindromic paths.
    """
    ghash = content_hash(graph) if cache_dir is not None else None
    out = {}
    for group, paths in (
        ("UU", groups.user_user),
        ("II", groups.item_item),
        ("UI", groups.user_item),
    ):
        sims = []
        for k, path in enumerate(paths):
            sim, _ = cached_similarity(
                graph, group, k, path, variant, cache_dir, ghash
            )
            sims.append(sim)
        out[group] = sims
    return RelationSet(out["UU"], out["II"], out["UI"])


def cached_similarity(graph, group, k, path, variant, cache_dir=None, ghash=None):
    """One similarity matrix, via the on-disk cache when possible.

    Returns (sim, status) where status is "cached" when a valid up-to-date
    cache file was reused and "computed" otherwise.  Computed user-user and
    item-item matrices are symmetrized before caching.
    """
    if cache_dir is not None:
        if ghash is None:
            ghash = content_hash(graph)
        sim = _load_cached(cache_dir, graph, group, k, path, variant, ghash)
        if sim is not None:
            return sim, "cached"
    sim = pathsim(path_count(graph, path), variant=variant)
    if group in ("UU", "II"):
        sim = SimilarityMatrix(sim.path, sim.variant, _symmetrize(sim.matrix))
    if cache_dir is not None:
        write_similarity(
            cache_file(cache_dir, group, k, path, variant), sim, group, ghash
        )
    return sim, "computed"


def cache_file(cache_dir, group, k, path, variant):
    slug = hashlib.sha1(f"{path.to_string()}|{variant}".encode()).hexdigest()[:10]
    return os.path.join(cache_dir, f"{group.lower()}{k:02d}_{slug}.sim")


def write_similarity(path, sim, group, graph_hash):
    """Atomically write one similarity matrix in the documented cache format."""
    coo = sp.coo_array(sim.matrix)
    lines = [
        "#hetecf-sim 1",
        f"#graph {graph_hash}",
        f"#group {group}",
        f"#path {sim.path.to_string()}",
        f"#variant {sim.variant}",
        f"#shape {coo.shape[0]} {coo.shape[1]}",
    ]
    order = np.lexsort((coo.col, coo.row))
    for i in order:
        lines.append(f"{coo.row[i]}\t{coo.col[i]}\t{float(coo.data[i])!r}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_similarity(path, schema):
    """Parse a cache file; raises PathSpecError on any corruption."""
    header = {}
    rows, cols, vals = [], [], []
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise PathSpecError(f"unreadable cache: {exc}", path) from exc
    if not lines or lines[0] != "#hetecf-sim 1":
        raise PathSpecError("missing cache signature", path)
    for line in lines[1:]:
        if line.startswith("#"):
            key, _, value = line[1:].partition(" ")
            header[key] = value
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise PathSpecError(f"malformed triple {line!r}", path)
        try:
            rows.append(int(fields[0]))
            cols.append(int(fields[1]))
            vals.append(float(fields[2]))
        except ValueError as exc:
            raise PathSpecError(f"malformed triple {line!r}", path) from exc
    for key in ("graph", "group", "path", "variant", "shape"):
        if key not in header:
            raise PathSpecError(f"cache header missing {key!r}", path)
    try:
        shape = tuple(int(x) for x in header["shape"].split())
        assert len(shape) == 2
    except (ValueError, AssertionError):
        raise PathSpecError(f"malformed shape {header['shape']!r}", path) from None
    try:
        mpath = parse_path(header["path"], schema)
        mat = sp.csr_array(
            (np.asarray(vals, dtype=np.float64), (rows, cols)), shape=shape
        )
    except (PathError, ValueError, TypeError) as exc:
        raise PathSpecError(f"corrupt cache body: {exc}", path) from exc
    return header, SimilarityMatrix(mpath, header["variant"], mat)


def _load_cached(cache_dir, graph, group, k, path, variant, ghash):
    fname = cache_file(cache_dir, group, k, path, variant)
    if not os.path.exists(fname):
        return None
    try:
        header, sim = read_similarity(fname, graph.schema)
    except PathSpecError as exc:
        log.warning("discarding corrupt similarity cache %s (%s)", fname, exc)
        return None
    if (
        header["graph"] != ghash
        or header["path"] != path.to_string()
        or header["variant"] != variant
        or header["group"] != group
    ):
        return None
    return sim
