"""Synthetic heterogeneous networks and the training-time scaling benchmark.

``generate`` links every (source, target) pair of each relation
independently with the relation's probability (default 0.2), so edge
counts are Binomial(pairs, p).  The default schema mirrors a
bibliographic network: Author / Paper / Conf / Term with writes,
published_in, contains, and cites relations, user = Author,
item = Conf.
"""

import time
from dataclasses import dataclass, field
from statistics import median

import numpy as np

from . import learner, metapath
from .graph import Schema, Relation, build_graph, derive_ratings

DEFAULT_LINK_PROB = 0.2


def default_schema():
    return Schema(
        node_types=("Author", "Paper", "Conf", "Term"),
        user_type="Author",
        item_type="Conf",
        relations=(
            Relation("writes", "Author", "Paper"),
            Relation("published_in", "Paper", "Conf"),
            Relation("contains", "Paper", "Term"),
            Relation("cites", "Paper", "Paper"),
        ),
    )


def default_paths(schema):
    """A small benchmark path set on the default schema."""
    text = "\n".join(
        [
            "UU: Author -writes-> Paper <-writes- Author",
            "II: Conf <-published_in- Paper -published_in-> Conf",
            "UI: Author -writes-> Paper -cites-> Paper -published_in-> Conf",
        ]
    )
    return metapath.parse_path_spec(text, schema)


def default_target_path(schema):
    return metapath.parse_path(
        "Author -writes-> Paper -published_in-> Conf", schema
    )


@dataclass
class SynthSpec:
    """Node counts per type plus per-relation link probabilities."""

    schema: Schema = field(default_factory=default_schema)
    counts: dict = None
    link_prob: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.counts is None:
            self.counts = {"Author": 40, "Paper": 60, "Conf": 12, "Term": 20}
        for t in self.schema.node_types:
            if self.counts.get(t, 0) < 1:
                raise ValueError(f"need at least one node of type {t!r}")
        for name, p in self.link_prob.items():
            self.schema.relation(name)  # raises on unknown relation
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"link probability for {name!r} outside [0, 1]")

    def prob(self, relation):
        return self.link_prob.get(relation, DEFAULT_LINK_PROB)

    def scaled(self, factor):
        counts = {
            t: max(1, int(round(c * factor))) for t, c in self.counts.items()
        }
        return SynthSpec(self.schema, counts, dict(self.link_prob), self.seed)


def generate(spec):
    """Seeded random network: independent Bernoulli links per relation."""
    rng = np.random.default_rng(spec.seed)
    nodes = []
    firsts = [t[:1].lower() for t in spec.schema.node_types]
    if len(set(firsts)) == len(firsts):
        prefix = dict(zip(spec.schema.node_types, firsts))
    else:  # initials collide; fall back to full type names
        prefix = {t: t.lower() + "_" for t in spec.schema.node_types}
    for t in spec.schema.node_types:
        nodes.extend((f"{prefix[t]}{i}", t) for i in range(spec.counts[t]))
    edges = []
    for rel in spec.schema.relations:
        ns, nt = spec.counts[rel.source], spec.counts[rel.target]
        p = spec.prob(rel.name)
        if p <= 0.0:
            continue
        linked = rng.random((ns, nt)) < p
        src, dst = np.nonzero(linked)
        edges.extend(
            (f"{prefix[rel.source]}{s}", f"{prefix[rel.target]}{t}", rel.name)
            for s, t in zip(src, dst)
        )
    return build_graph(spec.schema, nodes, edges)


@dataclass
class TimingRow:
    d: int
    n: int
    m: int
    edges: int
    iterations: int
    seconds_median: float
    seconds_min: float
    seconds_max: float


def _benchmark_cell(spec, d, hp, repeats):
    """Median wall-clock training time over ``repeats`` runs of one cell."""
    graph = generate(spec)
    paths = default_paths(spec.schema)
    target = default_target_path(spec.schema)
    ratings = derive_ratings(graph, target)
    rels = metapath.build_relation_set(graph, paths)
    hp_cell = hp.with_overrides(d=int(d))
    times = []
    iterations = 0
    for _ in range(repeats):
        t0 = time.perf_counter()
        state = learner.train(ratings, rels, hp_cell)
        times.append(time.perf_counter() - t0)
        iterations = state.factor_steps + state.weight_steps
    edge_count = sum(m.nnz for m in graph.matrices.values())
    return TimingRow(
        d=int(d),
        n=ratings.n,
        m=ratings.m,
        edges=int(edge_count),
        iterations=int(iterations),
        seconds_median=float(median(times)),
        seconds_min=float(min(times)),
        seconds_max=float(max(times)),
    )


def scaling_benchmark(
    base_spec=None,
    d_values=(5, 10, 20, 40),
    size_multipliers=(1.0, 1.5, 2.0, 3.0),
    hp=None,
    repeats=3,
    fixed_d=10,
):
    """Two sweeps with fixed iteration caps: time vs d at the base size,
    then time vs network size at d = ``fixed_d``.

    Returns a list of TimingRow; training cost is linear in d and in the
    user-item grid size, so both sweeps should regress linearly.
    """
    from .model import Hyperparams

    base_spec = base_spec or SynthSpec()
    hp = hp or Hyperparams(
        learn_rate=0.05, max_inner=5, max_outer=3, inner_tol=1e-9, outer_tol=1e-9
    )
    rows = []
    for d in d_values:
        rows.append(_benchmark_cell(base_spec, d, hp, repeats))
    for factor in size_multipliers:
        rows.append(_benchmark_cell(base_spec.scaled(factor), fixed_d, hp, repeats))
    return rows


def timing_csv(rows):
    import csv
    import io

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        [
            "d",
            "n",
            "m",
            "edges",
            "iterations",
            "seconds_median",
            "seconds_min",
            "seconds_max",
        ]
    )
    for r in rows:
        writer.writerow(
            [
                r.d,
                r.n,
                r.m,
                r.edges,
                r.iterations,
                repr(r.seconds_median),
                repr(r.seconds_min),
                repr(r.seconds_max),
            ]
        )
    return buf.getvalue()
