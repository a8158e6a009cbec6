"""Text spaces, bipartite graphs, task manifests and job-title merging.

Space files are JSON lines, one ``{"id": ..., "text": ...}`` object per line.
An optional first line starting with ``#!`` carries ``{"name": ..., "role": ...}``.
Graph and qrels files are tab-separated ``query_id<TAB>target_id`` pairs.
"""

from __future__ import annotations

import json
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

ROLES = ("skill", "job", "vacancy_sentence", "skill_alternative", "generic")
LABEL_TYPES = ("one", "multi")


class CorpusError(ValueError):
    """Raised for malformed or inconsistent corpus inputs."""


@dataclass(frozen=True)
class TextItem:
    id: str
    text: str


@dataclass(frozen=True)
class TextSpace:
    name: str
    role: str
    items: tuple[TextItem, ...] = ()

    def __post_init__(self):
        if self.role not in ROLES:
            raise CorpusError(f"unknown role {self.role!r}, expected one of {ROLES}")
        seen = set()
        for item in self.items:
            if not item.id:
                raise CorpusError("empty item id")
            if item.id in seen:
                raise CorpusError(f"duplicate id {item.id!r} in space {self.name!r}")
            seen.add(item.id)
        object.__setattr__(self, "_index", {item.id: i for i, item in enumerate(self.items)})

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._index

    @property
    def ids(self) -> list[str]:
        return [item.id for item in self.items]

    @property
    def texts(self) -> list[str]:
        return [item.text for item in self.items]

    def index(self, item_id: str) -> int:
        return self._index[item_id]

    def text(self, item_id: str) -> str:
        return self.items[self._index[item_id]].text


def load_space(path: str | os.PathLike, role: str | None = None, name: str | None = None) -> TextSpace:
    """Read a space file, preserving item order.

    ``role`` and ``name`` fall back to the ``#!`` header line, then to a
    ``<path>.meta.json`` sidecar. Explicit arguments win.
    """
    header: dict = {}
    sidecar = f"{os.fspath(path)}.meta.json"
    if os.path.exists(sidecar):
        with open(sidecar, encoding="utf-8") as fh:
            header.update(json.load(fh))

    items: list[TextItem] = []
    first_line: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#!"):
                if items:
                    raise CorpusError(f"{path}:{lineno}: header line after records")
                try:
                    header.update(json.loads(line[2:]))
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"{path}:{lineno}: malformed header: {exc}") from None
                continue
            try:
                record = json.loads(line)
                item_id, text = record["id"], record["text"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed record ({exc})") from None
            if not isinstance(item_id, str) or not item_id:
                raise CorpusError(f"{path}:{lineno}: id must be a non-empty string")
            if not isinstance(text, str) or not text:
                raise CorpusError(f"{path}:{lineno}: text must be a non-empty string")
            if item_id in first_line:
                raise CorpusError(
                    f"{path}: duplicate id {item_id!r} on lines {first_line[item_id]} and {lineno}"
                )
            first_line[item_id] = lineno
            items.append(TextItem(item_id, text))

    role = role or header.get("role")
    if role is None:
        raise CorpusError(f"{path}: no role given and none found in header")
    name = name or header.get("name") or os.path.splitext(os.path.basename(path))[0]
    return TextSpace(name=name, role=role, items=tuple(items))


def serialize_space(space: TextSpace, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#!" + json.dumps({"name": space.name, "role": space.role}, ensure_ascii=False) + "\n")
        for item in space.items:
            fh.write(json.dumps({"id": item.id, "text": item.text}, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class BipartiteGraph:
    """Observed edges between a query space and a target space.

    Construct through :meth:`from_edges` or :func:`load_graph` to get the
    checked, deduplicated form. Direct construction keeps ``edges`` verbatim,
    which is what :func:`validate_graph` is for.
    """

    query_space: TextSpace
    target_space: TextSpace
    edges: tuple[tuple[str, str], ...]

    def __post_init__(self):
        fwd: dict[str, list[str]] = defaultdict(list)
        rev: dict[str, list[str]] = defaultdict(list)
        for q, y in dict.fromkeys(self.edges):
            fwd[q].append(y)
            rev[y].append(q)
        object.__setattr__(self, "_fwd", dict(fwd))
        object.__setattr__(self, "_rev", dict(rev))

    @classmethod
    def from_edges(cls, query_space: TextSpace, target_space: TextSpace,
                   edges: Iterable[tuple[str, str]]) -> "BipartiteGraph":
        edges = list(dict.fromkeys((q, y) for q, y in edges))
        for q, y in edges:
            if q not in query_space:
                raise CorpusError(f"edge ({q!r}, {y!r}): unknown query id {q!r}")
            if y not in target_space:
                raise CorpusError(f"edge ({q!r}, {y!r}): unknown target id {y!r}")
        return cls(query_space, target_space, tuple(edges))

    def targets_of(self, query_id: str) -> list[str]:
        """Target set of a query, in first-seen edge order."""
        return list(self._fwd.get(query_id, ()))

    def queries_of(self, target_id: str) -> list[str]:
        return list(self._rev.get(target_id, ()))

    def degree(self, node_id: str, side: str = "target") -> int:
        table = self._rev if side == "target" else self._fwd
        return len(table.get(node_id, ()))

    def has_edge(self, query_id: str, target_id: str) -> bool:
        return target_id in self._fwd.get(query_id, ())

    def inverted(self) -> "BipartiteGraph":
        return BipartiteGraph(self.target_space, self.query_space,
                              tuple((y, q) for q, y in self.edges))

    def __len__(self) -> int:
        return len(set(self.edges))


def _read_pairs(path) -> list[tuple[int, str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise CorpusError(f"{path}:{lineno}: expected 'query_id<TAB>target_id'")
            pairs.append((lineno, parts[0], parts[1]))
    return pairs


def load_graph(path, query_space: TextSpace, target_space: TextSpace) -> BipartiteGraph:
    edges = []
    for lineno, q, y in _read_pairs(path):
        if q not in query_space:
            raise CorpusError(f"{path}:{lineno}: unknown query id {q!r}")
        if y not in target_space:
            raise CorpusError(f"{path}:{lineno}: unknown target id {y!r}")
        edges.append((q, y))
    return BipartiteGraph.from_edges(query_space, target_space, edges)


def save_graph(graph: BipartiteGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for q, y in dict.fromkeys(graph.edges):
            fh.write(f"{q}\t{y}\n")


@dataclass
class GraphReport:
    isolated_queries: list[str] = field(default_factory=list)
    duplicate_edges: list[tuple[str, str]] = field(default_factory=list)
    dangling_ids: list[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.isolated_queries or self.duplicate_edges or self.dangling_ids)

    @property
    def structurally_valid(self) -> bool:
        """No duplicates and no dangling endpoints; isolated queries allowed."""
        return not (self.duplicate_edges or self.dangling_ids)

    def as_dict(self) -> dict:
        return {
            "isolated_queries": list(self.isolated_queries),
            "duplicate_edges": [list(e) for e in self.duplicate_edges],
            "dangling_ids": list(self.dangling_ids),
        }


def validate_graph(g: BipartiteGraph) -> GraphReport:
    report = GraphReport()
    counts = Counter(g.edges)
    report.duplicate_edges = [e for e, c in counts.items() if c > 1]
    dangling = []
    for q, y in counts:
        if q not in g.query_space and q not in dangling:
            dangling.append(q)
        if y not in g.target_space and y not in dangling:
            dangling.append(y)
    report.dangling_ids = dangling
    linked = {q for q, _ in counts}
    report.isolated_queries = [qid for qid in g.query_space.ids if qid not in linked]
    return report


# ---------------------------------------------------------------------------
# tasks


@dataclass(frozen=True)
class TaskSpec:
    name: str
    query_space: TextSpace
    target_space: TextSpace
    qrels: dict[str, frozenset[str]]
    label_type: str = "multi"
    exclude_self: bool = False
    task_group: str = ""

    def __post_init__(self):
        if self.label_type not in LABEL_TYPES:
            raise CorpusError(f"task {self.name!r}: label_type must be one of {LABEL_TYPES}")
        if not self.task_group:
            object.__setattr__(self, "task_group", self.name)
        for qid, rel in self.qrels.items():
            if qid not in self.query_space:
                raise CorpusError(f"task {self.name!r}: qrels query {qid!r} not in query space")
            if not rel:
                raise CorpusError(f"task {self.name!r}: empty relevance set for {qid!r}")
            for tid in rel:
                if tid not in self.target_space:
                    raise CorpusError(f"task {self.name!r}: qrels target {tid!r} not in target space")
            if self.label_type == "one" and len(rel) != 1:
                raise CorpusError(
                    f"task {self.name!r}: single-label task has {len(rel)} relevant targets for {qid!r}"
                )

    @property
    def query_ids(self) -> list[str]:
        """Queries with judgments, in query-space order."""
        return [qid for qid in self.query_space.ids if qid in self.qrels]

    def inverted(self, name: str | None = None) -> "TaskSpec":
        inv: dict[str, set[str]] = defaultdict(set)
        for qid, rel in self.qrels.items():
            for tid in rel:
                inv[tid].add(qid)
        label = "one" if all(len(v) == 1 for v in inv.values()) else "multi"
        return TaskSpec(name or f"{self.name}-inv", self.target_space, self.query_space,
                        {k: frozenset(v) for k, v in inv.items()}, label, self.exclude_self,
                        name or f"{self.task_group}-inv")


def load_qrels(path) -> dict[str, frozenset[str]]:
    rel: dict[str, set[str]] = defaultdict(set)
    for _, q, y in _read_pairs(path):
        rel[q].add(y)
    return {k: frozenset(v) for k, v in rel.items()}


def qrels_from_graph(graph: BipartiteGraph) -> dict[str, frozenset[str]]:
    rel: dict[str, set[str]] = defaultdict(set)
    for q, y in graph.edges:
        rel[q].add(y)
    return {k: frozenset(v) for k, v in rel.items()}


def load_task(path, spaces: dict[str, TextSpace] | None = None) -> TaskSpec:
    """Load a task manifest. Relative paths resolve against the manifest's directory.

    ``spaces`` caches already-loaded spaces by resolved path so that tasks
    sharing a target space share one object.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}: malformed manifest: {exc}") from None
    missing = [k for k in ("name", "query_space", "target_space", "qrels") if k not in manifest]
    if missing:
        raise CorpusError(f"{path}: manifest missing fields {missing}")
    base = os.path.dirname(os.path.abspath(path))
    spaces = {} if spaces is None else spaces

    def resolve(p):
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(base, p))

    def space(p):
        full = resolve(p)
        if full not in spaces:
            if not os.path.exists(full):
                raise CorpusError(f"{path}: space file not found: {full}")
            spaces[full] = load_space(full, role=None if _has_role(full) else "generic")
        return spaces[full]

    qrels_path = resolve(manifest["qrels"])
    if not os.path.exists(qrels_path):
        raise CorpusError(f"{path}: qrels file not found: {qrels_path}")
    return TaskSpec(
        name=manifest["name"],
        query_space=space(manifest["query_space"]),
        target_space=space(manifest["target_space"]),
        qrels=load_qrels(qrels_path),
        label_type=manifest.get("label_type", "multi"),
        exclude_self=bool(manifest.get("exclude_self", False)),
        task_group=manifest.get("task_group", ""),
    )


def _has_role(path) -> bool:
    if os.path.exists(f"{path}.meta.json"):
        return True
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                return line.startswith("#!") and "role" in line
    return False


# ---------------------------------------------------------------------------
# job-title deduplication


@dataclass(frozen=True)
class RawVacancyRecord:
    title: str
    skills: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        for sid, conf in self.skills:
            if not 0.0 <= conf <= 1.0:
                raise CorpusError(f"confidence {conf} for skill {sid!r} outside [0, 1]")


@dataclass(frozen=True)
class MergedProfile:
    title: str
    skills: tuple[tuple[str, float], ...]  # (skill_id, mean confidence), best first

    @property
    def skill_ids(self) -> list[str]:
        return [sid for sid, _ in self.skills]

    def as_record(self) -> RawVacancyRecord:
        return RawVacancyRecord(self.title, self.skills)


def normalize_title(title: str) -> str:
    return " ".join(title.split()).casefold()


def dedup_merge_jobs(records: Sequence[RawVacancyRecord], max_profile: int = 200) -> list[MergedProfile]:
    """Merge vacancy records whose titles agree up to case and whitespace.

    A skill survives when it occurs in at least half of the merged records.
    Survivors are ordered by mean confidence (descending, ties by id) and cut
    to ``max_profile``. Output order follows first appearance of each title.
    """
    groups: dict[str, list[RawVacancyRecord]] = {}
    for rec in records:
        groups.setdefault(normalize_title(rec.title), []).append(rec)

    merged = []
    for group in groups.values():
        surfaces = Counter(" ".join(r.title.split()) for r in group)
        top = max(surfaces.values())
        canonical = next(s for s in surfaces if surfaces[s] == top)  # Counter keeps first-seen order

        occurrences: Counter = Counter()
        conf_sum: dict[str, float] = defaultdict(float)
        for rec in group:
            best: dict[str, float] = {}
            for sid, conf in rec.skills:
                best[sid] = max(conf, best.get(sid, 0.0))
            for sid, conf in best.items():
                occurrences[sid] += 1
                conf_sum[sid] += conf
        kept = [
            (sid, conf_sum[sid] / occurrences[sid])
            for sid in occurrences
            if 2 * occurrences[sid] >= len(group)
        ]
        kept.sort(key=lambda sc: (-sc[1], sc[0]))
        merged.append(MergedProfile(canonical, tuple(kept[:max_profile])))
    return merged
