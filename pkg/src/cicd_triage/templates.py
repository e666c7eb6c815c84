"""Structural log templates mined with a fixed-depth parse tree.

Success-run logs are mined independently per run; a per-task store keeps
the template sets of the latest ``x`` runs (newest first) and exposes the
union as the "stable background" that the log-diff filter checks against.

The miner follows the classic fixed-depth-tree design: route by token
count, then by the first ``depth - 2`` tokens (digit-bearing tokens route
through a wildcard child), then group by token similarity at the leaf.
Learning similarity counts only exact token matches; lookup similarity
additionally lets wildcard slots match anything, so a line always finds
the cluster it helped form.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import StoreError
from .ingest import RawLog

WILDCARD = "<*>"

# Tokens masked before tree insertion: plain/dotted numbers, long hex runs
# (commit SHAs), 0x literals, and UUIDs. CI logs are dominated by these.
_PRE_MASK_RES = (
    re.compile(r"^[+-]?\d+(?:[.,]\d+)*$"),
    re.compile(r"^0[xX][0-9a-fA-F]+$"),
    re.compile(r"^[0-9a-fA-F]{8,}$"),
    re.compile(r"^[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}$"),
)

_HAS_DIGIT_RE = re.compile(r"\d")


def mask_token(token: str) -> str:
    """Replace number/hex/UUID-shaped tokens with the wildcard."""
    for pattern in _PRE_MASK_RES:
        if pattern.match(token):
            return WILDCARD
    return token


def line_tokens(line: str) -> list[str]:
    """Whitespace tokens of a line after pre-masking."""
    return [mask_token(t) for t in line.split()]


@dataclass(frozen=True)
class LogTemplate:
    """A template: token slots where ``<*>`` marks a variable position."""

    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.tokens:
            raise ValueError("a template needs at least one token")

    @property
    def canonical(self) -> str:
        return " ".join(self.tokens)

    @classmethod
    def from_canonical(cls, canonical: str) -> "LogTemplate":
        return cls(tuple(canonical.split(" ")))


# Degenerate whitespace-only lines map here instead of an empty tree path.
BLANK_TEMPLATE = LogTemplate((WILDCARD,))


@dataclass(frozen=True)
class DrainConfig:
    tree_depth: int = 4
    similarity_threshold: float = 0.4
    max_children: int = 100

    def __post_init__(self) -> None:
        if self.tree_depth < 3:
            raise ValueError("tree_depth must be >= 3")
        if not 0.0 < self.similarity_threshold < 1.0:
            raise ValueError("similarity_threshold must be in (0, 1)")
        if self.max_children < 1:
            raise ValueError("max_children must be positive")


class _Cluster:
    __slots__ = ("tokens",)

    def __init__(self, tokens: list[str]):
        self.tokens = tokens

    def merge(self, tokens: list[str]) -> None:
        self.tokens = [a if a == b else WILDCARD for a, b in zip(self.tokens, tokens)]


class _Node:
    __slots__ = ("children", "clusters")

    def __init__(self):
        self.children: dict[object, _Node] = {}
        self.clusters: list[_Cluster] = []


class TemplateMiner:
    """Fixed-depth parse tree clustering lines into templates.

    ``learn`` inserts a line (mutating cluster templates); ``match`` is a
    read-only lookup returning the template the line belongs to, or a
    fresh single-line template when nothing is similar enough.
    """

    def __init__(self, cfg: DrainConfig | None = None):
        self.cfg = cfg or DrainConfig()
        self._root = _Node()
        self._saw_blank = False

    # -- tree plumbing -------------------------------------------------

    def _route(self, tokens: list[str], create: bool) -> _Node | None:
        node = self._root
        keys: list[object] = [len(tokens)]
        prefix_len = self.cfg.tree_depth - 2
        for token in tokens[:prefix_len]:
            keys.append(WILDCARD if _HAS_DIGIT_RE.search(token) else token)
        for level, key in enumerate(keys):
            child = node.children.get(key)
            # Token levels (not the length level) shunt unseen keys through
            # the wildcard child once a node is full.
            if child is None and level > 0 and key != WILDCARD:
                if not create and WILDCARD in node.children:
                    child = node.children[WILDCARD]
                elif create and len(node.children) >= self.cfg.max_children:
                    key = WILDCARD
                    child = node.children.get(WILDCARD)
            if child is None:
                if not create:
                    return None
                child = _Node()
                node.children[key] = child
            node = child
        return node

    @staticmethod
    def _similarity(tokens: list[str], cluster: _Cluster, wildcard_matches: bool) -> tuple[float, int]:
        exact = 0
        wild = 0
        for t, c in zip(tokens, cluster.tokens):
            if c == WILDCARD:
                wild += 1
            elif t == c:
                exact += 1
        hits = exact + wild if wildcard_matches else exact
        return hits / len(tokens), exact

    def _best_cluster(self, node: _Node, tokens: list[str], wildcard_matches: bool) -> _Cluster | None:
        best: _Cluster | None = None
        best_key = (-1.0, -1)
        for cluster in node.clusters:
            sim, exact = self._similarity(tokens, cluster, wildcard_matches)
            if sim >= self.cfg.similarity_threshold and (sim, exact) > best_key:
                best, best_key = cluster, (sim, exact)
        return best

    # -- public API ----------------------------------------------------

    def learn(self, line: str) -> LogTemplate:
        """Insert a line, merging it into the most similar cluster."""
        tokens = line_tokens(line)
        if not tokens:
            self._saw_blank = True
            return BLANK_TEMPLATE
        leaf = self._route(tokens, create=True)
        assert leaf is not None
        cluster = self._best_cluster(leaf, tokens, wildcard_matches=False)
        if cluster is None:
            cluster = _Cluster(list(tokens))
            leaf.clusters.append(cluster)
        else:
            cluster.merge(tokens)
        return LogTemplate(tuple(cluster.tokens))

    def match(self, line: str) -> LogTemplate:
        """Read-only lookup of the template this line belongs to."""
        tokens = line_tokens(line)
        if not tokens:
            return BLANK_TEMPLATE
        leaf = self._route(tokens, create=False)
        if leaf is not None:
            cluster = self._best_cluster(leaf, tokens, wildcard_matches=True)
            if cluster is not None:
                return LogTemplate(tuple(cluster.tokens))
        return LogTemplate(tuple(tokens))

    def templates(self) -> set[LogTemplate]:
        """All templates currently held by the tree."""
        out: set[LogTemplate] = set()
        if self._saw_blank:
            out.add(BLANK_TEMPLATE)
        stack = [self._root]
        while stack:
            node = stack.pop()
            stack.extend(node.children.values())
            out.update(LogTemplate(tuple(c.tokens)) for c in node.clusters)
        return out

    @classmethod
    def from_templates(cls, templates: Iterable[LogTemplate], cfg: DrainConfig | None = None) -> "TemplateMiner":
        """Rebuild a match-ready tree from previously mined templates."""
        miner = cls(cfg)
        for template in sorted(templates, key=lambda t: t.canonical):
            if template == BLANK_TEMPLATE:
                miner._saw_blank = True
                continue
            tokens = list(template.tokens)
            leaf = miner._route(tokens, create=True)
            assert leaf is not None
            leaf.clusters.append(_Cluster(tokens))
        return miner


def mine_templates(log: RawLog, cfg: DrainConfig | None = None) -> set[LogTemplate]:
    """Mine the template set of one run; empty logs yield the empty set."""
    miner = TemplateMiner(cfg)
    for line in log.lines:
        miner.learn(line.text)
    return miner.templates()


def extract_template(line: str, miner: TemplateMiner) -> LogTemplate:
    """Template a line maps to under an existing mining context."""
    return miner.match(line)


@dataclass(frozen=True)
class TemplateStore:
    """Per-task store of the template sets of the latest ``x`` runs."""

    task_key: str
    x: int = 3
    runs: tuple[tuple[str, frozenset[LogTemplate]], ...] = ()
    _union: frozenset[str] = field(init=False, repr=False, compare=False, default=frozenset())

    def __post_init__(self) -> None:
        if self.x < 1:
            raise ValueError("retention x must be positive")
        if len(self.runs) > self.x:
            raise ValueError(f"store holds {len(self.runs)} runs, retention is {self.x}")
        union = frozenset(t.canonical for _, templates in self.runs for t in templates)
        object.__setattr__(self, "_union", union)

    def active_templates(self) -> set[LogTemplate]:
        """Union of templates over the retained runs."""
        return {t for _, templates in self.runs for t in templates}

    def contains(self, template: LogTemplate) -> bool:
        return template.canonical in self._union

    def run_ids(self) -> list[str]:
        return [run_id for run_id, _ in self.runs]


def update_store(store: TemplateStore, run_id: str, templates: set[LogTemplate]) -> TemplateStore:
    """Prepend a run, evicting the oldest once more than ``x`` are held."""
    if run_id in store.run_ids():
        raise StoreError(f"run {run_id!r} already present in store for task {store.task_key!r}")
    runs = ((run_id, frozenset(templates)),) + store.runs
    return TemplateStore(task_key=store.task_key, x=store.x, runs=runs[: store.x])


def contains(store: TemplateStore, template: LogTemplate) -> bool:
    return store.contains(template)


# -- persistence: one JSON file per task_key ---------------------------


def store_path(directory: str | Path, task_key: str) -> Path:
    safe = re.sub(r"[^A-Za-z0-9._-]", "_", task_key)
    return Path(directory) / f"{safe}.templates.json"


def save_store(store: TemplateStore, directory: str | Path) -> Path:
    path = store_path(directory, store.task_key)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "task_key": store.task_key,
        "x": store.x,
        "runs": [
            {"run_id": run_id, "templates": sorted(t.canonical for t in templates)}
            for run_id, templates in store.runs
        ],
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_store(directory: str | Path, task_key: str, x: int = 3) -> TemplateStore:
    """Load a task's store; a missing file yields an empty store."""
    path = store_path(directory, task_key)
    if not path.exists():
        return TemplateStore(task_key=task_key, x=x)
    payload = json.loads(path.read_text(encoding="utf-8"))
    runs = tuple(
        (
            run["run_id"],
            frozenset(LogTemplate.from_canonical(c) for c in run["templates"]),
        )
        for run in payload["runs"]
    )
    return TemplateStore(task_key=payload["task_key"], x=payload["x"], runs=runs)
