"""
Class taxonomies: parsing of hierarchy strings, the descendant matrix and label encodings.

A hierarchy string is a comma-separated list of underscore-joined paths, e.g.
"1,1_1,1_2,2". Every prefix of a path is a class; the tree hangs below a
virtual root that is never a row or column of the descendant matrix. Classes
are ordered canonically by (depth, dotted name).
"""
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from fchc.errors import EmptySpec, MalformedToken, UnknownClass, UnknownPreset

ROOT = "root"
PATH_SEPARATOR = "_"
NAME_SEPARATOR = "."


@dataclass(frozen=True, order=True)
class ClassRef:
    index: int
    name: str
    depth: int

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class DescendantMatrix:
    """
    Entry (A, B) is set iff B is a subclass of A (A included).
    Kept both as a dense mask and as one index array per class.
    """
    bits: np.ndarray
    index_lists: Tuple[np.ndarray, ...]

    @property
    def size(self) -> int:
        return self.bits.shape[0]

    @property
    def pair_count(self) -> int:
        """Number of (class, subclass) pairs, diagonal included."""
        return int(self.bits.sum())

    def row(self, a: int) -> np.ndarray:
        return self.index_lists[a]


class Taxonomy:
    """
    An immutable class tree. Build it with `parse_taxonomy` or `get_builtin_taxonomy`.
    """

    def __init__(self,
                 spec_string: str,
                 classes: Sequence[ClassRef],
                 parent: Mapping[int, Optional[int]],
                 names: Optional[Mapping[str, str]] = None,
                 root_name: str = ROOT):
        self.spec_string = spec_string
        self.classes: Tuple[ClassRef, ...] = tuple(classes)
        self.parent: Dict[int, Optional[int]] = dict(parent)
        self.root_name = root_name
        self._names: Dict[str, str] = dict(names or {})
        self._by_name = {c.name: c for c in self.classes}

        children: Dict[Optional[int], List[int]] = {None: []}
        for c in self.classes:
            children.setdefault(c.index, [])
            children.setdefault(self.parent[c.index], []).append(c.index)
        self._children = {k: tuple(v) for k, v in children.items()}

        self.leaves: FrozenSet[ClassRef] = frozenset(c for c in self.classes if not self._children[c.index])

    # ---- basic accessors ----

    def __len__(self) -> int:
        return len(self.classes)

    def __iter__(self) -> Iterator[ClassRef]:
        return iter(self.classes)

    def __contains__(self, item) -> bool:
        if isinstance(item, ClassRef):
            return 0 <= item.index < len(self.classes) and self.classes[item.index] == item
        try:
            self.resolve(item)
        except UnknownClass:
            return False
        return True

    def __eq__(self, other) -> bool:
        if not isinstance(other, Taxonomy):
            return NotImplemented
        return self.classes == other.classes and self.parent == other.parent

    def __hash__(self) -> int:
        return hash((self.classes, tuple(sorted(self.parent.items(), key=lambda kv: kv[0]))))

    def __repr__(self) -> str:
        return f"Taxonomy(classes={len(self)}, leaves={len(self.leaves)}, max_depth={self.max_depth})"

    @property
    def size(self) -> int:
        return len(self.classes)

    @property
    def root_index(self) -> int:
        """Position of the virtual root in a model output vector (after the C classes)."""
        return len(self.classes)

    @property
    def max_depth(self) -> int:
        return max(c.depth for c in self.classes)

    @property
    def parental(self) -> FrozenSet[ClassRef]:
        return frozenset(self.classes) - self.leaves

    @cached_property
    def leaf_indices(self) -> np.ndarray:
        return np.array(sorted(c.index for c in self.leaves), dtype=np.int64)

    @cached_property
    def descendants(self) -> DescendantMatrix:
        return descendant_matrix(self)

    @cached_property
    def descendants_with_root(self) -> DescendantMatrix:
        """
        (C + 1) x (C + 1) variant for network outputs: the trailing root slot
        has every class as a subclass.
        """
        c = len(self.classes)
        bits = np.zeros((c + 1, c + 1), dtype=bool)
        bits[:c, :c] = self.descendants.bits
        bits[c, :] = True
        bits.setflags(write=False)
        index_lists = tuple(np.flatnonzero(bits[a]) for a in range(c + 1))
        return DescendantMatrix(bits=bits, index_lists=index_lists)

    @cached_property
    def graph(self) -> nx.DiGraph:
        """Parent -> child edges, including the virtual root."""
        g = nx.DiGraph()
        g.add_node(ROOT)
        for c in self.classes:
            p = self.parent[c.index]
            g.add_edge(ROOT if p is None else self.classes[p].name, c.name)
        return g

    def children(self, a) -> Tuple[ClassRef, ...]:
        ref = self.resolve(a)
        return tuple(self.classes[i] for i in self._children[ref.index])

    def parent_of(self, a) -> Optional[ClassRef]:
        ref = self.resolve(a)
        p = self.parent[ref.index]
        return None if p is None else self.classes[p]

    def display_name(self, a) -> str:
        ref = self.resolve(a)
        return self._names.get(ref.name, ref.name)

    @property
    def names(self) -> Dict[str, str]:
        return {c.name: self.display_name(c) for c in self.classes}

    def resolve(self, key) -> ClassRef:
        """
        Look a class up by ClassRef, canonical index, dotted path ("1.1"),
        underscore path ("1_1") or display name ("Lymphocytes").
        """
        if isinstance(key, ClassRef):
            if key in self.classes:
                return key
            raise UnknownClass(f"Class {key!r} does not belong to this taxonomy")
        if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
            if 0 <= int(key) < len(self.classes):
                return self.classes[int(key)]
            raise UnknownClass(f"Class index {key} out of range [0, {len(self.classes)})")
        if isinstance(key, str):
            path = key.strip().replace(PATH_SEPARATOR, NAME_SEPARATOR)
            if path in self._by_name:
                return self._by_name[path]
            lowered = key.strip().lower()
            for c in self.classes:
                if self._names.get(c.name, "").lower() == lowered:
                    return c
        raise UnknownClass(f"Unknown class {key!r}")

    def to_json(self) -> Dict:
        """Audit view of the parsed tree."""
        nodes = []
        for c in self.classes:
            p = self.parent[c.index]
            nodes.append({
                "index": c.index,
                "path": c.name,
                "name": self.display_name(c),
                "depth": c.depth,
                "parent": ROOT if p is None else self.classes[p].name,
                "leaf": c in self.leaves,
            })
        return {
            "spec": self.spec_string,
            "root": self.root_name,
            "root_index": self.root_index,
            "classes": len(self.classes),
            "leaves": len(self.leaves),
            "max_depth": self.max_depth,
            "nodes": nodes,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def _split_tokens(spec: str) -> List[List[str]]:
    if spec is None or not spec.strip():
        raise EmptySpec("Hierarchy specification is empty")

    paths = []
    for raw in spec.split(","):
        token = raw.strip()
        if not token:
            raise MalformedToken(f"Empty token in hierarchy specification '{spec}'")
        segments = token.split(PATH_SEPARATOR)
        if any(not s or NAME_SEPARATOR in s or s.strip() != s for s in segments):
            raise MalformedToken(f"Malformed token '{token}' in hierarchy specification")
        paths.append(segments)
    return paths


def parse_taxonomy(spec: str, names: Optional[Mapping[str, str]] = None, root_name: str = ROOT) -> Taxonomy:
    """
    Parse a hierarchy string into a Taxonomy. Missing ancestors are created
    from the prefixes of every path.
    """
    paths = _split_tokens(spec)

    parent_name: Dict[str, Optional[str]] = {}
    for segments in paths:
        for i in range(1, len(segments) + 1):
            node = NAME_SEPARATOR.join(segments[:i])
            parent_name[node] = NAME_SEPARATOR.join(segments[:i - 1]) if i > 1 else None

    ordered = sorted(parent_name, key=lambda x: (len(x.split(NAME_SEPARATOR)), x))
    classes = [ClassRef(index=i, name=n, depth=len(n.split(NAME_SEPARATOR))) for i, n in enumerate(ordered)]
    index_of = {c.name: c.index for c in classes}
    parent = {index_of[n]: (None if p is None else index_of[p]) for n, p in parent_name.items()}

    normalized_names = {k.replace(PATH_SEPARATOR, NAME_SEPARATOR): v for k, v in (names or {}).items()}
    unknown = set(normalized_names) - set(index_of)
    if unknown:
        raise UnknownClass(f"Name map refers to classes missing from the hierarchy: {sorted(unknown)}")

    return Taxonomy(spec.strip(), classes, parent, normalized_names, root_name)


def descendant_matrix(t: Taxonomy) -> DescendantMatrix:
    """C x C mask, entry (A, B) set iff a downward path of length >= 0 leads from A to B."""
    c = len(t.classes)
    g = nx.DiGraph()
    g.add_nodes_from(range(c))
    g.add_edges_from((p, i) for i, p in t.parent.items() if p is not None)

    bits = np.zeros((c, c), dtype=bool)
    np.fill_diagonal(bits, True)
    for a in range(c):
        below = list(nx.descendants(g, a))
        if below:
            bits[a, below] = True

    index_lists = tuple(np.flatnonzero(bits[a]) for a in range(c))
    for arr in index_lists:
        arr.setflags(write=False)
    bits.setflags(write=False)
    return DescendantMatrix(bits=bits, index_lists=index_lists)


def subclass_set(t: Taxonomy, a) -> FrozenSet[ClassRef]:
    ref = t.resolve(a)
    return frozenset(t.classes[i] for i in t.descendants.row(ref.index))


def ancestor_set(t: Taxonomy, a) -> FrozenSet[ClassRef]:
    ref = t.resolve(a)
    out = []
    current: Optional[int] = ref.index
    while current is not None:
        out.append(t.classes[current])
        current = t.parent[current]
    return frozenset(out)


def label_closure(t: Taxonomy, leaf) -> np.ndarray:
    """Multi-hot vector over the C classes with ones on the class and all its ancestors."""
    y = np.zeros(len(t.classes), dtype=np.float64)
    for c in ancestor_set(t, leaf):
        y[c.index] = 1.0
    return y


def label_matrix(t: Taxonomy, labels: Iterable, with_root: bool = False) -> np.ndarray:
    """
    Stack the label closures of a sequence of class labels into an N x C matrix
    (N x (C + 1) with a trailing always-on root column when `with_root` is set).
    """
    closures = {c.index: label_closure(t, c) for c in t.classes}
    rows = [closures[t.resolve(lbl).index] for lbl in labels]
    y = np.vstack(rows) if rows else np.zeros((0, len(t.classes)))
    if with_root:
        y = np.hstack([y, np.ones((y.shape[0], 1))])
    return y


# ---- presets ----

FC_DEEP_SPEC = "1,1_1,1_1_1,1_1_1_1,1_1_1_2,1_1_2,1_1_3,1_1_3_1,1_1_3_2,1_2,1_3,2"
FC_DEEP_NAMES = {
    "1": "CD45 pos",
    "1.1": "Lymphocytes",
    "1.1.1": "B cells",
    "1.1.1.1": "Lambda pos",
    "1.1.1.2": "Kappa pos",
    "1.1.2": "NK cells",
    "1.1.3": "T cells",
    "1.1.3.1": "CD8 T cells",
    "1.1.3.2": "CD4 T cells",
    "1.2": "Monocytes",
    "1.3": "Neutrophils",
    "2": "CD45 neg",
}

FC_SHALLOW_SPEC = "1,2,3,4,5,5_1,5_2,5_3"
FC_SHALLOW_NAMES = {
    "1": "T cells",
    "2": "B cells",
    "3": "Monocytes",
    "4": "Mast cells",
    "5": "HSPC",
    "5.1": "Myeloid HSPC",
    "5.2": "Lymphoid HSPC",
    "5.3": "Other HSPC",
}

_PRESETS = {
    "fc-deep": (FC_DEEP_SPEC, FC_DEEP_NAMES, "Total cell population"),
    "fc-shallow": (FC_SHALLOW_SPEC, FC_SHALLOW_NAMES, "Root"),
}


def builtin_taxonomies() -> Dict[str, Taxonomy]:
    return {name: parse_taxonomy(spec, names, root) for name, (spec, names, root) in _PRESETS.items()}


def get_builtin_taxonomy(name: str) -> Taxonomy:
    if name not in _PRESETS:
        raise UnknownPreset(f"Unknown hierarchy preset '{name}'. Available: {sorted(_PRESETS)}")
    spec, names, root = _PRESETS[name]
    return parse_taxonomy(spec, names, root)


def taxonomy_from_config(preset: Optional[str], spec: Optional[str], names: Optional[Mapping[str, str]] = None) -> Taxonomy:
    """An explicit spec string wins over the preset; preset names are kept when the structure matches."""
    if spec:
        base_names: Dict[str, str] = {}
        if preset in _PRESETS and _PRESETS[preset][0] == spec.strip():
            base_names = dict(_PRESETS[preset][1])
        base_names.update(names or {})
        return parse_taxonomy(spec, base_names)
    t = get_builtin_taxonomy(preset)
    if names:
        merged = dict(t.names)
        merged.update(names)
        return parse_taxonomy(t.spec_string, merged, t.root_name)
    return t


def random_taxonomy(rng: np.random.Generator, n_classes: int, shape: str = "bushy") -> Taxonomy:
    """
    A random tree with `n_classes` classes. "bushy" attaches every new class to a
    uniformly chosen earlier class or the root, "chain" builds a single path.
    """
    if n_classes < 1:
        raise EmptySpec("A taxonomy needs at least one class")
    paths: List[List[str]] = []
    child_count: Dict[int, int] = {}
    root_children = 0
    for i in range(n_classes):
        if shape == "chain":
            parent = i - 1 if i > 0 else None
        else:
            choice = int(rng.integers(-1, i)) if i > 0 else -1
            parent = None if choice < 0 else choice
        if parent is None:
            root_children += 1
            paths.append([str(root_children)])
        else:
            child_count[parent] = child_count.get(parent, 0) + 1
            paths.append(paths[parent] + [str(child_count[parent])])
    return parse_taxonomy(",".join(PATH_SEPARATOR.join(p) for p in paths))
