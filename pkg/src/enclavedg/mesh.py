"""Adaptive Cartesian mesh as a 3-partitioned spacetree.

The tree stores three layers of structure:

* the *real* tree: Inner nodes plus the real cells (UnrefinedFine or
  RefinedFine) that tile the domain and carry DG data,
* *scaffolding* below RefinedFine cells: Virtual cells that stand in for a
  coarse cell at a finer resolution along a transition, and Supplemental
  nodes that only complete the tree,
* the *face forest*: one record per interface; a face has children exactly
  where the opposite side is refined finer (hanging face), forming chains
  from the coarse cell's face down to the leaves where Riemann problems are
  solved.

Deterministic traversal orders are derived from a depth-first walk with
children in lexicographic index order; the induced leaf sequence doubles as
the space-filling-curve order used for domain decomposition.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import CapacityError, ConfigError, InvalidTargetError, NotCoarsenableError


class NodeKind(enum.Enum):
    INNER = "inner"
    UNREFINED_FINE = "unrefined_fine"
    REFINED_FINE = "refined_fine"
    VIRTUAL = "virtual"
    SUPPLEMENTAL = "supplemental"


REAL_KINDS = (NodeKind.UNREFINED_FINE, NodeKind.REFINED_FINE)


class SpacetreeNode:
    """Tree node; ``children`` holds all 3^d children or is None."""

    __slots__ = ("level", "index", "kind", "children", "parent")

    def __init__(self, level, index, kind, parent=None):
        self.level = level
        self.index = index
        self.kind = kind
        self.children = None
        self.parent = parent

    @property
    def key(self):
        return (self.level, self.index)

    def __repr__(self):
        return f"<node {self.kind.value} L{self.level} {self.index}>"


@dataclass(frozen=True)
class CellRef:
    """A node together with its axis-aligned box."""

    node: SpacetreeNode
    origin: tuple
    edges: tuple


class FaceRecord:
    """Structural face data: position, adjacency, and the chain links.

    ``sides[s]`` is a pair (tag, node) with tag in {'cell', 'virtual',
    'refined', 'boundary'}; ``owners[s]`` is the real cell covering that side
    (None for boundaries and for the refined side of a hanging face).
    Numerical buffers live in per-rank stores keyed by ``face.id`` so that
    every simulated rank holds its own copy.
    """

    __slots__ = ("id", "axis", "level", "pos", "parent", "children", "sides",
                 "owners", "child_pos")

    def __init__(self, face_id, axis, level, pos):
        self.id = face_id
        self.axis = axis
        self.level = level
        self.pos = pos
        self.parent = None
        self.children = None
        self.child_pos = None   # transverse digit tuple within parent
        self.sides = [None, None]
        self.owners = [None, None]

    @property
    def key(self):
        return (self.axis, self.level, self.pos)

    @property
    def is_leaf(self):
        return not self.children

    def __repr__(self):
        return f"<face {self.id} axis{self.axis} L{self.level} {self.pos}>"


@dataclass
class MeshDelta:
    """Topology change summary between two consistent mesh states."""

    created_cells: set = field(default_factory=set)
    removed_cells: set = field(default_factory=set)
    created_faces: set = field(default_factory=set)
    removed_faces: set = field(default_factory=set)

    @property
    def empty(self):
        return not (self.created_cells or self.removed_cells
                    or self.created_faces or self.removed_faces)


class TraversalOrder:
    """Frozen event sequence for one sweep kind.

    events: list of (kind, obj) with kind in {'cell', 'virtual', 'face'}.
    """

    def __init__(self, events, version):
        self.events = events
        self.version = version

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)


class CellClass(enum.Enum):
    SKELETON = "skeleton"
    ENCLAVE = "enclave"


class Mesh:
    def __init__(self, dim=2, origin=None, extent=None, periodic=False, max_depth=10):
        if dim not in (2, 3):
            raise ConfigError(f"dim must be 2 or 3, got {dim}")
        self.dim = dim
        self.origin = tuple(origin) if origin else (0.0,) * dim
        self.extent = tuple(extent) if extent else (1.0,) * dim
        self.periodic = periodic
        self.max_depth = max_depth
        self.nchild = 3 ** dim
        self.root = SpacetreeNode(0, (0,) * dim, NodeKind.UNREFINED_FINE)
        self.real_cells = {}
        self.faces = {}
        self._next_face_id = 0
        self.version = 0
        self._primary_cache = None
        self._secondary_cache = None
        self._rebuild()

    # ------------------------------------------------------------------
    # geometry helpers

    def cell_edges(self, level):
        return tuple(e / 3 ** level for e in self.extent)

    def cell_ref(self, node):
        edges = self.cell_edges(node.level)
        origin = tuple(self.origin[t] + node.index[t] * edges[t] for t in range(self.dim))
        return CellRef(node, origin, edges)

    def _child_digits(self):
        out = []

        def rec(prefix):
            if len(prefix) == self.dim:
                out.append(prefix)
                return
            for j in (0, 1, 2):
                rec(prefix + (j,))

        rec(())
        return out

    @staticmethod
    def _digit_index(digits):
        i = 0
        for dg in digits:
            i = i * 3 + dg
        return i

    def _digits_at(self, index, level, target_level):
        """Digit tuple selecting the level ``level`` child on the path to ``index``."""
        shift = 3 ** (target_level - level)
        return tuple((index[t] // shift) % 3 for t in range(self.dim))

    # ------------------------------------------------------------------
    # region lookup

    def region(self, level, index):
        """('cell', node) if a real cell at level <= ``level`` covers index,
        else ('refined', node-at-level)."""
        node = self.root
        for lev in range(1, level + 1):
            if node.kind in REAL_KINDS:
                return ("cell", node)
            digits = self._digits_at(index, lev, level)
            node = node.children[self._digit_index(digits)]
        if node.kind in REAL_KINDS:
            return ("cell", node)
        return ("refined", node)

    def _neighbor_index(self, index, level, axis, side):
        """Index across a side, or None at a non-periodic domain boundary."""
        n = 3 ** level
        j = index[axis] + (1 if side == 1 else -1)
        if 0 <= j < n:
            return index[:axis] + (j,) + index[axis + 1:]
        if self.periodic:
            return index[:axis] + (j % n,) + index[axis + 1:]
        return None

    def side_face_key(self, node, axis, side):
        n = 3 ** node.level
        p = node.index[axis] + side
        if self.periodic and p == n:
            p = 0
        pos = node.index[:axis] + (p,) + node.index[axis + 1:]
        return (axis, node.level, pos)

    def _face_cells(self, key):
        """(lower_index, upper_index) of the two level-``level`` cells, None at boundary."""
        axis, level, pos = key
        n = 3 ** level
        upper = pos if pos[axis] < n else None
        lower_a = pos[axis] - 1
        if lower_a < 0:
            lower_a = n - 1 if self.periodic else None
        lower = pos[:axis] + (lower_a,) + pos[axis + 1:] if lower_a is not None else None
        if not self.periodic:
            if pos[axis] == 0:
                lower = None
            if pos[axis] == n:
                upper = None
        return lower, upper

    # ------------------------------------------------------------------
    # construction and mutation

    def _snapshot(self):
        return set(self.real_cells), set(f.key for f in self.faces.values())

    def _delta(self, before):
        cells0, faces0 = before
        cells1, faces1 = self._snapshot()
        return MeshDelta(cells1 - cells0, cells0 - cells1, faces1 - faces0, faces0 - faces1)

    def _refine_raw(self, node):
        if node.kind not in REAL_KINDS:
            raise InvalidTargetError(f"cannot refine {node!r}")
        if node.level + 1 > self.max_depth:
            raise CapacityError(f"refinement beyond max depth {self.max_depth}")
        node.children = [
            SpacetreeNode(node.level + 1,
                          tuple(3 * node.index[t] + dg[t] for t in range(self.dim)),
                          NodeKind.UNREFINED_FINE, node)
            for dg in self._child_digits()
        ]
        node.kind = NodeKind.INNER

    def refine_node(self, node):
        """Subdivide a real cell into 3^d real children."""
        before = self._snapshot()
        self._refine_raw(node)
        self._rebuild()
        return self._delta(before)

    def refine_many(self, nodes):
        """Refine a batch of real cells with a single derived-structure rebuild."""
        before = self._snapshot()
        for node in nodes:
            self._refine_raw(node)
        self._rebuild()
        return self._delta(before)

    def refine_cell(self, level, index):
        """Refine the real cell addressed by (level, index)."""
        node = self.real_cells.get((level, tuple(index)))
        if node is None:
            raise InvalidTargetError(f"no real cell at level={level} index={index}")
        return self.refine_node(node)

    def _coarsen_raw(self, parent):
        if parent.kind is not NodeKind.INNER or parent.children is None:
            raise InvalidTargetError(f"cannot coarsen {parent!r}")
        for ch in parent.children:
            if ch.kind is NodeKind.INNER:
                raise NotCoarsenableError(f"child {ch!r} is itself refined")
            if ch.kind not in REAL_KINDS:
                raise InvalidTargetError(f"child {ch!r} carries no solution")
        parent.children = None
        parent.kind = NodeKind.UNREFINED_FINE

    def coarsen_cluster(self, parent):
        """Merge a fully refined parent's 3^d real children back into one cell."""
        before = self._snapshot()
        self._coarsen_raw(parent)
        self._rebuild()
        return self._delta(before)

    def update_topology(self, refine_nodes=(), coarsen_parents=()):
        """Apply a batch of refinements and coarsenings with one rebuild."""
        before = self._snapshot()
        for node in refine_nodes:
            self._refine_raw(node)
        for parent in coarsen_parents:
            self._coarsen_raw(parent)
        self._rebuild()
        return self._delta(before)

    # ------------------------------------------------------------------
    # derived structure

    def _rebuild(self):
        # normalize real-tree kinds, collect cells in SFC (depth-first) order
        self.real_cells = {}
        self.sfc_cells = []

        def norm(node):
            if node.children and node.children[0].kind in (NodeKind.INNER,) + REAL_KINDS:
                node.kind = NodeKind.INNER
                for ch in node.children:
                    norm(ch)
            else:
                node.children = None
                node.kind = NodeKind.UNREFINED_FINE
                self.real_cells[node.key] = node
                self.sfc_cells.append(node)

        norm(self.root)
        self._build_faces()
        self._build_scaffolding()
        self._finalize_adjacency()
        self.version += 1
        self._primary_cache = None
        self._secondary_cache = None

    def _root_face_key(self, node, axis, side):
        nb = self._neighbor_index(node.index, node.level, axis, side)
        if nb is None:
            return self.side_face_key(node, axis, side)
        tag, other = self.region(node.level, nb)
        if tag == "cell" and other.level < node.level:
            return self.side_face_key(other, axis, 1 - side)
        return self.side_face_key(node, axis, side)

    def _build_faces(self):
        old = self.faces
        self.faces = {}
        roots = set()
        for node in self.sfc_cells:
            for axis in range(self.dim):
                for side in (0, 1):
                    roots.add(self._root_face_key(node, axis, side))

        def get_record(key):
            rec = old.get(key)
            if rec is None:
                rec = FaceRecord(self._next_face_id, *key)
                self._next_face_id += 1
            else:
                rec.parent = None
                rec.children = None
                rec.child_pos = None
                rec.sides = [None, None]
                rec.owners = [None, None]
            self.faces[key] = rec
            return rec

        def build(key):
            axis, level, pos = key
            rec = get_record(key)
            lower, upper = self._face_cells(key)
            hanging = False
            for s, idx in enumerate((lower, upper)):
                if idx is None:
                    rec.sides[s] = ("boundary", None)
                    continue
                tag, node = self.region(level, idx)
                if tag == "refined":
                    hanging = True
                    rec.sides[s] = ("refined", node)
                elif node.level == level:
                    rec.sides[s] = ("cell", node)
                    rec.owners[s] = node
                else:
                    rec.sides[s] = ("coarse", node)
                    rec.owners[s] = node
            if hanging:
                rec.children = []
                trans = [t for t in range(self.dim) if t != axis]
                n_next = 3 ** (level + 1)
                pa = 3 * pos[axis]
                if self.periodic and pa == n_next:
                    pa = 0

                def rec_children(prefix, remaining):
                    if not remaining:
                        cpos = list(3 * p for p in pos)
                        cpos[axis] = pa
                        for t, dg in zip(trans, prefix):
                            cpos[t] = 3 * pos[t] + dg
                        child = build((axis, level + 1, tuple(cpos)))
                        child.parent = rec
                        child.child_pos = prefix
                        rec.children.append(child)
                        return
                    for j in (0, 1, 2):
                        rec_children(prefix + (j,), remaining - 1)

                rec_children((), self.dim - 1)
            return rec

        for key in sorted(roots):
            if key not in self.faces:
                build(key)

    def _build_scaffolding(self):
        for node in self.sfc_cells:
            hanging = any(
                self.faces[self.side_face_key(node, a, s)].children
                for a in range(self.dim) for s in (0, 1)
                if self.side_face_key(node, a, s) in self.faces
            )
            if hanging:
                node.kind = NodeKind.REFINED_FINE
                self._grow_scaffold(node)

    def _scaffold_child_kind(self, level, index):
        """Virtual if a chain leaf face touches this subcell, supplemental otherwise;
        returns (kind, needs_children)."""
        needs = False
        leaf_touch = False
        for axis in range(self.dim):
            for side in (0, 1):
                n = 3 ** level
                p = index[axis] + side
                if self.periodic and p == n:
                    p = 0
                key = (axis, level, index[:axis] + (p,) + index[axis + 1:])
                rec = self.faces.get(key)
                if rec is None:
                    continue
                if rec.children:
                    needs = True
                else:
                    leaf_touch = True
        if needs:
            return NodeKind.SUPPLEMENTAL, True
        return (NodeKind.VIRTUAL if leaf_touch else NodeKind.SUPPLEMENTAL), False

    def _grow_scaffold(self, node):
        node.children = []
        for dg in self._child_digits():
            idx = tuple(3 * node.index[t] + dg[t] for t in range(self.dim))
            kind, needs = self._scaffold_child_kind(node.level + 1, idx)
            child = SpacetreeNode(node.level + 1, idx, kind, node)
            node.children.append(child)
            if needs:
                self._grow_scaffold(child)

    def _finalize_adjacency(self):
        for rec in self.faces.values():
            for s in (0, 1):
                tag_node = rec.sides[s]
                if tag_node is None:
                    continue
                tag, node = tag_node
                if tag == "coarse":
                    idx = self._face_cells(rec.key)[s]
                    walk = node
                    for lev in range(node.level + 1, rec.level + 1):
                        digits = self._digits_at(idx, lev, rec.level)
                        walk = walk.children[self._digit_index(digits)]
                    rec.sides[s] = ("virtual", walk)

    # ------------------------------------------------------------------
    # traversal orders

    def scaffold_virtuals(self, node):
        out = []

        def walk(nd):
            if nd.children:
                for ch in nd.children:
                    walk(ch)
            if nd.kind is NodeKind.VIRTUAL:
                out.append(nd)

        if node.kind is NodeKind.REFINED_FINE:
            walk_children = node.children or []
            for ch in walk_children:
                walk(ch)
        out.sort(key=lambda n: (n.level, n.index))
        return out

    def primary_order(self):
        """Post-order sweep: for every cell, face events (subtrees resolved
        leaves-first) precede virtual-cell events precede the cell event."""
        if self._primary_cache and self._primary_cache.version == self.version:
            return self._primary_cache
        events = []
        fired = set()

        def fire_subtree(rec):
            if rec.children:
                for ch in rec.children:
                    fire_subtree(ch)
            if rec.key not in fired:
                fired.add(rec.key)
                events.append(("face", rec))

        def visit(node):
            if node.kind is NodeKind.INNER:
                for ch in node.children:
                    visit(ch)
                return
            for axis in range(self.dim):
                for side in (0, 1):
                    fire_subtree(self.faces[self.side_face_key(node, axis, side)])
            for v in self.scaffold_virtuals(node):
                events.append(("virtual", v))
            events.append(("cell", node))

        visit(self.root)
        self._primary_cache = TraversalOrder(events, self.version)
        return self._primary_cache

    def secondary_order(self, decomp=None):
        """Pre-order skeleton sweep: skeleton cell events, then their virtual
        cells coarse-to-fine, with each rank-boundary face emitted once both
        adjacent owners have been passed."""
        decomp_ver = getattr(decomp, "version", None)
        if self._secondary_cache and self._secondary_cache[0] == (self.version, decomp_ver):
            return self._secondary_cache[1]
        pos = {node.key: i for i, node in enumerate(self.sfc_cells)}
        blocks = [[] for _ in self.sfc_cells]
        tails = [[] for _ in self.sfc_cells]
        for i, node in enumerate(self.sfc_cells):
            if classify_cell(self, node, decomp) is CellClass.SKELETON:
                blocks[i].append(("cell", node))
                for v in self.scaffold_virtuals(node):
                    blocks[i].append(("virtual", v))
        if decomp is not None:
            for f in sorted(self.faces.values(), key=lambda r: r.key):
                if not f.is_leaf:
                    continue
                lo, hi = f.owners
                if lo is None or hi is None or lo is hi:
                    continue
                if decomp.rank_of(lo.key) != decomp.rank_of(hi.key):
                    tails[max(pos[lo.key], pos[hi.key])].append((f.key, f))
        events = []
        for blk, tail in zip(blocks, tails):
            events.extend(blk)
            for _, f in sorted(tail):
                events.append(("face", f))
        order = TraversalOrder(events, self.version)
        self._secondary_cache = ((self.version, decomp_ver), order)
        return order

    def primary_traversal(self, visitor):
        """Invoke visitor callbacks (on_face/on_cell/on_virtual) in primary order."""
        _dispatch(self.primary_order(), visitor)

    def secondary_traversal(self, visitor, decomp=None):
        _dispatch(self.secondary_order(decomp), visitor)


def _dispatch(order, visitor):
    for kind, obj in order:
        cb = getattr(visitor, "on_" + kind, None)
        if cb is not None:
            cb(obj)


def classify_cell(mesh, node, decomp=None):
    """Skeleton iff the cell has a finer face-neighbor or touches a rank boundary."""
    for axis in range(mesh.dim):
        for side in (0, 1):
            rec = mesh.faces.get(mesh.side_face_key(node, axis, side))
            if rec is None:
                continue
            if rec.children:
                return CellClass.SKELETON
            if decomp is not None and _subtree_crosses_ranks(rec, decomp):
                return CellClass.SKELETON
    return CellClass.ENCLAVE


def _subtree_crosses_ranks(rec, decomp):
    stack = [rec]
    while stack:
        f = stack.pop()
        if f.children:
            stack.extend(f.children)
            continue
        lo, hi = f.owners
        if lo is not None and hi is not None and \
                decomp.rank_of(lo.key) != decomp.rank_of(hi.key):
            return True
    return False


def boundary_face_order(mesh, decomp, rank_pair):
    """Shared rank-boundary faces of a pair, in the secondary-sweep order.

    The list is identical no matter which of the two ranks derives it.
    """
    r1, r2 = rank_pair
    if not (0 <= r1 < decomp.nranks and 0 <= r2 < decomp.nranks):
        raise ConfigError(f"unknown rank pair {rank_pair}")
    out = []
    for kind, f in mesh.secondary_order(decomp):
        if kind != "face":
            continue
        ranks = {decomp.rank_of(f.owners[0].key), decomp.rank_of(f.owners[1].key)}
        if ranks == {r1, r2}:
            out.append(f)
    return out


def build_uniform(depth, dim=2, origin=None, extent=None, periodic=False, max_depth=10):
    """Uniform mesh with 3^(d*depth) cells of equal size."""
    if depth < 1:
        raise ConfigError(f"depth must be >= 1, got {depth}")
    if depth > max_depth:
        raise CapacityError(f"depth {depth} exceeds max depth {max_depth}")
    mesh = Mesh(dim=dim, origin=origin, extent=extent, periodic=periodic, max_depth=max_depth)
    for _ in range(depth):
        mesh.refine_many(list(mesh.sfc_cells))
    return mesh


def parse_mesh_file(text, dim=2):
    """Refinement instructions, one `refine <level> <ix> <iy>` per line."""
    out = []
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#")[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] != "refine" or len(parts) != 2 + dim:
            raise ConfigError(f"mesh file line {ln}: expected 'refine <level> <i...>', got {line!r}")
        level, *idx = (int(p) for p in parts[1:])
        out.append((level, tuple(idx)))
    return out


def apply_mesh_file(mesh, text):
    for level, idx in parse_mesh_file(text, mesh.dim):
        node = mesh.real_cells.get((level, idx))
        if node is None:
            raise ConfigError(f"mesh file refers to missing cell level={level} index={idx}")
        mesh.refine_node(node)
    return mesh


def adjacency_signature(mesh):
    """Canonical topology signature for isomorphism checks (ignores face ids)."""
    sig = []
    for rec in sorted(mesh.faces.values(), key=lambda r: r.key):
        sides = tuple(
            (tag, node.key if node is not None else None)
            for tag, node in rec.sides
        )
        sig.append((rec.key, sides, len(rec.children or ())))
    return tuple(sig)


def dump_event_log(rows, path):
    """Write traversal events as CSV `sweep,kind,entity_id,order_index`."""
    with open(path, "w") as fh:
        fh.write("sweep,kind,entity_id,order_index\n")
        for sweep, kind, entity, idx in rows:
            fh.write(f"{sweep},{kind},{entity},{idx}\n")


def entity_id(kind, obj):
    if kind == "face":
        return f"f{obj.id}"
    return f"c{obj.level}:" + ":".join(str(i) for i in obj.index)
