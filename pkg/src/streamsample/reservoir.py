"""Order-statistic B+ tree holding a local reservoir of keyed items.

Elements are ``KeyedItem`` triples ordered by ``(key, origin_pe, item_id)``;
the trailing pair makes the order total even when float keys collide.  Inner
nodes carry subtree sizes and subtree minima, which gives rank selection,
rank-of-probe queries, and rank/probe splits in O(log n) node visits.  Splits
consume the receiver and hand back two live trees; there is no single-item
delete because the sampler only ever discards by splitting.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right, insort
from typing import Iterable, Iterator, NamedTuple

__all__ = ["KeyedItem", "Reservoir"]


class KeyedItem(NamedTuple):
    key: float
    origin_pe: int
    item_id: int


class _Leaf:
    __slots__ = ("items", "next", "prev")

    def __init__(self, items):
        self.items = items
        self.next = None
        self.prev = None


class _Inner:
    __slots__ = ("children", "mins", "size")

    def __init__(self, children):
        self.children = children
        self.mins = [_subtree_min(c) for c in children]
        self.size = sum(_subtree_size(c) for c in children)


def _subtree_size(node) -> int:
    return node.size if isinstance(node, _Inner) else len(node.items)


def _subtree_min(node) -> KeyedItem:
    return node.mins[0] if isinstance(node, _Inner) else node.items[0]


def _fill(node) -> int:
    return len(node.children) if isinstance(node, _Inner) else len(node.items)


class Reservoir:
    """Sorted multiset of keyed items with rank operations.

    ``fanout`` bounds the number of children per inner node and items per
    leaf; every node except the root stays at least half full.  All probes
    accept either a full ``KeyedItem`` or a bare float key, a bare key
    comparing below every stored element with the same key value.
    """

    __slots__ = ("fanout", "node_visits", "_root", "_height")

    def __init__(self, fanout: int = 16):
        if fanout < 4:
            raise ValueError(f"fanout must be >= 4, got {fanout}")
        self.fanout = fanout
        self.node_visits = 0
        self._root = _Leaf([])
        self._height = 0

    @classmethod
    def from_sorted(cls, items: Iterable[KeyedItem], fanout: int = 16) -> "Reservoir":
        """Build bottom-up from items already in increasing order."""
        tree = cls(fanout)
        items = [it if isinstance(it, KeyedItem) else KeyedItem(*it) for it in items]
        n = len(items)
        if n == 0:
            return tree
        if __debug__:
            for a, b in zip(items, items[1:]):
                if not a < b:
                    raise ValueError("from_sorted requires strictly increasing items")
        nodes = []
        for lo, hi in _even_chunks(n, fanout):
            nodes.append(_Leaf(items[lo:hi]))
        for a, b in zip(nodes, nodes[1:]):
            a.next = b
            b.prev = a
        height = 0
        while len(nodes) > 1:
            nodes = [
                _Inner(nodes[lo:hi]) for lo, hi in _even_chunks(len(nodes), fanout)
            ]
            height += 1
        tree._root = nodes[0]
        tree._height = height
        return tree

    def __len__(self) -> int:
        return _subtree_size(self._live_root())

    @property
    def size(self) -> int:
        return len(self)

    def _live_root(self):
        if self._root is None:
            raise RuntimeError("reservoir was consumed by a split")
        return self._root

    def insert(self, item: KeyedItem) -> None:
        if not isinstance(item, KeyedItem):
            item = KeyedItem(*item)
        node = self._live_root()
        stack = []
        while isinstance(node, _Inner):
            self.node_visits += 1
            node.size += 1
            i = bisect_right(node.mins, item) - 1
            if i < 0:
                i = 0
                node.mins[0] = item
            stack.append((node, i))
            node = node.children[i]
        self.node_visits += 1
        insort(node.items, item)
        if len(node.items) > self.fanout:
            self._overflow(node, stack)

    def _overflow(self, node, stack) -> None:
        # Split an overfull node and insert the spill into its parent,
        # repeating up the recorded path; a root split grows the tree.
        d = self.fanout
        while _fill(node) > d:
            half = (_fill(node) + 1) // 2
            if isinstance(node, _Inner):
                right = _Inner(node.children[half:])
                del node.children[half:], node.mins[half:]
                node.size -= right.size
            else:
                right = _Leaf(node.items[half:])
                del node.items[half:]
                right.next = node.next
                if right.next is not None:
                    right.next.prev = right
                right.prev = node
                node.next = right
            if stack:
                parent, i = stack.pop()
                parent.children.insert(i + 1, right)
                parent.mins.insert(i + 1, _subtree_min(right))
                node = parent
            else:
                self._root = _Inner([node, right])
                self._height += 1
                return

    def select(self, rank: int) -> KeyedItem:
        """The element of the given rank, 1-based (rank 1 is the minimum)."""
        node = self._live_root()
        if not 1 <= rank <= _subtree_size(node):
            raise IndexError(f"rank {rank} out of range 1..{_subtree_size(node)}")
        while isinstance(node, _Inner):
            self.node_visits += 1
            for child in node.children:
                s = _subtree_size(child)
                if rank <= s:
                    node = child
                    break
                rank -= s
        self.node_visits += 1
        return node.items[rank - 1]

    def slice(self, lo: int, hi: int) -> list[KeyedItem]:
        """Elements of ranks lo+1 .. hi (0-based half-open window) in order.

        Costs one descent plus a walk along the leaf chain, so pulling a
        short run out of a large reservoir stays cheap.
        """
        n = _subtree_size(self._live_root())
        if not 0 <= lo <= hi <= n:
            raise IndexError(f"window [{lo}, {hi}) out of range for size {n}")
        want = hi - lo
        if want == 0:
            return []
        node = self._live_root()
        rank = lo + 1
        while isinstance(node, _Inner):
            self.node_visits += 1
            for child in node.children:
                s = _subtree_size(child)
                if rank <= s:
                    node = child
                    break
                rank -= s
        out: list[KeyedItem] = []
        off = rank - 1
        while node is not None and len(out) < want:
            self.node_visits += 1
            take = node.items[off : off + want - len(out)]
            out.extend(take)
            off = 0
            node = node.next
        return out

    def rank_of_key(self, probe) -> int:
        """Number of stored elements strictly below the probe."""
        probe = _as_probe(probe)
        node = self._live_root()
        count = 0
        while isinstance(node, _Inner):
            self.node_visits += 1
            c = bisect_left(node.mins, probe) - 1
            if c < 0:
                return count
            children = node.children
            for i in range(c):
                count += _subtree_size(children[i])
            node = children[c]
        self.node_visits += 1
        return count + bisect_left(node.items, probe)

    def min(self) -> KeyedItem:
        node = self._live_root()
        if _subtree_size(node) == 0:
            raise IndexError("empty reservoir has no minimum")
        while isinstance(node, _Inner):
            self.node_visits += 1
            node = node.children[0]
        self.node_visits += 1
        return node.items[0]

    def max(self) -> KeyedItem:
        node = self._live_root()
        if _subtree_size(node) == 0:
            raise IndexError("empty reservoir has no maximum")
        while isinstance(node, _Inner):
            self.node_visits += 1
            node = node.children[-1]
        self.node_visits += 1
        return node.items[-1]

    def __iter__(self) -> Iterator[KeyedItem]:
        node = self._live_root()
        while isinstance(node, _Inner):
            node = node.children[0]
        while node is not None:
            yield from node.items
            node = node.next

    def items(self) -> list[KeyedItem]:
        return list(self)

    def split_at_rank(self, rank: int) -> tuple["Reservoir", "Reservoir"]:
        """Split into (first ``rank`` elements, the rest), consuming self.

        Both results are live, balanced trees; the receiver must not be used
        afterwards.
        """
        root = self._live_root()
        n = _subtree_size(root)
        if not 0 <= rank <= n:
            raise IndexError(f"split rank {rank} out of range 0..{n}")
        d = self.fanout
        height = self._height
        self._root = None
        if rank == 0:
            return Reservoir(d), _adopt(root, height, d)
        if rank == n:
            return _adopt(root, height, d), Reservoir(d)

        left_frags: list[tuple[object, int]] = []
        right_frags: list[tuple[object, int]] = []
        node, h, rem = root, height, rank
        while isinstance(node, _Inner):
            self.node_visits += 1
            cut = 0
            for i, child in enumerate(node.children):
                s = _subtree_size(child)
                if rem < s:
                    cut = i
                    break
                rem -= s
                if rem == 0:
                    # Clean boundary: everything through child i goes left.
                    _sever(_rightmost_leaf(child), _leftmost_leaf(node.children[i + 1]))
                    _add_frag(left_frags, node.children[: i + 1], h)
                    _add_frag(right_frags, node.children[i + 1 :], h)
                    return (
                        self._assemble_left(left_frags, None),
                        self._assemble_right(right_frags, None),
                    )
            _add_frag(left_frags, node.children[:cut], h)
            _add_frag(right_frags, node.children[cut + 1 :], h)
            node = node.children[cut]
            h -= 1
        self.node_visits += 1
        right_leaf = _Leaf(node.items[rem:])
        del node.items[rem:]
        right_leaf.next = node.next
        if right_leaf.next is not None:
            right_leaf.next.prev = right_leaf
        node.next = None
        return (
            self._assemble_left(left_frags, node),
            self._assemble_right(right_frags, right_leaf),
        )

    def split_at_probe(self, probe) -> tuple["Reservoir", "Reservoir"]:
        """Split into (elements <= probe, elements > probe), consuming self."""
        rank = self.rank_of_key(_probe_successor(probe))
        return self.split_at_rank(rank)

    def _assemble_left(self, frags, leaf):
        if leaf is not None:
            frags = frags + [_collapse(leaf, 0)]
        tree = Reservoir(self.fanout)
        for frag in frags:
            if frag is not None:
                tree._join_right(frag)
        return tree

    def _assemble_right(self, frags, leaf):
        # Fragments were collected root-downwards; reversed, they come in
        # increasing key order with each one taller than the tree so far.
        tree = Reservoir(self.fanout)
        if leaf is not None and leaf.items:
            tree._root = leaf
        for frag in reversed(frags):
            if frag is not None:
                tree._join_right(frag)
        return tree

    def _join_right(self, frag) -> None:
        """Append a fragment tree whose elements all exceed ours."""
        froot, fh = frag
        if _subtree_size(self._root) == 0:
            self._root, self._height = froot, fh
            return
        if self._height >= fh:
            self._graft(froot, fh, on_right=True)
        else:
            old_root, old_h = self._root, self._height
            self._root, self._height = froot, fh
            self._graft(old_root, old_h, on_right=False)

    def _graft(self, broot, bh, on_right: bool) -> None:
        """Merge tree ``broot`` (height ``bh`` <= ours) into our spine.

        ``on_right=True`` attaches it as the new largest content along the
        right spine; ``on_right=False`` as the new smallest along the left.
        """
        d = self.fanout
        extra = _subtree_size(broot)
        if extra == 0:
            return
        spine = -1 if on_right else 0
        # Connect the leaf chains across the seam before any node surgery.
        if on_right:
            seam_l, seam_r = _rightmost_leaf(self._root), _leftmost_leaf(broot)
        else:
            seam_l, seam_r = _rightmost_leaf(broot), _leftmost_leaf(self._root)
        seam_l.next = seam_r
        seam_r.prev = seam_l

        node = self._root
        stack = []
        for _ in range(self._height - bh):
            self.node_visits += 1
            node.size += extra
            if not on_right:
                node.mins[0] = min(node.mins[0], _subtree_min(broot))
            stack.append((node, spine % len(node.children)))
            node = node.children[spine]
        self.node_visits += 1

        # node and broot now have equal height; absorb or make them siblings.
        if _fill(node) + _fill(broot) <= d:
            if isinstance(node, _Inner):
                if on_right:
                    node.children.extend(broot.children)
                    node.mins.extend(broot.mins)
                else:
                    node.children[:0] = broot.children
                    node.mins[:0] = broot.mins
                node.size += extra
            else:
                if on_right:
                    node.items.extend(broot.items)
                    _unlink(broot)
                else:
                    node.items[:0] = broot.items
                    _unlink(broot)
            if stack:
                parent, i = stack[-1]
                parent.mins[i] = _subtree_min(node)
        else:
            left, right = (node, broot) if on_right else (broot, node)
            # Both nodes stay, so rebalance them: either may be an underfull
            # fragment root, which would break the half-full invariant once
            # it becomes an interior node.
            if isinstance(left, _Inner):
                allc = left.children + right.children
                allm = left.mins + right.mins
                half = (len(allc) + 1) // 2
                left.children, right.children = allc[:half], allc[half:]
                left.mins, right.mins = allm[:half], allm[half:]
                left.size = sum(_subtree_size(c) for c in left.children)
                right.size = sum(_subtree_size(c) for c in right.children)
            else:
                alli = left.items + right.items
                half = (len(alli) + 1) // 2
                left.items, right.items = alli[:half], alli[half:]
            if stack:
                parent, i = stack.pop()
                if not on_right:
                    parent.children[i] = left
                parent.children.insert(i + 1, right)
                parent.mins[i] = _subtree_min(left)
                parent.mins.insert(i + 1, _subtree_min(right))
                if _fill(parent) > d:
                    self._overflow(parent, stack)
            else:
                self._root = _Inner([left, right])
                self._height += 1

    def validate(self) -> None:
        """Walk the whole structure and assert every invariant; debug aid."""
        root = self._live_root()
        d = self.fanout
        half = (d + 1) // 2

        def walk(node, depth, is_root):
            if isinstance(node, _Inner):
                assert 2 <= len(node.children) if is_root else half <= len(node.children), (
                    f"inner fill {len(node.children)} at depth {depth}"
                )
                assert len(node.children) <= d, "inner node over fanout"
                assert len(node.mins) == len(node.children), "mins out of step"
                size = 0
                prev_max = None
                for child, cmin in zip(node.children, node.mins):
                    assert cmin == _subtree_min(child), "stale subtree min"
                    if prev_max is not None:
                        assert prev_max < cmin, "children out of order"
                    cs, cmax, cdepth = walk(child, depth + 1, False)
                    size += cs
                    prev_max = cmax
                assert size == node.size, f"stale size {node.size} != {size}"
                return size, prev_max, cdepth
            assert is_root or half <= len(node.items), f"leaf fill {len(node.items)}"
            assert len(node.items) <= d, "leaf over fanout"
            for a, b in zip(node.items, node.items[1:]):
                assert a < b, "leaf items out of order"
            last = node.items[-1] if node.items else None
            return len(node.items), last, depth

        total, _, leaf_depth = walk(root, 0, True)
        assert leaf_depth == self._height, "height out of step with leaf depth"

        # The leaf chain must reproduce the in-order traversal exactly.
        chained = []
        node = root
        while isinstance(node, _Inner):
            node = node.children[0]
        assert node.prev is None, "leftmost leaf has a predecessor"
        prev = None
        while node is not None:
            assert node.prev is prev, "broken prev link"
            chained.extend(node.items)
            prev, node = node, node.next
        assert len(chained) == total, "leaf chain misses items"
        for a, b in zip(chained, chained[1:]):
            assert a < b, "leaf chain out of order"


def _even_chunks(n: int, d: int):
    """Bounds splitting ``n`` slots into chunks of at most ``d``, sized as
    evenly as possible so every chunk stays at least half full."""
    parts = -(-n // d)
    base, extra = divmod(n, parts)
    bounds = []
    lo = 0
    for i in range(parts):
        hi = lo + base + (1 if i < extra else 0)
        bounds.append((lo, hi))
        lo = hi
    return bounds


def _as_probe(probe):
    if isinstance(probe, tuple):
        return probe
    return (probe,)


def _probe_successor(probe):
    # Appending a field makes a full probe compare just above the equal
    # element, turning a strictly-below count into an at-or-below count.  A
    # bare key already sits below every same-key element, so for it the two
    # counts coincide.
    if isinstance(probe, tuple):
        return tuple(probe) + (0,)
    return (probe,)


def _rightmost_leaf(node):
    while isinstance(node, _Inner):
        node = node.children[-1]
    return node


def _leftmost_leaf(node):
    while isinstance(node, _Inner):
        node = node.children[0]
    return node


def _sever(left_leaf, right_leaf) -> None:
    left_leaf.next = None
    right_leaf.prev = None


def _unlink(leaf) -> None:
    # The leaf's items were absorbed elsewhere; splice it out of the chain.
    if leaf.prev is not None:
        leaf.prev.next = leaf.next
    if leaf.next is not None:
        leaf.next.prev = leaf.prev


def _add_frag(frags, children, h) -> None:
    if not children:
        return
    if len(children) == 1:
        frags.append(_collapse(children[0], h - 1))
    else:
        frags.append((_Inner(list(children)), h))


def _collapse(node, h):
    while isinstance(node, _Inner) and len(node.children) == 1:
        node = node.children[0]
        h -= 1
    if isinstance(node, _Leaf) and not node.items:
        return None
    return (node, h)


def _adopt(root, height, fanout) -> Reservoir:
    tree = Reservoir(fanout)
    tree._root = root
    tree._height = height
    return tree
