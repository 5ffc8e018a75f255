"""Hybrid prefix cache pool.

One block pool per cluster backs two KVCache groups that share a block size:

* full-attention KVCache, stored block-wise and matchable on any fully
  populated block-aligned prefix;
* linear-attention (or SWA) state, one entry per request that is reusable
  only when the cached length matches exactly.

Blocks are either *prefix* blocks (indexed, shareable, LRU-evictable once
unpinned) or *transfer* blocks (hold freshly produced KVCache awaiting
shipment to another cluster, never indexed, freed when the transfer ends).

:class:`KVCacheManager` is the global view across clusters and answers
per-cluster prefix-match queries for the router.
"""

from __future__ import annotations

import json
import threading
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

from .exceptions import PoolExhaustedError, UnknownRequestError

FULL_ATTENTION = "full_attention_blockwise"
LINEAR_STATE = "linear_state_requestwise"
PREFIX = "prefix"
TRANSFER = "transfer"

ROOT_HASH = 0


@dataclass(frozen=True)
class CacheGroupKind:
    kind: str
    block_size: int
    bytes_per_block: float = 0.0  # bytes per block, or per state for linear groups


@dataclass
class CacheBlock:
    id: int
    group: str
    category: str
    fill: int
    refcount: int = 0
    last_touch: int = 0
    depth: int = 0
    block_hash: int | None = None
    parent_hash: int | None = None
    tokens: tuple[int, ...] | None = None
    state_key: tuple | None = None
    nbytes: float = 0.0


@dataclass(frozen=True)
class MatchInfo:
    cluster: str
    l_matched: int
    linear_state_hit: bool
    hybrid: bool = True

    @property
    def usable_len(self) -> int:
        """Prefix length a request can actually skip.

        Hybrid models cannot resume without the recurrent state at exactly
        the matched length, so a miss there makes the whole prefix unusable.
        """
        if not self.hybrid:
            return self.l_matched
        return self.l_matched if self.linear_state_hit else 0


def chain_hash(parent: int, tokens: Sequence[int]) -> int:
    return hash((parent, tuple(tokens)))


def _state_key(length: int, full_hash: int, tail: Sequence[int]) -> tuple:
    return (length, full_hash, tuple(tail))


class CachePool:
    """Block pool of one cluster.

    Mutations are serialised by a lock; :meth:`match` takes the same lock so a
    reader never observes a half-applied insert or eviction.
    """

    def __init__(
        self,
        capacity_blocks: int,
        block_size: int = 256,
        cluster: str = "default",
        hybrid: bool = True,
        state_blocks: int = 1,
        groups: Sequence[CacheGroupKind] | None = None,
    ):
        if capacity_blocks < 1:
            raise ValueError("capacity_blocks must be >= 1")
        if block_size < 1:
            raise ValueError("block_size must be >= 1")
        if groups is None:
            groups = [CacheGroupKind(FULL_ATTENTION, block_size)]
            if hybrid:
                groups.append(CacheGroupKind(LINEAR_STATE, block_size))
        if any(g.block_size != block_size for g in groups):
            raise ValueError("all cache groups in a pool must share one block size")
        self.capacity = int(capacity_blocks)
        self.block_size = int(block_size)
        self.cluster = cluster
        self.groups = {g.kind: g for g in groups}
        self.hybrid = LINEAR_STATE in self.groups
        self.state_blocks = int(state_blocks)
        self._lock = threading.RLock()
        self._clock = 0
        self._free: list[int] = list(range(self.capacity - 1, -1, -1))  # pop() yields lowest id
        self._blocks: dict[int, CacheBlock] = {}
        self._index: dict[int, int] = {}
        self._partials: dict[int, dict[tuple, int]] = defaultdict(dict)
        self._linear: dict[tuple, list[int]] = {}
        self._dependents: dict[int, set[tuple]] = defaultdict(set)
        self._transfers: dict[Any, list[int]] = {}

    # -- accounting -----------------------------------------------------
    @property
    def n_free(self) -> int:
        return len(self._free)

    @property
    def n_allocated(self) -> int:
        return len(self._blocks)

    def blocks(self) -> dict[int, CacheBlock]:
        return dict(self._blocks)

    def indexed_block_ids(self) -> set[int]:
        with self._lock:
            ids = set(self._index.values())
            for per_parent in self._partials.values():
                ids.update(per_parent.values())
            for state_ids in self._linear.values():
                ids.update(state_ids)
            return ids

    def transfer_block_ids(self) -> set[int]:
        with self._lock:
            return {b for ids in self._transfers.values() for b in ids}

    def _tick(self) -> int:
        self._clock += 1
        return self._clock

    # -- allocation -----------------------------------------------------
    def _evictable(self) -> list[CacheBlock]:
        return [b for b in self._blocks.values() if b.category == PREFIX and b.refcount == 0 and not self._state_pinned(b.id)]

    def _state_pinned(self, bid: int) -> bool:
        # a block under a pinned linear state cannot go without taking the state along
        for key in self._dependents.get(bid, ()):
            if any(self._blocks[s].refcount > 0 for s in self._linear.get(key, ())):
                return True
        return False

    def _take(self, n: int) -> list[int]:
        if n > len(self._free):
            self.evict(n - len(self._free))
        return [self._free.pop() for _ in range(n)]

    def _release_block(self, bid: int) -> None:
        del self._blocks[bid]
        self._free.append(bid)

    def evict(self, n_blocks_needed: int) -> list[int]:
        """Free at least ``n_blocks_needed`` blocks, least recently touched first.

        Evicting a full-attention block also drops every linear state whose
        exact length extends past it.  All-or-nothing: raises
        :class:`PoolExhaustedError` without evicting if not enough blocks are
        unpinned.
        """
        with self._lock:
            if n_blocks_needed <= 0:
                return []
            cands = self._evictable()
            if len(cands) < n_blocks_needed:
                raise PoolExhaustedError(
                    f"need {n_blocks_needed} blocks, only {len(cands)} evictable in {self.cluster}"
                )
            cands.sort(key=lambda b: (b.last_touch, -b.depth, b.id))
            evicted: list[int] = []
            for b in cands:
                if len(evicted) >= n_blocks_needed:
                    break
                if b.id not in self._blocks:
                    continue  # already dropped as a dependent state
                evicted.extend(self._drop(b))
            return evicted

    def _drop(self, b: CacheBlock) -> list[int]:
        dropped = [b.id]
        if b.group == LINEAR_STATE:
            ids = self._linear.pop(b.state_key, [])
            for other in ids:
                if other != b.id and other in self._blocks:
                    dropped.append(other)
                    self._release_block(other)
            self._forget_state(b.state_key)
            self._release_block(b.id)
            return dropped
        if b.fill == self.block_size and b.block_hash is not None and self._index.get(b.block_hash) == b.id:
            del self._index[b.block_hash]
        elif b.tokens is not None:
            self._partials[b.parent_hash].pop(b.tokens, None)
        for key in list(self._dependents.pop(b.id, ())):
            for sid in self._linear.pop(key, []):
                if sid in self._blocks:
                    dropped.append(sid)
                    self._release_block(sid)
            self._forget_state(key)
        self._release_block(b.id)
        return dropped

    def _forget_state(self, key: tuple) -> None:
        for deps in self._dependents.values():
            deps.discard(key)

    # -- prefix path ----------------------------------------------------
    def _walk(self, token_ids: Sequence[int]) -> tuple[list[int], int]:
        """Longest chain of indexed full blocks from position 0."""
        bs = self.block_size
        parent = ROOT_HASH
        chain: list[int] = []
        for k in range(len(token_ids) // bs):
            span = tuple(token_ids[k * bs : (k + 1) * bs])
            h = chain_hash(parent, span)
            bid = self._index.get(h)
            if bid is None:
                break
            blk = self._blocks[bid]
            if blk.tokens != span or blk.parent_hash != parent:
                break  # hash collision
            chain.append(bid)
            parent = h
        return chain, parent

    def insert_prefix(self, token_ids: Sequence[int], payload_sizes: dict[str, float] | None = None) -> list[int]:
        """Store the KVCache of ``token_ids``; return the block ids covering it.

        Whole blocks enter the prefix index.  A trailing partial block is
        stored but only becomes matchable once a later insert fills it.  For
        hybrid pools a linear state is recorded at the exact total length.
        """
        token_ids = list(token_ids)
        payload_sizes = payload_sizes or {}
        bs = self.block_size
        with self._lock:
            now = self._tick()
            n_full = len(token_ids) // bs
            tail = tuple(token_ids[n_full * bs :])
            chain, parent = self._walk(token_ids)
            pinned = list(chain)
            for bid in pinned:
                self._blocks[bid].refcount += 1
            try:
                # plan the blocks past the matched chain: reuse a stranded indexed
                # block, promote a partial tail, or allocate
                plan = []
                h = parent
                need = 0
                for k in range(len(chain), n_full):
                    span = tuple(token_ids[k * bs : (k + 1) * bs])
                    hsh = chain_hash(h, span)
                    bid = self._index.get(hsh)
                    if bid is not None and (self._blocks[bid].tokens != span or self._blocks[bid].parent_hash != h):
                        bid = None
                    how = "indexed"
                    if bid is None:
                        bid = self._find_partial(h, span)
                        how = "promote"
                    if bid is None:
                        how = "new"
                        need += 1
                    else:
                        self._blocks[bid].refcount += 1
                        pinned.append(bid)
                    plan.append((k, h, span, hsh, how, bid))
                    h = hsh
                full_hash = h
                tail_key_exists = bool(tail) and tail in self._partials.get(full_hash, {})
                if tail and not tail_key_exists:
                    need += 1
                state_key = _state_key(len(token_ids), full_hash, tail) if self.hybrid and token_ids else None
                if state_key is not None and state_key not in self._linear:
                    need += self.state_blocks
                # keep the reusable tail and state alive through any eviction below
                keep = list(self._linear.get(state_key, [])) if state_key is not None else []
                if tail_key_exists:
                    keep.append(self._partials[full_hash][tail])
                for bid in keep:
                    self._blocks[bid].refcount += 1
                    pinned.append(bid)
                fresh = self._take(need)
                ids = list(chain)
                for k, ph, span, hsh, how, bid in plan:
                    if how == "indexed":
                        ids.append(bid)
                        continue
                    if how == "promote":
                        blk = self._blocks[bid]
                        self._partials[ph].pop(blk.tokens, None)
                        blk.fill = bs
                    else:
                        blk = CacheBlock(fresh.pop(0), FULL_ATTENTION, PREFIX, bs)
                        self._blocks[blk.id] = blk
                    blk.tokens = span
                    blk.block_hash, blk.parent_hash, blk.depth = hsh, ph, k + 1
                    blk.nbytes = payload_sizes.get(FULL_ATTENTION, self.groups[FULL_ATTENTION].bytes_per_block)
                    self._index[hsh] = blk.id
                    ids.append(blk.id)
                if tail:
                    if tail_key_exists:
                        tid = self._partials[full_hash][tail]
                    else:
                        blk = CacheBlock(fresh.pop(0), FULL_ATTENTION, PREFIX, len(tail))
                        blk.parent_hash, blk.tokens, blk.depth = full_hash, tail, n_full + 1
                        blk.nbytes = payload_sizes.get(FULL_ATTENTION, self.groups[FULL_ATTENTION].bytes_per_block)
                        self._blocks[blk.id] = blk
                        self._partials[full_hash][tail] = blk.id
                        tid = blk.id
                    ids.append(tid)
                if state_key is not None:
                    if state_key not in self._linear:
                        sids = []
                        for _ in range(self.state_blocks):
                            sb = CacheBlock(fresh.pop(0), LINEAR_STATE, PREFIX, bs, depth=n_full + 1)
                            sb.state_key = state_key
                            sb.nbytes = payload_sizes.get(LINEAR_STATE, self.groups[LINEAR_STATE].bytes_per_block)
                            self._blocks[sb.id] = sb
                            sids.append(sb.id)
                        self._linear[state_key] = sids
                        for dep in ids:
                            self._dependents[dep].add(state_key)
                    for sid in self._linear[state_key]:
                        self._blocks[sid].last_touch = now
                for bid in ids:
                    self._blocks[bid].last_touch = now
                return ids
            finally:
                for bid in pinned:
                    if bid in self._blocks:
                        self._blocks[bid].refcount -= 1

    def _find_partial(self, parent_hash: int, span: tuple) -> int | None:
        for tokens, pid in self._partials.get(parent_hash, {}).items():
            if span[: len(tokens)] == tokens:
                return pid
        return None

    def match(self, token_ids: Sequence[int]) -> MatchInfo:
        """Longest block-aligned cached prefix, and whether a linear state sits at exactly that length."""
        with self._lock:
            chain, parent = self._walk(token_ids)
            l_matched = len(chain) * self.block_size
            hit = False
            if self.hybrid and l_matched > 0:
                hit = _state_key(l_matched, parent, ()) in self._linear
            return MatchInfo(self.cluster, l_matched, hit, self.hybrid)

    def matched_block_ids(self, token_ids: Sequence[int]) -> list[int]:
        with self._lock:
            chain, parent = self._walk(token_ids)
            ids = list(chain)
            key = _state_key(len(chain) * self.block_size, parent, ())
            if self.hybrid and chain and key in self._linear:
                ids.extend(self._linear[key])
            return ids

    def pin(self, block_ids: Iterable[int]) -> None:
        with self._lock:
            now = self._tick()
            for bid in block_ids:
                self._blocks[bid].refcount += 1
                self._blocks[bid].last_touch = now

    def unpin(self, block_ids: Iterable[int]) -> None:
        with self._lock:
            for bid in block_ids:
                blk = self._blocks[bid]
                if blk.refcount <= 0:
                    raise ValueError(f"block {bid} is not pinned")
                blk.refcount -= 1

    # -- transfer path --------------------------------------------------
    def allocate_transfer(self, request_id, n_blocks: int) -> list[int]:
        """Reserve blocks for KVCache awaiting cross-cluster shipment."""
        with self._lock:
            now = self._tick()
            ids = self._take(int(n_blocks))
            for bid in ids:
                blk = CacheBlock(bid, FULL_ATTENTION, TRANSFER, self.block_size, refcount=1, last_touch=now)
                self._blocks[bid] = blk
            self._transfers.setdefault(request_id, []).extend(ids)
            return ids

    def complete_transfer(self, request_id) -> int:
        """Discard the transfer blocks of ``request_id``; returns how many were freed."""
        with self._lock:
            try:
                ids = self._transfers.pop(request_id)
            except KeyError:
                raise UnknownRequestError(request_id) from None
            for bid in ids:
                self._release_block(bid)
            return len(ids)

    # -- persistence ----------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        with self._lock:
            blocks = []
            for b in sorted(self._blocks.values(), key=lambda b: b.id):
                d = asdict(b)
                d["tokens"] = list(b.tokens) if b.tokens is not None else None
                d["state_key"] = _key_to_json(b.state_key)
                blocks.append(d)
            return {
                "cluster": self.cluster,
                "capacity": self.capacity,
                "block_size": self.block_size,
                "state_blocks": self.state_blocks,
                "groups": [asdict(g) for g in self.groups.values()],
                "clock": self._clock,
                "free": list(self._free),
                "blocks": blocks,
                "transfers": [[rid, ids] for rid, ids in self._transfers.items()],
            }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CachePool":
        groups = [CacheGroupKind(**g) for g in d["groups"]]
        pool = cls(d["capacity"], d["block_size"], d["cluster"], state_blocks=d["state_blocks"], groups=groups)
        pool._clock = d["clock"]
        pool._free = list(d["free"])
        for raw in d["blocks"]:
            raw = dict(raw)
            raw["tokens"] = tuple(raw["tokens"]) if raw["tokens"] is not None else None
            raw["state_key"] = _key_from_json(raw["state_key"])
            b = CacheBlock(**raw)
            pool._blocks[b.id] = b
        # rebuild indexes from the block table
        for b in sorted(pool._blocks.values(), key=lambda b: b.id):
            if b.category != PREFIX:
                continue
            if b.group == LINEAR_STATE:
                pool._linear.setdefault(b.state_key, []).append(b.id)
            elif b.fill == pool.block_size and b.block_hash is not None:
                pool._index[b.block_hash] = b.id
            else:
                pool._partials[b.parent_hash][b.tokens] = b.id
        for key in pool._linear:
            for bid in pool._chain_for_state(key):
                pool._dependents[bid].add(key)
        for rid, ids in d["transfers"]:
            pool._transfers[rid] = list(ids)
        return pool

    def _chain_for_state(self, key: tuple) -> list[int]:
        length, full_hash, tail = key
        ids = []
        h = full_hash
        while h != ROOT_HASH and h in self._index:
            blk = self._blocks[self._index[h]]
            ids.append(blk.id)
            h = blk.parent_hash
        if tail and tail in self._partials.get(full_hash, {}):
            ids.append(self._partials[full_hash][tail])
        return ids

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "CachePool":
        return cls.from_dict(json.loads(text))


def _key_to_json(key):
    if key is None:
        return None
    length, h, tail = key
    return [length, h, list(tail)]


def _key_from_json(raw):
    if raw is None:
        return None
    length, h, tail = raw
    return (length, h, tuple(tail))


@dataclass
class KVCacheManager:
    """Global metadata view over the per-cluster pools."""

    pools: dict[str, CachePool] = field(default_factory=dict)

    def add_cluster(self, pool: CachePool) -> None:
        self.pools[pool.cluster] = pool

    def insert_prefix(self, cluster: str, token_ids: Sequence[int], payload_sizes: dict | None = None) -> list[int]:
        return self.pools[cluster].insert_prefix(token_ids, payload_sizes)

    def match(self, token_ids: Sequence[int]) -> list[MatchInfo]:
        return [self.pools[c].match(token_ids) for c in sorted(self.pools)]

    def match_by_cluster(self, token_ids: Sequence[int]) -> dict[str, MatchInfo]:
        return {m.cluster: m for m in self.match(token_ids)}

    def allocate_transfer(self, cluster: str, request_id, n_blocks: int) -> list[int]:
        return self.pools[cluster].allocate_transfer(request_id, n_blocks)

    def complete_transfer(self, cluster: str, request_id) -> int:
        return self.pools[cluster].complete_transfer(request_id)

    def dumps(self) -> str:
        return json.dumps({c: p.to_dict() for c, p in sorted(self.pools.items())}, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "KVCacheManager":
        raw = json.loads(text)
        return cls({c: CachePool.from_dict(d) for c, d in raw.items()})
