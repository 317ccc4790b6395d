import operator

import pytest
from hypothesis import given, settings, strategies as st

from nfork.ds import (RECIPES, Cell, ConflictCause, DoubleFree, Exhausted, IndexOutOfRange, NotAllocated,
                      TAllocator, TDistributedObject, TMap, TVector, default_hash, key_bytes)
from nfork.profiler import Profiler, build_report
from nfork.stm import RetryPolicy, Store


def atomically(store, fn, worker=0, now=0):
    out = []
    store.execute_with_retry(worker, lambda tx: out.append(fn()), base_ns=lambda: now, clock=lambda: now)
    return out[-1]


def race(store, fa, fb, wa=0, wb=1, now=0):
    """Run two bodies on one snapshot; A commits first. Returns the Profiler that saw B's aborts."""
    prof = Profiler(store.structures)
    fixed = dict(base_ns=lambda: now, clock=lambda: now)
    ga = store.attempts(wa, lambda tx: fa(), RetryPolicy(0, 0, 0), **fixed)
    gb = store.attempts(wb, lambda tx: fb(), RetryPolicy(0, 0, 0), on_abort=prof.on_abort, **fixed)
    next(ga)
    next(gb)
    for g in (ga, gb):
        try:
            while True:
                next(g)
        except StopIteration:
            pass
    return prof


def causes(prof):
    return [r.id for r in build_report(prof, 0).causes]


class TestVector:
    def test_read_write(self):
        s = Store()
        v = TVector(s, "v", 4, initial=7)
        atomically(s, lambda: v.write(2, v.read(2) + 1))
        assert v.snapshot() == [7, 7, 8, 7]

    def test_bounds(self):
        s = Store()
        v = TVector(s, "v", 2)
        with pytest.raises(IndexOutOfRange):
            atomically(s, lambda: v.read(2))

    def test_distinct_elements_do_not_conflict(self):
        s = Store()
        v = TVector(s, "v", 2)
        prof = race(s, lambda: v.write(0, 1), lambda: v.write(1, v.read(1) + 1))
        assert prof.total_aborts == 0

    def test_same_element_cause(self):
        s = Store()
        v = TVector(s, "v", 2)
        prof = race(s, lambda: v.write(0, 1), lambda: v.write(0, v.read(0) + 1))
        assert causes(prof) == ["VEC_SAME_ELEMENT"]

    def test_duplicate_name_rejected(self):
        s = Store()
        TVector(s, "v", 1)
        with pytest.raises(ValueError):
            TMap(s, "v")


class TestMap:
    def test_crud(self):
        s = Store()
        m = TMap(s, "m", 8)
        atomically(s, lambda: (m.set("a", 1), m.set(b"b", 2), m.set(3, 3)))
        assert atomically(s, lambda: (m.get("a"), m.get("zz", "none"), m.contains(3))) == (1, "none", True)
        assert atomically(s, lambda: m.remove("a")) is True
        assert atomically(s, lambda: m.remove("a")) is False
        assert m.snapshot() == {b"b": 2, 3: 3}

    def test_overwrite_keeps_single_entry(self):
        s = Store()
        m = TMap(s, "m", 1)
        atomically(s, lambda: (m.set("k", 1), m.set("k", 2)))
        assert atomically(s, m.items) == [("k", 2)]

    def test_power_of_two_buckets(self):
        with pytest.raises(ValueError):
            TMap(Store(), "m", 12)

    def test_key_bytes_are_unambiguous(self):
        assert key_bytes(("ab", "c")) != key_bytes(("a", "bc"))
        assert key_bytes(1) != key_bytes(-1)
        with pytest.raises(TypeError):
            key_bytes(1.5)

    def test_hash_spreads_sequential_keys(self):
        m = TMap(Store(), "m", 64)
        used = {m.bucket_of(i) for i in range(256)}
        assert len(used) >= 56

    def test_same_key_vs_same_bucket(self):
        s = Store()
        m = TMap(s, "m", 1)
        assert causes(race(s, lambda: m.set("k", 1), lambda: m.set("k", 2))) == ["MAP_SAME_KEY"]
        assert causes(race(s, lambda: m.set("k", 1), lambda: m.set("j", 2))) == ["MAP_SAME_BUCKET"]

    def test_get_vs_set_same_key(self):
        s = Store()
        m = TMap(s, "m", 4)
        prof = race(s, lambda: m.set("k", 1), lambda: m.set("k", (m.get("k") or 0) + 1))
        assert causes(prof) == ["MAP_SAME_KEY"]

    def test_bucket_hint_mentions_size(self):
        s = Store()
        m = TMap(s, "m", 1)
        row = build_report(race(s, lambda: m.set("a", 1), lambda: m.set("b", 2)), 0).causes[0]
        assert any("bucket count 1" in h for h in row.hints)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from(["set", "remove"]), st.integers(0, 30), st.integers()),
                    max_size=60), st.sampled_from([1, 4, 64]))
    def test_dict_model(self, ops, buckets):
        s = Store()
        m = TMap(s, "m", buckets)
        model = {}
        for op, k, v in ops:
            if op == "set":
                atomically(s, lambda: m.set(k, v))
                model[k] = v
            else:
                assert atomically(s, lambda: m.remove(k)) == (k in model)
                model.pop(k, None)
        assert m.snapshot() == model

    @given(st.binary(max_size=40))
    def test_hash_is_64_bit_and_deterministic(self, data):
        h = default_hash(data)
        assert 0 <= h < 2**64 and h == default_hash(bytes(data))


class TestAllocator:
    def test_allocate_free_cycle(self):
        s = Store()
        a = TAllocator(s, "a", range(4), n_slots=2, ttl_ns=100)
        assert a.free_counts() == [2, 2]
        r = atomically(s, a.allocate, worker=1, now=10)
        assert r in (2, 3) and a.allocated() == {r: (1, 110)}
        atomically(s, lambda: a.free(r), worker=0)
        assert a.free_counts() == [3, 1] and a.allocated() == {}

    def test_errors(self):
        s = Store()
        a = TAllocator(s, "a", [1], n_slots=1, ttl_ns=5)
        r = atomically(s, a.allocate)
        with pytest.raises(Exhausted):
            atomically(s, a.allocate)
        atomically(s, lambda: a.free(r))
        with pytest.raises(DoubleFree):
            atomically(s, lambda: a.free(r))
        with pytest.raises(NotAllocated):
            atomically(s, lambda: a.refresh(r))
        with pytest.raises(DoubleFree):
            atomically(s, lambda: a.free(99))

    def test_steal_half_of_largest_pool(self):
        s = Store()
        a = TAllocator(s, "a", range(12), n_slots=3, ttl_ns=5)
        for _ in range(4):
            atomically(s, a.allocate, worker=0)
        assert a.free_counts() == [0, 4, 4]
        atomically(s, a.allocate, worker=0)
        assert a.free_counts() == [1, 2, 4]  # took two from slot 1 (the lowest-index largest)

    def test_steal_cause(self):
        s = Store()
        a = TAllocator(s, "a", range(4), n_slots=2, ttl_ns=5)
        atomically(s, a.allocate, worker=0)
        atomically(s, a.allocate, worker=0)
        # worker 0 is dry and steals from slot 1 while worker 1 allocates locally
        prof = race(s, lambda: a.allocate(), lambda: a.allocate(), wa=1, wb=0)
        assert causes(prof) == ["ALLOC_POOL_EXHAUSTED_STEAL"]

    def test_refresh_orders_list_and_cause(self):
        s = Store()
        a = TAllocator(s, "a", range(4), n_slots=1, ttl_ns=100)
        r1 = atomically(s, a.allocate, now=0)
        r2 = atomically(s, a.allocate, now=10)
        atomically(s, lambda: a.refresh(r1), now=50)
        assert s.committed(("a", "list", 0)) == ((150, r1), (110, r2))
        prof = race(s, lambda: a.refresh(r1), lambda: a.refresh(r2), now=60)
        assert causes(prof) == ["ALLOC_SAME_ALLOCATED_LIST"]

    def test_expire_step(self):
        s = Store()
        a = TAllocator(s, "a", range(3), n_slots=1, ttl_ns=10)
        for t in (0, 5, 20):
            atomically(s, a.allocate, now=t)
        assert a.next_deadline(0) == 10
        expired = atomically(s, lambda: a.expire_step(15))
        assert len(expired) == 2 and a.free_counts() == [2]
        assert atomically(s, lambda: a.expire_step(15)) == []

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 2), st.booleans()), max_size=50))
    def test_conservation(self, ops):
        s = Store()
        a = TAllocator(s, "a", range(9), n_slots=3, ttl_ns=1000)
        held = []
        for w, alloc in ops:
            if alloc or not held:
                try:
                    held.append(atomically(s, a.allocate, worker=w))
                except Exhausted:
                    assert len(held) == 9
            else:
                atomically(s, lambda: a.free(held.pop()), worker=w)
            assert sum(a.free_counts()) + len(a.allocated()) == 9
            assert set(a.allocated()) == set(held)


class TestDistributedObject:
    def make(self, staleness):
        s = Store()
        return s, TDistributedObject(s, "d", 4, 0, operator.add, staleness)

    def test_updates_and_merge(self):
        s, d = self.make(0)
        for w in range(4):
            atomically(s, lambda: d.update(lambda v: v + 1), worker=w)
        assert d.merged() == 4 and atomically(s, d.read) == 4

    def test_updates_never_conflict(self):
        s, d = self.make(0)
        prof = race(s, lambda: d.update(lambda v: v + 1), lambda: d.update(lambda v: v + 1))
        assert prof.total_aborts == 0

    def test_fresh_read_conflicts_with_update(self):
        s, d = self.make(0)

        def check():
            if d.read() > 100:
                d.update(lambda v: v)
            d.update(lambda v: v + 1)

        prof = race(s, lambda: d.update(lambda v: v + 1), check)
        assert causes(prof) == ["DOBJ_STALENESS_EXCEEDED"]
        assert d.merges > 0 and d.cache is None  # zero bound disables caching

    def test_cache_within_bound(self):
        s, d = self.make(1000)
        atomically(s, lambda: d.update(lambda v: v + 5))
        assert atomically(s, lambda: d.read(0)) == 5
        atomically(s, lambda: d.update(lambda v: v + 1), worker=1)
        assert atomically(s, lambda: d.read(999)) == 5  # stale but within bound
        assert atomically(s, lambda: d.read(1001)) == 6
        assert d.cache_hits == 1

    def test_cached_read_does_not_conflict(self):
        s, d = self.make(1000)
        atomically(s, lambda: d.read(0))

        def check():
            d.read(10)
            d.update(lambda v: v + 1)

        assert race(s, lambda: d.update(lambda v: v + 1), check, now=10).total_aborts == 0


class TestCell:
    def test_unclassified(self):
        s = Store()
        c = Cell(s, "c", 0)
        prof = race(s, lambda: c.set(1), lambda: c.set(c.get() + 1))
        assert causes(prof) == ["UNCLASSIFIED"]
        assert c.value() == 1 or c.value() == 2


def test_every_cause_has_a_recipe():
    for cause in ConflictCause:
        assert RECIPES[cause] and all(r.endswith(".") for r in RECIPES[cause])
