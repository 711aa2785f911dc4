import itertools
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skyshim import expr as ex
from skyshim.columnar import ColumnTable, DataType, Field, Schema
from skyshim.columnar.file import ColumnStats, compute_stats
from skyshim.errors import ErrorCode, SkyshimError

from tablegen import brute_filter, random_expr, random_schema, random_table

S = Schema([Field("c", DataType.INT64, True)])


def mask_str(m) -> str:
    return "".join("1" if b else "0" for b in m)


class TestBind:
    def test_bind_ok(self):
        b = ex.bind(ex.col("c") > 5, Schema([Field("c", DataType.INT64)]))
        assert b.root.index == 0

    def test_type_mismatch(self):
        with pytest.raises(SkyshimError) as e:
            ex.bind(ex.col("c") > "x", Schema([Field("c", DataType.INT64)]))
        assert e.value.code is ErrorCode.TYPE_MISMATCH

    def test_unknown_field(self):
        with pytest.raises(SkyshimError) as e:
            ex.bind(ex.col("zz") > 1, S)
        assert e.value.code is ErrorCode.UNKNOWN_FIELD

    def test_is_null_on_non_nullable_is_all_false(self):
        s = Schema([Field("c", DataType.INT64)])
        t = ColumnTable.from_pydict(s, {"c": [1, 2, 3]})
        assert not ex.evaluate(ex.bind(ex.IsNull("c"), s), t).any()

    def test_bool_is_not_int(self):
        with pytest.raises(SkyshimError):
            ex.bind(ex.col("c") == True, Schema([Field("c", DataType.INT64)]))  # noqa: E712

    def test_nan_literal_rejected(self):
        with pytest.raises(SkyshimError):
            ex.bind(ex.col("f") < float("nan"), Schema([Field("f", DataType.FLOAT64)]))

    def test_arity(self):
        with pytest.raises(ValueError):
            ex.And(ex.TRUE)
        with pytest.raises(ValueError):
            ex.Or()


class TestEvaluate:
    def test_true(self):
        t = ColumnTable.from_pydict(S, {"c": [1, 2, 3, 4, 5]})
        assert mask_str(ex.evaluate(ex.bind(ex.TRUE, S), t)) == "11111"

    def test_lt_with_null(self):
        t = ColumnTable.from_pydict(S, {"c": [1, 5, 2, None]})
        assert mask_str(ex.evaluate(ex.bind(ex.col("c") < 3, S), t)) == "1010"

    def test_not_flips_null_false(self):
        t = ColumnTable.from_pydict(S, {"c": [1, None]})
        assert mask_str(ex.evaluate(ex.bind(ex.Not(ex.col("c") < 3), S), t)) == "01"

    def test_schema_mismatch(self):
        other = Schema([Field("d", DataType.INT64)])
        t = ColumnTable.from_pydict(other, {"d": [1]})
        with pytest.raises(SkyshimError) as e:
            ex.evaluate(ex.bind(ex.TRUE, S), t)
        assert e.value.code is ErrorCode.SCHEMA_MISMATCH

    def test_utf8_bytewise(self, backend):
        s = Schema([Field("s", DataType.UTF8)])
        t = ColumnTable.from_pydict(s, {"s": ["a", "b", "é", "Z"]})
        assert mask_str(ex.evaluate(ex.bind(ex.col("s") > "a", s), t)) == "0110"

    def test_random_against_interpreter(self, backend):
        rng = random.Random(99)
        for _ in range(150):
            table = random_table(rng, max_rows=150)
            e = random_expr(rng, table.schema, table)
            got = ex.evaluate(ex.bind(e, table.schema), table).tolist()
            assert got == brute_filter(e, table), e


@settings(max_examples=100)
@given(st.integers(0, 2**32))
def test_de_morgan(seed):
    rng = random.Random(seed)
    table = random_table(rng, max_rows=80)
    a, b = random_expr(rng, table.schema, table, 2), random_expr(rng, table.schema, table, 2)
    lhs = ex.evaluate(ex.bind(ex.Not(ex.And(a, b)), table.schema), table)
    rhs = ex.evaluate(ex.bind(ex.Or(ex.Not(a), ex.Not(b)), table.schema), table)
    assert np.array_equal(lhs, rhs)


class TestSerialization:
    def test_true_is_one_byte(self):
        assert len(ex.serialize_expr(ex.TRUE)) == 1
        assert ex.deserialize_expr(ex.serialize_expr(ex.TRUE)) == ex.TRUE

    @settings(max_examples=200)
    @given(st.integers(0, 2**32))
    def test_round_trip(self, seed):
        rng = random.Random(seed)
        schema = random_schema(rng)
        e = random_expr(rng, schema, depth=5)
        assert ex.deserialize_expr(ex.serialize_expr(e)) == e

    def test_thousand_node_tree(self):
        rng = random.Random(1)
        schema = random_schema(rng)
        leaves = [ex.Cmp(schema.fields[0].name, ex.CmpOp.EQ, 0) for _ in range(500)]
        # balanced-ish tree of alternating AND/OR with ~1000 nodes and shallow depth
        level, flip = leaves, 0
        while len(level) > 1:
            nxt = []
            for i in range(0, len(level), 2):
                pair = level[i:i + 2]
                nxt.append(pair[0] if len(pair) == 1 else (ex.And if flip else ex.Or)(*pair))
            level, flip = nxt, 1 - flip
        tree = level[0]
        assert ex.deserialize_expr(ex.serialize_expr(tree)) == tree
        wide = ex.And(*[ex.Or(l, ex.Not(l)) for l in leaves])
        assert ex.deserialize_expr(ex.serialize_expr(wide)) == wide

    def test_depth_limit(self):
        e = ex.TRUE
        for _ in range(ex.MAX_DEPTH + 5):
            e = ex.Not(e)
        with pytest.raises(ValueError):
            ex.serialize_expr(e)
        deep = bytes([7]) * 10_000 + bytes([1])
        with pytest.raises(SkyshimError) as err:
            ex.deserialize_expr(deep)
        assert err.value.code is ErrorCode.MALFORMED

    @pytest.mark.parametrize("buf", [b"", b"\x03", b"\x01\x01", b"\x63", b"\x05\x01\x00\x00\x00\x01",
                                     b"\x05\xff\xff\xff\xff"])
    def test_malformed(self, buf):
        with pytest.raises(SkyshimError) as e:
            ex.deserialize_expr(buf)
        assert e.value.code is ErrorCode.MALFORMED

    @given(st.binary(max_size=64))
    def test_fuzz_never_crashes(self, buf):
        try:
            ex.deserialize_expr(buf)
        except SkyshimError as e:
            assert e.code is ErrorCode.MALFORMED

    def test_truncations_all_malformed(self):
        e = ex.And(ex.col("a") < 3, ex.Or(ex.col("b") == "xyz", ex.IsNull("c")), ex.Not(ex.col("d") >= 1.5))
        buf = ex.serialize_expr(e)
        for i in range(len(buf)):
            with pytest.raises(SkyshimError):
                ex.deserialize_expr(buf[:i])


class TestAdmissible:
    def _b(self, e, t=DataType.INT64):
        return ex.bind(e, Schema([Field("c", t, True)]))

    def test_interval(self):
        assert ex.stats_admissible(self._b(ex.col("c") > 10), [ColumnStats(0, 5, 0)], 10) is ex.Admissible.NEVER

    def test_or(self):
        e = ex.Or(ex.col("c") > 10, ex.col("c") < 1)
        assert ex.stats_admissible(self._b(e), [ColumnStats(2, 5, 0)], 10) is ex.Admissible.NEVER

    def test_not_is_maybe(self):
        e = ex.Not(ex.col("c") > 0)
        assert ex.stats_admissible(self._b(e), [ColumnStats(2, 5, 0)], 10) is ex.Admissible.MAYBE

    def test_absent_stats(self):
        assert ex.stats_admissible(self._b(ex.col("c") > 10), [None], 10) is ex.Admissible.MAYBE

    def test_all_null_group(self):
        st_ = ColumnStats(None, None, 10)
        assert ex.stats_admissible(self._b(ex.col("c") > 10), [st_], 10) is ex.Admissible.NEVER
        assert ex.stats_admissible(self._b(ex.IsNull("c")), [st_], 10) is ex.Admissible.MAYBE
        assert ex.stats_admissible(self._b(ex.IsNull("c")), [ColumnStats(1, 2, 0)], 10) is ex.Admissible.NEVER

    def test_extreme_point_oracle(self):
        """NEVER implies no row built from the stats' extremes (and null, if any) can match."""
        rng = random.Random(5)
        checked = 0
        for _ in range(600):
            table = random_table(rng, max_rows=40)
            stats = [compute_stats(c) for c in table.columns]
            e = random_expr(rng, table.schema, table)
            if ex.stats_admissible(ex.bind(e, table.schema), stats, table.row_count) is ex.Admissible.MAYBE:
                continue
            choices = []
            for f, s in zip(table.schema.fields, stats):
                vals = [s.min, s.max] if s.has_minmax else []
                if s.null_count:
                    vals.append(None)
                choices.append(vals)
            probe_rows = list(itertools.product(*choices))
            if not probe_rows:
                continue
            try:
                probe = ColumnTable.from_pydict(
                    table.schema, {f.name: [r[i] for r in probe_rows] for i, f in enumerate(table.schema.fields)})
            except (ValueError, UnicodeDecodeError):
                continue  # a truncated UTF8 bound that is not valid text
            assert not any(brute_filter(e, probe)), e
            checked += 1
        assert checked > 50

    @settings(max_examples=150)
    @given(st.integers(0, 2**32))
    def test_coherence_with_evaluate(self, seed):
        rng = random.Random(seed)
        table = random_table(rng, max_rows=60)
        e = random_expr(rng, table.schema, table)
        bound = ex.bind(e, table.schema)
        stats = [compute_stats(c) for c in table.columns]
        if ex.evaluate(bound, table).any():
            assert ex.stats_admissible(bound, stats, table.row_count) is ex.Admissible.MAYBE


class TestProjection:
    def test_resolve_and_serialize(self):
        s = Schema([Field("a", DataType.INT64), Field("b", DataType.INT64)])
        p = ex.Projection(("b", "a"))
        assert p.resolve(s) == ["a", "b"]
        assert ex.Projection.deserialize(p.serialize()) == p
        assert ex.Projection.deserialize(ex.ALL.serialize()).is_all

    def test_invalid(self):
        with pytest.raises(ValueError):
            ex.Projection(("a", "a"))
        with pytest.raises(SkyshimError):
            ex.Projection(("zz",)).resolve(S)
        with pytest.raises(SkyshimError):
            ex.Projection.deserialize(b"\x02")
