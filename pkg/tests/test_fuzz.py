import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skyshim import expr as ex
from skyshim.columnar import BytesSource
from skyshim.errors import ErrorCode, SkyshimError
from skyshim.scan_plugin import ScanRequest, scan_fragment

from fuzzing import KNOWN, SCHEMA, TARGETS, Fuzzer


@pytest.mark.parametrize("seed", [1, 2])
def test_mutation_fuzz_small(seed):
    report = Fuzzer(seed).run(1000)
    assert not report.failures, report.failures[:5]
    # the mutations reach past the framing layer into the plugin and reader
    assert report.statuses["OK"] > 0
    assert any(k.startswith("scan:") for k in report.statuses)


@settings(max_examples=300)
@given(st.binary(max_size=200))
def test_request_decode_only_malformed(buf):
    try:
        ScanRequest.decode(buf)
    except SkyshimError as e:
        assert e.code is ErrorCode.MALFORMED_REQUEST


@settings(max_examples=300)
@given(st.binary(max_size=300))
def test_file_bytes_fail_with_enumerated_codes(buf):
    req = ScanRequest.build(len(buf), SCHEMA, ex.col("a") > 1)
    try:
        scan_fragment(BytesSource(buf), req)
    except SkyshimError as e:
        assert e.code in KNOWN


def test_targets_cover_each_parser():
    assert set(TARGETS) == {"frame", "request", "expression", "file"}
