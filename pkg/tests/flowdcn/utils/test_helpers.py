# tests/flowdcn/utils/test_helpers.py

# Third party imports
import numpy as np
from pytest import raises

# Local imports
from flowdcn._constants import THREADS_ENV
from flowdcn.exceptions import ArgumentException
from flowdcn.utils.helpers import parameter_digest
from flowdcn.utils.helpers import rng_stream
from flowdcn.utils.helpers import tiles
from flowdcn.utils.helpers import worker_threads


class TestRngStream:
    def test_same_keys_same_values(self):
        """Test a stream depends only on seed and keys"""
        a = rng_stream(7, "sample", 3).standard_normal(5)
        b = rng_stream(7, "sample", 3).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_streams_are_independent_of_draw_order(self):
        """Test drawing another stream first does not shift a stream"""
        first = rng_stream(0, "noise", 1).standard_normal(4)
        rng_stream(0, "noise", 0).standard_normal(1000)
        again = rng_stream(0, "noise", 1).standard_normal(4)
        np.testing.assert_array_equal(first, again)

    def test_different_keys_differ(self):
        """Test distinct keys and seeds give distinct streams"""
        base = rng_stream(0, "sample", 0).standard_normal(4)
        assert not np.array_equal(base, rng_stream(0, "sample", 1).standard_normal(4))
        assert not np.array_equal(base, rng_stream(1, "sample", 0).standard_normal(4))
        assert not np.array_equal(base, rng_stream(0, "brownian", 0).standard_normal(4))

    def test_negative_key_rejected(self):
        """Test negative integer keys are rejected"""
        with raises(ArgumentException) as exc_info:
            rng_stream(0, -1)
        assert exc_info.value.field_name == "key"


class TestParameterDigest:
    def test_digest_is_stable(self):
        """Test equal parameters give equal digests"""
        params = {"a": np.arange(6.0).reshape(2, 3), "b": np.ones(2)}
        copy = {name: value.copy() for name, value in params.items()}
        assert parameter_digest(params) == parameter_digest(copy)
        assert len(parameter_digest(params)) == 64

    def test_digest_sees_values_names_and_shapes(self):
        """Test any change of value, name, shape or order changes the digest"""
        params = {"a": np.arange(6.0).reshape(2, 3), "b": np.ones(2)}
        digest = parameter_digest(params)
        changed = {"a": params["a"].copy(), "b": params["b"].copy()}
        changed["b"][0] = np.nextafter(1.0, 2.0)
        assert parameter_digest(changed) != digest
        assert parameter_digest({"a": params["a"], "c": params["b"]}) != digest
        assert parameter_digest({"a": params["a"].reshape(3, 2), "b": params["b"]}) != digest
        assert parameter_digest({"b": params["b"], "a": params["a"]}) != digest


class TestWorkerThreads:
    def test_requested_without_cap(self, monkeypatch):
        """Test the requested count is used when no cap is set"""
        monkeypatch.delenv(THREADS_ENV, raising=False)
        assert worker_threads(4) == 4

    def test_cap_applies(self, monkeypatch):
        """Test FLOWDCN_THREADS caps the requested count"""
        monkeypatch.setenv(THREADS_ENV, "2")
        assert worker_threads(8) == 2
        assert worker_threads(1) == 1

    def test_zero_cap_gives_one(self, monkeypatch):
        """Test a cap below 1 still allows one thread"""
        monkeypatch.setenv(THREADS_ENV, "0")
        assert worker_threads(4) == 1

    def test_bad_cap(self, monkeypatch):
        """Test a non-integer cap is rejected"""
        monkeypatch.setenv(THREADS_ENV, "many")
        with raises(ArgumentException) as exc_info:
            worker_threads(2)
        assert exc_info.value.field_name == THREADS_ENV

    def test_bad_request(self):
        """Test fewer than one thread is rejected"""
        with raises(ArgumentException):
            worker_threads(0)


class TestTiles:
    def test_tiles_cover_axis(self):
        """Test tiles cover the axis with a short last tile"""
        assert list(tiles(10, 4)) == [(0, 4), (4, 8), (8, 10)]
        assert list(tiles(8, 8)) == [(0, 8)]
        assert list(tiles(3, 8)) == [(0, 3)]

    def test_bad_block(self):
        """Test a block size below 1 is rejected"""
        with raises(ArgumentException):
            list(tiles(4, 0))
