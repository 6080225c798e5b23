"""Ingestion, Tecator fetch/cache, preprocessing and splits."""

import http.server
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spectral_ranges import core_data
from spectral_ranges.errors import (
    DegenerateSlopeError,
    DegenerateSpectrumError,
    IngestionError,
    InvalidSplitError,
    NetworkError,
    ParseError,
)


# --------------------------------------------------------------------------
# CSV


class TestLoadCsv:
    def test_header_wavelengths_and_target(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("850,851,852,fat\n1,2,3,10\n2,3,4,11\n3,4,6,12\n")
        s = core_data.load_csv(p)
        assert (s.n_samples, s.n_vars) == (3, 3)
        np.testing.assert_array_equal(s.wavelengths, [850, 851, 852])
        np.testing.assert_array_equal(s.target, [10, 11, 12])
        assert s.metadata["synthesized_axis"] is False

    def test_named_target_column_first(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("fat,900,910\n5,0.1,0.2\n6,0.3,0.5\n")
        s = core_data.load_csv(p, target_column="fat")
        np.testing.assert_array_equal(s.target, [5, 6])
        np.testing.assert_array_equal(s.wavelengths, [900, 910])

    def test_synthesized_axis(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("1,2,3,4\n2,3,5,4\n")
        s = core_data.load_csv(p, has_header=False)
        np.testing.assert_array_equal(s.wavelengths, [0, 1, 2])
        assert s.metadata["synthesized_axis"] is True

    def test_wavelength_row(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("a,b,c,y\n700,710,720,0\n1,2,3,4\n2,3,5,4\n")
        s = core_data.load_csv(p, wavelength_row=0)
        assert s.n_samples == 2
        np.testing.assert_array_equal(s.wavelengths, [700, 710, 720])

    def test_nan_cell_is_named(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("1,2,3,y\n1,2,3,4\n1,NaN,3,4\n")
        with pytest.raises(IngestionError, match=r"row 1, column 1"):
            core_data.load_csv(p)

    def test_ragged_row_is_named(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("1,2,3,y\n1,2,3,4\n1,2,3\n")
        with pytest.raises(IngestionError, match="row 1 has 3 columns"):
            core_data.load_csv(p)

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        s = core_data.SpectraSet(rng.random((5, 4)), [1.5, 2.5, 3.5, 4.5], rng.random(5))
        core_data.save_csv(s, tmp_path / "r.csv")
        back = core_data.load_csv(tmp_path / "r.csv")
        np.testing.assert_array_equal(back.absorbance, s.absorbance)
        np.testing.assert_array_equal(back.target, s.target)
        np.testing.assert_array_equal(back.wavelengths, s.wavelengths)


def test_spectra_set_is_read_only():
    s = core_data.SpectraSet(np.ones((2, 3)) + np.eye(2, 3), [1, 2, 3], [0, 1])
    with pytest.raises(ValueError):
        s.absorbance[0, 0] = 5.0


# --------------------------------------------------------------------------
# Tecator


def _statlib_bytes(n_samples=240, seed=0, truncate_values=0):
    rng = np.random.default_rng(seed)
    data = rng.uniform(2.0, 3.5, (n_samples, 125))
    data[:, 123] = rng.uniform(0, 50, n_samples)
    values = data.ravel()
    if truncate_values:
        values = values[:-truncate_values]
    lines = ["Tecator meat data set", "", "   Some free text describing the columns.", ""]
    for i in range(0, values.size, 5):
        lines.append(" ".join(f"{v:.5f}" for v in values[i : i + 5]))
    return ("\n".join(lines) + "\n").encode("latin-1"), data


class _Server:
    """Serve ``payload`` on localhost; ``payload`` can be swapped between requests."""

    def __init__(self):
        self.payload = b""
        outer = self

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_GET(self):
                self.send_response(200)
                self.send_header("Content-Length", str(len(outer.payload)))
                self.end_headers()
                self.wfile.write(outer.payload)

            def log_message(self, *args):
                pass

        self.httpd = http.server.HTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/tecator"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def server():
    s = _Server()
    yield s
    s.close()


class TestTecator:
    def test_parse_layout(self):
        raw, data = _statlib_bytes()
        s = core_data.parse_tecator(raw)
        assert (s.n_samples, s.n_vars) == (215, 100)
        np.testing.assert_allclose(s.absorbance, data[:215, :100], atol=1e-5)
        np.testing.assert_allclose(s.target, data[:215, 123], atol=1e-5)
        assert s.wavelengths[0] == 850 and s.wavelengths[-1] == 1050

    def test_parse_rejects_truncation(self):
        raw, _ = _statlib_bytes(truncate_values=7)
        with pytest.raises(ParseError, match="multiple of 125"):
            core_data.parse_tecator(raw)

    def test_parse_rejects_too_few_samples(self):
        raw, _ = _statlib_bytes(n_samples=200)
        with pytest.raises(ParseError, match="expected 215"):
            core_data.parse_tecator(raw)

    def test_fetch_then_offline_cache(self, server, tmp_path):
        server.payload, _ = _statlib_bytes()
        first = core_data.fetch_tecator(server.url, cache_dir=tmp_path)
        assert (tmp_path / "tecator" / "raw.dat").exists()
        assert (tmp_path / "tecator" / "meta.json").exists()
        server.close()
        second = core_data.fetch_tecator("http://127.0.0.1:9/unreachable", cache_dir=tmp_path)
        np.testing.assert_array_equal(first.absorbance, second.absorbance)
        np.testing.assert_array_equal(first.target, second.target)

    def test_truncated_download_does_not_poison_cache(self, server, tmp_path):
        good, _ = _statlib_bytes()
        server.payload = good
        core_data.fetch_tecator(server.url, cache_dir=tmp_path)
        server.payload, _ = _statlib_bytes(truncate_values=300)
        with pytest.raises(ParseError):
            core_data.fetch_tecator(server.url, cache_dir=tmp_path, refresh=True)
        assert (tmp_path / "tecator" / "raw.dat").read_bytes() == good

    def test_unreachable_and_uncached(self, tmp_path):
        with pytest.raises(NetworkError):
            core_data.fetch_tecator("http://127.0.0.1:9/nothing", cache_dir=tmp_path, timeout=2)


# --------------------------------------------------------------------------
# preprocessing


finite_rows = arrays(
    np.float64,
    st.tuples(st.integers(1, 6), st.integers(3, 20)),
    elements=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False),
).filter(lambda a: np.all(a.std(axis=1) > 1e-3 * np.maximum(1.0, np.abs(a).max(axis=1))))


class TestPreprocess:
    def test_snv_example(self):
        np.testing.assert_allclose(core_data.snv(np.array([[1.0, 2.0, 3.0]])), [[-1.0, 0.0, 1.0]], atol=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(finite_rows)
    def test_snv_row_statistics_and_idempotence(self, X):
        Y = core_data.snv(X)
        assert np.all(np.abs(Y.mean(axis=1)) < 1e-10)
        assert np.all(np.abs(Y.var(axis=1, ddof=1) - 1.0) < 1e-10)
        np.testing.assert_allclose(core_data.snv(Y), Y, atol=1e-10)

    def test_snv_constant_row_named(self):
        X = np.array([[1.0, 2.0, 3.0], [4.0, 4.0, 4.0]])
        with pytest.raises(DegenerateSpectrumError) as exc:
            core_data.snv(X)
        assert exc.value.row == 1

    def test_derivative_example(self):
        s = core_data.SpectraSet([[0.0, 1.0, 4.0], [1.0, 1.0, 1.0]], [850.0, 851.0, 852.0], [1.0, 2.0])
        d = core_data.preprocess(s, "derivative1")
        np.testing.assert_array_equal(d.absorbance[0], [1.0, 3.0])
        np.testing.assert_array_equal(d.wavelengths, [850.5, 851.5])

    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_derivative_of_affine_is_constant(self, a, b):
        wl = np.linspace(900, 1000, 11)
        s = core_data.SpectraSet([a * wl + b, b - a * wl], wl, [0.0, 1.0])
        d = core_data.preprocess(s, "derivative1").absorbance[0]
        np.testing.assert_allclose(d, d[0], atol=1e-9)

    def test_msc_recovers_reference(self):
        rng = np.random.default_rng(0)
        ref = rng.random(30) + np.linspace(0, 1, 30)
        X = np.array([2.0 + 0.5 * ref, -1.0 + 3.0 * ref])
        np.testing.assert_allclose(core_data.msc(X, ref), np.vstack([ref, ref]), atol=1e-12)

    def test_msc_flat_spectrum_slope_error(self):
        ref = np.linspace(0, 1, 10)
        with pytest.raises(DegenerateSlopeError):
            core_data.msc(np.vstack([ref, np.ones(10)]), ref)

    def test_msc_reference_from_training_only(self):
        rng = np.random.default_rng(1)
        wl = np.arange(20.0)
        train = core_data.SpectraSet(rng.random((5, 20)) + wl, wl, np.arange(5.0))
        test = core_data.SpectraSet(rng.random((3, 20)) * 10 + wl, wl, np.arange(3.0))
        _, t1 = core_data.preprocess_pair(train, test, ["msc"])
        expect = core_data.msc(test.absorbance, train.absorbance.mean(axis=0))
        np.testing.assert_allclose(t1.absorbance, expect)


# --------------------------------------------------------------------------
# splits


class TestSplits:
    def _set(self, n):
        rng = np.random.default_rng(0)
        return core_data.SpectraSet(rng.random((n, 4)), np.arange(4.0), np.arange(float(n)))

    def test_tecator_sizes(self):
        tr, te = core_data.apply_split(self._set(215), core_data.head_tail_split(215, 172))
        assert (tr.n_samples, te.n_samples) == (172, 43)

    def test_wine_sizes_with_outliers(self):
        # samples 34, 35 and 84 counted from one
        spec = core_data.head_tail_split(124, 94, [33, 34, 83])
        tr, te = core_data.apply_split(self._set(124), spec)
        assert (tr.n_samples, te.n_samples) == (91, 30)
        assert not {33, 34, 83} & set(tr.target.astype(int))

    def test_overlap_rejected(self):
        spec = core_data.SplitSpec([0, 1, 2], [2, 3])
        with pytest.raises(InvalidSplitError, match="overlap"):
            core_data.apply_split(self._set(4), spec)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(5, 60), st.data())
    def test_partition_property(self, n, data):
        n_train = data.draw(st.integers(2, n - 2))
        excl = data.draw(st.lists(st.integers(0, n_train - 1), unique=True, max_size=n_train - 2))
        spec = core_data.head_tail_split(n, n_train, excl)
        s = self._set(n)
        tr, te = core_data.apply_split(s, spec)
        assert tr.n_samples + te.n_samples + len(excl) == n
        kept = [i for i in range(n) if i not in excl]
        np.testing.assert_array_equal(np.vstack([tr.absorbance, te.absorbance]), s.absorbance[kept])

    def test_split_dict_round_trip(self):
        spec = core_data.head_tail_split(10, 7, [2])
        assert core_data.SplitSpec.from_dict(spec.to_dict()) == spec
