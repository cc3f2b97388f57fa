import struct
import subprocess
import sys
import textwrap
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import pytest

from nidt import transfer
from nidt.dataset import FlowRecord, SchemaMismatchError, fit_encoding, to_matrix
from nidt.features import ExtraTreesConfig, FeatureSelection, fit_importance, fit_scaler, select_top_k, transform
from nidt.model import build, predict_proba
from nidt.synthetic import make_records


@pytest.fixture(scope="module")
def source():
    """An untrained but fully fitted pipeline: 10 numeric + 1 categorical columns, top 8 kept."""
    records, schema = make_records(300, d=10, seed=3, categorical=1)
    enc = fit_encoding(records, schema=schema)
    X, y = to_matrix(records, enc, schema)
    sel = select_top_k(fit_importance(X, y, ExtraTreesConfig(n_trees=10)), 8)
    scaler = fit_scaler(X, sel)
    model = build("cnn-lstm", 8, seed=7)
    return dict(records=records, schema=schema, enc=enc, X=X, sel=sel, scaler=scaler, model=model)


def export(src, path, metadata=None):
    return transfer.export_bundle(src["model"], src["sel"], src["scaler"], src["enc"], path, src["schema"], metadata or {"seed": 42})


def test_fnv1a64_vectors():
    assert transfer.digest(b"") == "cbf29ce484222325"
    assert transfer.digest(b"a") == "af63dc4c8601ec8c"
    assert transfer.digest(b"foobar") == "85944171f73967e8"


def test_round_trip_is_bitwise(source, tmp_path):
    n, dig = export(source, tmp_path / "m.nidt")
    blob = (tmp_path / "m.nidt").read_bytes()
    assert n == len(blob) and dig == transfer.digest(blob) == transfer.file_digest(tmp_path / "m.nidt")
    header, model = transfer.decode_bundle(blob)
    assert model.spec == source["model"].spec
    for a, b in zip(source["model"].tensors(), model.tensors()):
        assert a.dtype == b.dtype == np.float32
        assert a.tobytes() == b.tobytes()
    assert header["metadata"] == {"seed": 42}
    assert header["selection"] == list(source["sel"].kept)
    # re-encoding the decoded pipeline reproduces the same bytes
    eng = transfer.import_bundle(tmp_path / "m.nidt")
    again = transfer.encode_bundle(eng.model, eng.selection, eng.scaler, eng.encoding, eng.schema, eng.metadata)
    assert again == blob


def test_byte_layout(source, tmp_path):
    export(source, tmp_path / "m.nidt")
    blob = (tmp_path / "m.nidt").read_bytes()
    magic, version, hlen = struct.unpack_from("<4sII", blob)
    assert (magic, version) == (b"NIDT", 1)
    first = source["model"].tensors()[0]
    off = 12 + hlen
    ndim, *dims = struct.unpack_from(f"<{1 + first.ndim}I", blob, off)
    assert (ndim, tuple(dims)) == (first.ndim, first.shape)
    data = np.frombuffer(blob, "<f4", first.size, off + 4 + 4 * ndim)
    assert data.tobytes() == first.astype("<f4").tobytes()


def test_repeated_exports_share_digest(source, tmp_path):
    assert export(source, tmp_path / "a.nidt") == export(source, tmp_path / "b.nidt")


def test_width_mismatch_fails_before_write(source, tmp_path):
    sel = FeatureSelection(source["sel"].kept[:7] + ("c0",))
    short = FeatureSelection(source["sel"].kept[:7])
    scaler = fit_scaler(source["X"], short)
    out = tmp_path / "never.nidt"
    with pytest.raises(transfer.InconsistentBundleError):
        transfer.export_bundle(source["model"], short, scaler, source["enc"], out, source["schema"])
    assert not out.exists()
    assert list(tmp_path.iterdir()) == []
    # scaler/selection disagreement is caught too
    with pytest.raises(transfer.InconsistentBundleError):
        transfer.export_bundle(source["model"], sel, source["scaler"], source["enc"], out, source["schema"])
    assert not out.exists()


def test_bad_magic(source, tmp_path):
    export(source, tmp_path / "m.nidt")
    blob = bytearray((tmp_path / "m.nidt").read_bytes())
    blob[:4] = b"XXXX"
    (tmp_path / "bad.nidt").write_bytes(bytes(blob))
    with pytest.raises(transfer.BadMagicError):
        transfer.import_bundle(tmp_path / "bad.nidt")
    with pytest.raises(transfer.BadMagicError):
        transfer.decode_bundle(b"NI")


def test_unsupported_version(source, tmp_path):
    export(source, tmp_path / "m.nidt")
    blob = bytearray((tmp_path / "m.nidt").read_bytes())
    blob[4:8] = struct.pack("<I", 2)
    with pytest.raises(transfer.UnsupportedVersionError, match="2"):
        transfer.decode_bundle(bytes(blob))


@pytest.mark.parametrize("cut", [1, 4, 1000])
def test_truncated_payload_names_both_counts(source, tmp_path, cut):
    export(source, tmp_path / "m.nidt")
    blob = (tmp_path / "m.nidt").read_bytes()
    hlen = struct.unpack_from("<I", blob, 8)[0]
    expected = len(blob) - 12 - hlen
    with pytest.raises(transfer.PayloadLengthError) as exc:
        transfer.decode_bundle(blob[:-cut])
    assert (exc.value.expected, exc.value.actual) == (expected, expected - cut)
    assert str(expected) in str(exc.value) and str(expected - cut) in str(exc.value)
    with pytest.raises(transfer.PayloadLengthError):
        transfer.decode_bundle(blob + b"\0")


def test_header_errors(source, tmp_path):
    export(source, tmp_path / "m.nidt")
    blob = (tmp_path / "m.nidt").read_bytes()
    hlen = struct.unpack_from("<I", blob, 8)[0]
    garbage = b"{not json"
    with pytest.raises(transfer.HeaderSchemaError):
        transfer.decode_bundle(struct.pack("<4sII", b"NIDT", 1, len(garbage)) + garbage)
    with pytest.raises(transfer.HeaderSchemaError):
        transfer.decode_bundle(struct.pack("<4sII", b"NIDT", 1, 2) + b"[]")
    with pytest.raises(transfer.HeaderSchemaError):
        transfer.decode_bundle(struct.pack("<4sII", b"NIDT", 1, hlen + 50) + blob[12:40])
    # all four failure kinds are distinct types under one base
    kinds = {transfer.BadMagicError, transfer.UnsupportedVersionError, transfer.PayloadLengthError, transfer.HeaderSchemaError}
    assert len(kinds) == 4 and all(issubclass(k, transfer.BundleError) for k in kinds)


def test_engine_matches_source_bitwise(source, tmp_path):
    export(source, tmp_path / "m.nidt")
    eng = transfer.import_bundle(tmp_path / "m.nidt")
    S = transform(source["X"], source["sel"], source["scaler"]).values
    expected = predict_proba(source["model"], S)
    scores, labels = transfer.infer(eng, source["records"])
    assert scores.dtype == np.float32
    assert scores.tobytes() == expected.tobytes()
    assert (labels == (expected >= 0.5)).all()
    assert transfer.infer(eng, source["records"], threads=4)[0].tobytes() == expected.tobytes()


def test_engine_weights_are_frozen(source, tmp_path):
    export(source, tmp_path / "m.nidt")
    eng = transfer.import_bundle(tmp_path / "m.nidt")
    with pytest.raises(ValueError):
        eng.model.tensors()[0][...] = 0
    assert not hasattr(eng, "train")


def test_unseen_category_still_scores(source, tmp_path):
    export(source, tmp_path / "m.nidt")
    eng = transfer.import_bundle(tmp_path / "m.nidt")
    r = source["records"][0]
    odd = FlowRecord(r.values[:-1] + ("sctp",), r.label, r.attack_cat)
    scores, labels = transfer.infer(eng, [odd])
    assert scores.shape == (1,) and 0 <= scores[0] <= 1


def test_out_of_range_values_are_clamped(source, tmp_path):
    export(source, tmp_path / "m.nidt")
    eng = transfer.import_bundle(tmp_path / "m.nidt")
    r = source["records"][0]
    huge = FlowRecord((r.values[0],) + tuple(1e30 for _ in r.values[1:-1]) + (r.values[-1],), r.label, r.attack_cat)
    assert ((eng.features([huge]) >= 0) & (eng.features([huge]) <= 1)).all()
    loose = replace(eng, clip=False)
    assert loose.features([huge]).max() > 1


def test_empty_input(source, tmp_path):
    export(source, tmp_path / "m.nidt")
    scores, labels = transfer.infer(transfer.import_bundle(tmp_path / "m.nidt"), [])
    assert scores.shape == labels.shape == (0,)


def test_schema_mismatch_names_column(source, tmp_path):
    export(source, tmp_path / "m.nidt")
    eng = transfer.import_bundle(tmp_path / "m.nidt")
    bad = tmp_path / "bad.csv"
    bad.write_text("id,f00\n1,2\n")
    with pytest.raises(Exception, match="f01|header"):
        eng.load_records(bad)
    with pytest.raises(SchemaMismatchError):
        eng.features([FlowRecord(("1", 2.0), 0)])


def test_concurrent_readers_agree(source, tmp_path):
    export(source, tmp_path / "m.nidt")
    eng = transfer.import_bundle(tmp_path / "m.nidt")
    recs = source["records"]
    ref = eng.score(recs).tobytes()
    with ThreadPoolExecutor(8) as pool:
        results = list(pool.map(lambda i: eng.score(recs[i:] + recs[:i]), range(16)))
    for i, s in enumerate(results):
        rolled = np.frombuffer(ref, np.float32)
        assert s.tobytes() == np.roll(rolled, -i).tobytes()


def test_cross_process_scores_match(source, tmp_path):
    from nidt.dataset import write_csv

    path = tmp_path / "m.nidt"
    export(source, path)
    write_csv(source["records"], tmp_path / "r.csv", source["schema"])
    here = transfer.infer(transfer.import_bundle(path), source["records"])[0]
    code = textwrap.dedent(
        f"""
        import sys
        from nidt import transfer
        eng = transfer.import_bundle({str(path)!r})
        sys.stdout.buffer.write(eng.score(eng.load_records({str(tmp_path / 'r.csv')!r})).tobytes())
        """
    )
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, check=True).stdout
    assert out == here.tobytes()
