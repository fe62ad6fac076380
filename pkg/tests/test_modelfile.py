import struct

import numpy as np
import pytest

from bcralign.cascade import fit_many, init_from_box, train_bcr
from bcralign.errors import BadMagicError, TruncatedSectionError, VersionMismatchError
from bcralign.experiment import training_set
from bcralign.modelfile import load_model, model_from_bytes, model_to_bytes, read_sections, save_model


def section_table(data):
    """(name, offset, length) for every section, parsed independently."""
    count = struct.unpack_from("<I", data, 8)[0]
    pos, out = 12, []
    for _ in range(count):
        (k,) = struct.unpack_from("<I", data, pos)
        name = data[pos + 4:pos + 4 + k].decode()
        off, length = struct.unpack_from("<QQ", data, pos + 4 + k)
        out.append((name, off, length))
        pos += 20 + k
    return out


@pytest.fixture(scope="module")
def blob(tiny_model):
    return model_to_bytes(tiny_model)


@pytest.mark.invariant
def test_round_trip_bit_exact(tiny_model, tiny_faces, tmp_path):
    _, faces = tiny_faces
    path = tmp_path / "m.bcr"
    save_model(tiny_model, path)
    loaded = load_model(path)
    assert model_to_bytes(loaded) == path.read_bytes()
    for a, b in zip(tiny_model.nodes(), loaded.nodes()):
        assert a.regressor.weights.tobytes() == b.regressor.weights.tobytes()
        assert a.spdm.C.tobytes() == b.spdm.C.tobytes()
        assert (a.gate is None) == (b.gate is None)
    sub = faces[:10]
    inits = [init_from_box(tiny_model, f.box) for f in sub]
    ra = fit_many(tiny_model, [f.image for f in sub], inits)
    rb = fit_many(loaded, [f.image for f in sub], inits)
    for x, y in zip(ra, rb):
        assert x.shape.tobytes() == y.shape.tobytes()
        assert x.visibility_continuous.tobytes() == y.visibility_continuous.tobytes()
        assert x.path == y.path


def test_header_layout(blob, tiny_model):
    assert blob[:4] == b"BCR1"
    assert struct.unpack_from("<I", blob, 4)[0] == 1
    names = [n for n, _, _ in section_table(blob)]
    assert names[:2] == ["meta", "reference"]
    k = len(tiny_model.nodes())
    for i in range(k):
        for part in ("spdm", "forest", "regressor"):
            assert f"node{i}/{part}" in names
    assert sum(n.endswith("/gate") for n in names) == sum(1 for n in tiny_model.nodes() if n.gate is not None)
    # sections are contiguous and end at the end of the file
    table = section_table(blob)
    for (_, off, length), (_, nxt, _) in zip(table, table[1:]):
        assert off + length == nxt
    assert table[-1][1] + table[-1][2] == len(blob)


def test_bad_magic(blob):
    with pytest.raises(BadMagicError):
        model_from_bytes(b"XCR1" + blob[4:])
    with pytest.raises(BadMagicError):
        model_from_bytes(b"")


def test_version_mismatch(blob):
    with pytest.raises(VersionMismatchError):
        model_from_bytes(blob[:4] + struct.pack("<I", 2) + blob[8:])


def test_truncation_names_the_section(blob):
    table = section_table(blob)
    for name, off, length in table:
        for cut in {off + 1, off + length // 2, off + length - 1}:
            if cut <= off:
                continue
            with pytest.raises(TruncatedSectionError) as info:
                model_from_bytes(blob[:cut])
            assert info.value.section == name
            assert name in str(info.value)
    with pytest.raises(TruncatedSectionError) as info:
        read_sections(blob[:20])
    assert info.value.section == "table"
    with pytest.raises(TruncatedSectionError) as info:
        read_sections(blob[:9])
    assert info.value.section == "header"


def test_training_is_byte_deterministic(tiny_faces, tiny_model, blob):
    from bcralign.cascade import BcrConfig

    _, faces = tiny_faces
    again = train_bcr(training_set(faces), BcrConfig(**tiny_model.config))
    assert model_to_bytes(again) == blob
    assert np.array_equal(again.reference_shape, tiny_model.reference_shape)
