import json
import struct

import numpy as np
import pytest

from conftest import tiny_encoder_config
from tslm.datagen import CaptionedPair, make_synth_dataset
from tslm.decoder import TslmModel
from tslm.denoiser import DenoiserModel
from tslm.encoder import encode_joint
from tslm.errors import DataError, FormatError, MigrationError, ParameterError
from tslm.persistence import (
    PipelineConfig,
    load_checkpoint,
    read_checkpoint,
    read_pairs,
    save_checkpoint,
    write_checkpoint,
    write_pairs,
)

PROBE = make_synth_dataset(1, 5)[0].series


def same_tensors(a, b):
    pa, pb = a.named_parameters(), b.named_parameters()
    return list(pa) == list(pb) and all(pa[k].data.tobytes() == pb[k].data.tobytes() for k in pa)


def test_autoencoder_round_trip(tmp_path, tiny_ae):
    save_checkpoint(tiny_ae, tmp_path / "ae.ckpt")
    back = load_checkpoint(tmp_path / "ae.ckpt")
    assert same_tensors(tiny_ae, back)
    assert back.encode(PROBE).tobytes() == tiny_ae.encode(PROBE).tobytes()


@pytest.mark.parametrize("kind", ["denoiser", "tslm"])
def test_model_round_trip(tmp_path, vocab, tiny_ae, kind):
    cfg = tiny_encoder_config(vocab, variant="text" if kind == "tslm" else "joint")
    model = DenoiserModel(vocab, cfg, tiny_ae) if kind == "denoiser" else TslmModel(vocab, cfg, tiny_ae, dec_layers=1, max_len=12)
    path = tmp_path / f"{kind}.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert type(back) is type(model) and back.vocab == vocab and back.config == cfg
    assert same_tensors(model, back) and same_tensors(model.ae, back.ae)
    a = encode_joint(PROBE, model.encoder, vocab, tiny_ae).matrix
    b = encode_joint(PROBE, back.encoder, back.vocab, back.ae).matrix
    assert a.tobytes() == b.tobytes()
    if kind == "tslm":
        assert (back.dec_layers, back.max_len) == (1, 12)
    # saving again yields the same bytes
    save_checkpoint(back, tmp_path / "again.ckpt")
    assert path.read_bytes() == (tmp_path / "again.ckpt").read_bytes()


def test_layout(tmp_path):
    write_checkpoint(tmp_path / "c", {"kind": "x"}, {"a": np.arange(3.0), "b": np.ones((2, 2))})
    raw = (tmp_path / "c").read_bytes()
    magic, version, hlen = struct.unpack_from("<4sIQ", raw)
    assert (magic, version) == (b"TSLM", 1)
    header = json.loads(raw[16 : 16 + hlen])
    assert header["tensors"] == [{"name": "a", "offset": 0, "shape": [3]}, {"name": "b", "offset": 12, "shape": [2, 2]}]
    assert len(raw) == 16 + hlen + 4 * 7
    _, arrays = read_checkpoint(tmp_path / "c")
    np.testing.assert_array_equal(arrays["b"], np.ones((2, 2)))


@pytest.fixture
def ckpt(tmp_path, tiny_ae):
    path = tmp_path / "ae.ckpt"
    save_checkpoint(tiny_ae, path)
    return path


def test_bad_magic(ckpt):
    raw = bytearray(ckpt.read_bytes())
    raw[:4] = b"XXXX"
    ckpt.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(ckpt)


def test_unknown_version(ckpt):
    raw = bytearray(ckpt.read_bytes())
    raw[4:8] = struct.pack("<I", 9)
    ckpt.write_bytes(bytes(raw))
    with pytest.raises(MigrationError):
        load_checkpoint(ckpt)


def test_truncated_payload(ckpt):
    ckpt.write_bytes(ckpt.read_bytes()[:-10])
    with pytest.raises(FormatError):
        load_checkpoint(ckpt)


def test_payload_size_mismatch(ckpt):
    ckpt.write_bytes(ckpt.read_bytes() + b"\0" * 8)
    with pytest.raises(FormatError, match="payload"):
        load_checkpoint(ckpt)


def test_missing_tensor_rejected(tmp_path, tiny_ae):
    config, arrays = read_checkpoint(_saved(tmp_path, tiny_ae))
    arrays.pop(next(iter(arrays)))
    write_checkpoint(tmp_path / "short", config, arrays)
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "short")


def _saved(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    return path


def test_pairs_round_trip(tmp_path):
    pairs = make_synth_dataset(3, 0, annotations=2) + [CaptionedPair((5.0, 6.0, 7.0), "flat", "generated", -0.25)]
    write_pairs(tmp_path / "p.jsonl", pairs)
    assert read_pairs(tmp_path / "p.jsonl") == pairs


@pytest.mark.parametrize(
    "line",
    [
        '{"series": [1, NaN, 3], "caption": "x"}',
        '{"series": [1, Infinity, 3], "caption": "x"}',
        '{"series": [1, 150, 3], "caption": "x"}',
        '{"series": [1, 2, 3], "caption": ""}',
        '{"series": "1,2,3", "caption": "x"}',
        '{"series": [1, 2, 3], "caption": "x", "source": "web"}',
        "not json",
    ],
)
def test_bad_pair_lines_name_the_line(tmp_path, line):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"series": [1, 2, 3], "caption": "ok"}\n' + line + "\n")
    with pytest.raises(DataError) as info:
        read_pairs(path)
    assert info.value.line == 2 and "line 2" in str(info.value)


def test_pipeline_config(tmp_path):
    cfg = PipelineConfig(d=64, seed=3, threshold="auto")
    cfg.save(tmp_path / "c.json")
    back = PipelineConfig.load(tmp_path / "c.json")
    assert back == cfg and back.f == 6
    assert PipelineConfig.from_dict({"l_max": 24, "f": 6}).f == 6
    for bad in ({"d": 30, "heads": 4}, {"l_max": 22}, {"f": 5}, {"width": 3}, {"threshold": "low"}):
        with pytest.raises(ParameterError):
            PipelineConfig.from_dict(bad)
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(FormatError):
        PipelineConfig.load(tmp_path / "broken.json")
