import json

import pytest
import torch

from sfanet.checkpoint import MANIFEST, PAYLOAD, load_checkpoint, read_manifest, save_checkpoint
from sfanet.data import Normalizer
from sfanet.errors import FormatError
from sfanet.model import ModelConfig, SfanetModel

from test_model import tiny


@pytest.fixture
def saved(tmp_path):
    model = SfanetModel(tiny(sfa_kind="transformer"), seed=11)
    norm = Normalizer("unit_range", 0.0, 255.0)
    path = save_checkpoint(model, tmp_path / "ckpt", norm, extra={"epoch": 3})
    return model, norm, path


def test_roundtrip_bit_exact(saved):
    model, norm, path = saved
    back, back_norm, manifest = load_checkpoint(path)
    assert back_norm == norm and manifest["extra"] == {"epoch": 3}
    assert back.cfg == model.cfg
    for (na, a), (nb, b) in zip(model.state_dict().items(), back.state_dict().items()):
        assert na == nb and a.dtype == b.dtype
        assert a.numpy().tobytes() == b.numpy().tobytes()
    x = torch.rand(1, 2, 1, 8, 8)
    with torch.no_grad():
        assert torch.equal(model(x), back(x))


def test_double_precision_roundtrip(tmp_path):
    model = SfanetModel(tiny(), seed=2).double()
    back, norm, _ = load_checkpoint(save_checkpoint(model, tmp_path / "c"))
    assert norm is None
    for a, b in zip(model.state_dict().values(), back.state_dict().values()):
        assert b.dtype == torch.float64 and torch.equal(a, b)


def test_resave_is_byte_identical(saved, tmp_path):
    _, norm, path = saved
    back, _, _ = load_checkpoint(path)
    again = save_checkpoint(back, tmp_path / "again", norm, extra={"epoch": 3})
    assert (again / PAYLOAD).read_bytes() == (path / PAYLOAD).read_bytes()
    assert (again / MANIFEST).read_text() == (path / MANIFEST).read_text()


def _edit_manifest(path, fn):
    doc = json.loads((path / MANIFEST).read_text())
    fn(doc)
    (path / MANIFEST).write_text(json.dumps(doc))


def test_missing_manifest(tmp_path):
    with pytest.raises(FormatError, match="manifest"):
        load_checkpoint(tmp_path)


def test_invalid_json(saved):
    _, _, path = saved
    (path / MANIFEST).write_text("{not json")
    with pytest.raises(FormatError):
        read_manifest(path)


def test_wrong_format_tag(saved):
    _, _, path = saved
    _edit_manifest(path, lambda d: d.update(version=99))
    with pytest.raises(FormatError, match="version"):
        load_checkpoint(path)


def test_truncated_payload(saved):
    _, _, path = saved
    raw = (path / PAYLOAD).read_bytes()
    (path / PAYLOAD).write_bytes(raw[:-8])
    with pytest.raises(FormatError, match="payload"):
        load_checkpoint(path)


def test_shape_mismatch(saved):
    _, _, path = saved
    _edit_manifest(path, lambda d: d["parameters"][0].update(shape=[1, 2, 3]))
    with pytest.raises(FormatError, match="shape"):
        load_checkpoint(path)


def test_missing_parameter(saved):
    _, _, path = saved
    _edit_manifest(path, lambda d: d["parameters"].pop())
    with pytest.raises(FormatError, match="missing"):
        load_checkpoint(path)


def test_offset_out_of_range(saved):
    _, _, path = saved

    def push(d):
        d["parameters"][-1]["offset"] = d["payload_bytes"]

    _edit_manifest(path, push)
    with pytest.raises(FormatError, match="byte range"):
        load_checkpoint(path)


def test_config_rejects_unknown_key(saved):
    _, _, path = saved
    _edit_manifest(path, lambda d: d["config"].update(bogus=1))
    with pytest.raises(Exception, match="bogus"):
        load_checkpoint(path)


def test_default_config_checkpoint(tmp_path):
    model = SfanetModel(ModelConfig(), seed=0)
    back, _, manifest = load_checkpoint(save_checkpoint(model, tmp_path / "d"))
    assert manifest["payload_bytes"] == 4 * sum(t.numel() for t in model.state_dict().values())
    assert all(torch.equal(a, b) for a, b in zip(model.state_dict().values(),
                                                  back.state_dict().values()))
