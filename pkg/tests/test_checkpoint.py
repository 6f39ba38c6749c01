import json
import struct
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwoa import checkpoint
from pwoa.admm import AdmmState, SparsityPlan, extract_mask
from pwoa.errors import FormatError, IntegrityError
from pwoa.nn import SGD, GradientSet, NetworkModel


def random_model(rng):
    depth = int(rng.integers(1, 4))
    sizes = [int(s) for s in rng.integers(1, 9, depth + 1)]
    return NetworkModel.init(sizes, seed=int(rng.integers(0, 2 ** 31)))


def rewrite(blob, fn):
    """Decode the manifest, let ``fn`` mutate it, re-encode."""
    n = struct.unpack("<Q", blob[8:16])[0]
    manifest = json.loads(blob[16:16 + n])
    payload = blob[16 + n:]
    payload = fn(manifest, payload) or payload
    m = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return blob[:8] + struct.pack("<Q", len(m)) + m + payload


def test_envelope_header():
    blob = checkpoint.to_bytes(NetworkModel.init([2, 3], seed=0))
    assert blob[:4] == b"PWOA"
    assert struct.unpack("<I", blob[4:8])[0] == checkpoint.FORMAT_VERSION


def test_hundred_models_roundtrip_byte_identical(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(100):
        model = random_model(rng)
        mask = extract_mask(model, SparsityPlan.uniform(model, float(rng.uniform(1, 5))))
        for obj in (model, mask):
            p, q = tmp_path / "a.pwoa", tmp_path / "b.pwoa"
            checkpoint.save(obj, p)
            checkpoint.save(checkpoint.load(p), q)
            assert p.read_bytes() == q.read_bytes()


def test_values_survive_roundtrip(tmp_path):
    model = NetworkModel.init([3, 4, 2], seed=1)
    model.layers[0].weight[0, 0] = -0.0
    back = checkpoint.from_bytes(checkpoint.to_bytes(model))
    for a, b in zip(model.layers, back.layers):
        assert a.weight.tobytes() == b.weight.tobytes() and a.activation == b.activation
    state = AdmmState.init(model, SparsityPlan.uniform(model, 2.0), rho=0.05)
    state.admm_iter = 3
    s2 = checkpoint.from_bytes(checkpoint.to_bytes(state))
    assert s2.rho == state.rho and s2.admm_iter == 3
    opt = SGD(model)
    opt.step(model, GradientSet.zeros_like(model).scale(0.0), 0.1)
    o2 = checkpoint.from_bytes(checkpoint.to_bytes(opt))
    assert checkpoint.to_bytes(o2) == checkpoint.to_bytes(opt)


def test_corruption_is_rejected():
    model = NetworkModel.init([3, 4, 2], seed=1)
    blob = checkpoint.to_bytes(model)
    with pytest.raises(FormatError):
        checkpoint.from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(FormatError) as info:
        checkpoint.from_bytes(blob[:-3])
    assert info.value.section == "layer1.bias"
    with pytest.raises(FormatError, match="trailing"):
        checkpoint.from_bytes(blob + b"\0")


def test_mask_popcount_mismatch_is_integrity_error():
    model = NetworkModel.init([3, 4, 2], seed=1)
    blob = checkpoint.to_bytes(extract_mask(model, SparsityPlan.uniform(model, 2.0)))

    def bump(manifest, payload):
        manifest["meta"]["popcounts"][0] += 1

    with pytest.raises(IntegrityError):
        checkpoint.from_bytes(rewrite(blob, bump))


def test_unknown_sections():
    model = NetworkModel.init([2, 2], seed=1)
    blob = checkpoint.to_bytes(model)

    def add(optional):
        def fn(manifest, payload):
            manifest["sections"].append({"name": "extra", "dtype": "u8", "shape": [2], "nbytes": 2,
                                         "optional": optional})
            return payload + b"\1\2"
        return fn

    with pytest.warns(UserWarning):
        checkpoint.from_bytes(rewrite(blob, add(True)))
    with pytest.raises(FormatError, match="unexpected section"):
        checkpoint.from_bytes(rewrite(blob, add(False)))


def test_load_kind_check(tmp_path):
    model = NetworkModel.init([2, 2], seed=1)
    checkpoint.save(model, tmp_path / "m")
    with pytest.raises(FormatError):
        checkpoint.load_mask(tmp_path / "m")
    assert isinstance(checkpoint.load_model(tmp_path / "m"), NetworkModel)
    assert not list(tmp_path.glob("*.tmp*"))


@settings(max_examples=50, deadline=None)
@given(st.binary(max_size=64))
def test_garbage_never_crashes_uncontrolled(blob):
    try:
        checkpoint.from_bytes(b"PWOA" + blob)
    except FormatError:
        pass


def test_newer_version_names_itself():
    model = NetworkModel.init([2, 2], seed=1)
    blob = checkpoint.to_bytes(model)
    bumped = blob[:4] + struct.pack("<I", checkpoint.FORMAT_VERSION + 1) + blob[8:]
    with pytest.warns(UserWarning, match="newer"):
        checkpoint.from_bytes(bumped)

    def add(manifest, payload):
        manifest["sections"].append({"name": "future", "dtype": "u8", "shape": [1], "nbytes": 1})
        return payload + b"\0"

    future = rewrite(blob, add)
    future = future[:4] + struct.pack("<I", checkpoint.FORMAT_VERSION + 1) + future[8:]
    with pytest.raises(FormatError, match="too new"):
        checkpoint.from_bytes(future)
