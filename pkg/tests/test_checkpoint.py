import struct

import numpy as np
import pytest

from imlp import checkpoint
from imlp.buffer import FeatureBuffer
from imlp.errors import SchemaError
from imlp.model import ImlpConfig, forward, init_params


@pytest.mark.parametrize("fill,fc2_bias", [(0, True), (2, True), (3, False)])
def test_round_trip_is_bitwise(tmp_path, fill, fc2_bias):
    cfg = ImlpConfig(d_in=3, n_classes=2, d_h=4, d_ff=5, window=3, fc2_bias=fc2_bias)
    params = init_params(cfg, 11)
    rng = np.random.default_rng(0)
    buf = cfg.new_buffer()
    for _ in range(fill):
        buf.push(rng.normal(size=4))
    path = tmp_path / "ck.bin"
    checkpoint.save(path, params, buf, optimizer_step=17)
    p2, b2, step = checkpoint.load(path)
    assert p2.config == cfg and p2.equal(params) and step == 17
    assert len(b2) == fill and b2.capacity == 3
    assert all(np.array_equal(a, b) for a, b in zip(b2.entries, buf.entries))
    x = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(forward(p2, x, b2).probs, forward(params, x, buf).probs)


def test_layout_header_fields():
    cfg = ImlpConfig(d_in=2, n_classes=2, d_h=3, d_ff=4, window=2)
    blob = checkpoint.dumps(init_params(cfg, 0), FeatureBuffer(2, 3))
    assert blob[:8] == b"IMLPCKPT"
    version, hlen = struct.unpack_from("<II", blob, 8)
    assert version == 1
    n_values = sum(int(np.prod(s)) for s in cfg.param_shapes().values())
    n_params = len(cfg.param_shapes())
    assert len(blob) == 16 + hlen + 8 * n_params + 8 * n_values + 12 + 8 * 2 * 3


def test_rejects_foreign_bytes():
    with pytest.raises(SchemaError):
        checkpoint.loads(b"NOTACKPT" + b"\0" * 16)
