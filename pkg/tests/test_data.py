"""SplitMix64 reference values, scene synthesis, netpbm and DRT1 round-trips."""
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from drnet.container import load_tensors, save_tensors
from drnet.data import (
    generate_dataset,
    load_dataset,
    load_manifest,
    load_pgm16,
    load_ppm,
    save_pgm16,
    save_ppm,
    synth_arrays,
    synth_scene,
)
from drnet.errors import FormatError, HeaderError, MaxvalError, ShapeError, TruncatedError
from drnet.losses import sobel_gradients
from drnet.rng import SplitMix64, splitmix64
from drnet.tensor import Tensor

M64 = (1 << 64) - 1


def splitmix_int(seed, n):
    """Pure Python big-int reference, independent of numpy's uint64 wrapping."""
    out, s = [], seed
    for _ in range(n):
        s = (s + 0x9E3779B97F4A7C15) & M64
        z = s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        out.append(z ^ (z >> 31))
    return out


class TestSplitMix64:
    def test_published_reference_values(self):
        # first outputs of the reference C implementation for seed 1234567
        assert splitmix64(1234567, 5).tolist() == [
            6457827717110365317,
            3203168211198807973,
            9817491932198370423,
            4593380528125082431,
            16408922859458223821,
        ]

    @pytest.mark.parametrize("seed", [0, 1, 42, 2**63 + 5, M64])
    def test_matches_big_int_reference(self, seed):
        assert splitmix64(seed, 50).tolist() == splitmix_int(seed, 50)

    def test_offset_continues_stream(self):
        full = splitmix64(9, 10)
        np.testing.assert_array_equal(splitmix64(9, 4, offset=6), full[6:])
        g = SplitMix64(9)
        np.testing.assert_array_equal(np.concatenate([g.next_u64(3), g.next_u64(7)]), full)

    def test_uniform_range(self):
        u = SplitMix64(3).uniform(-2.0, 5.0, (1000,))
        assert u.min() >= -2.0 and u.max() < 5.0
        assert abs(u.mean() - 1.5) < 0.3


class TestSynthScene:
    def test_deterministic(self):
        a, b = synth_scene(11, 64, 96), synth_scene(11, 64, 96)
        np.testing.assert_array_equal(a.rgb, b.rgb)
        np.testing.assert_array_equal(a.depth, b.depth)
        assert a.rgb.shape == (1, 3, 64, 96) and a.depth.shape == (1, 1, 64, 96)

    def test_seeds_differ(self):
        assert not np.array_equal(synth_scene(1, 32, 32).depth, synth_scene(2, 32, 32).depth)

    @pytest.mark.parametrize("seed", range(6))
    def test_ranges(self, seed):
        s = synth_scene(seed, 64, 64)
        assert s.depth.min() >= 0.5 and s.depth.max() <= 10.0
        assert s.rgb.min() >= 0.0 and s.rgb.max() <= 1.0

    def test_rgb_is_eight_bit(self):
        s = synth_scene(4, 32, 32)
        levels = s.rgb.astype(np.float64) * 255
        np.testing.assert_allclose(levels, np.round(levels), atol=1e-4)

    def test_zero_objects_is_plane(self):
        s = synth_scene(5, 64, 64, n_objects=0)
        gx, gy = sobel_gradients(Tensor(s.depth.astype(np.float64)))
        ix, iy = gx.data[0, 0, 1:-1, 1:-1], gy.data[0, 0, 1:-1, 1:-1]
        np.testing.assert_allclose(ix, ix.mean(), atol=1e-5)
        np.testing.assert_allclose(iy, iy.mean(), atol=1e-5)

    def test_objects_break_the_plane(self):
        s = synth_scene(5, 64, 64)
        gx, _ = sobel_gradients(Tensor(s.depth.astype(np.float64)))
        assert np.ptp(gx.data[0, 0, 1:-1, 1:-1]) > 1e-2

    def test_size_precondition(self):
        with pytest.raises(ShapeError):
            synth_scene(0, 48, 64)


class TestNetpbm:
    def test_ppm_round_trip(self, tmp_path, rng):
        x = rng.random((1, 3, 5, 7))
        save_ppm(tmp_path / "a.ppm", x)
        y = load_ppm(tmp_path / "a.ppm")
        np.testing.assert_array_equal(y, (np.round(x * 255) / 255).astype(np.float32))
        save_ppm(tmp_path / "b.ppm", y)
        assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()

    def test_ppm_layout(self, tmp_path):
        x = np.zeros((3, 1, 2))
        x[0, 0, 0] = 1.0  # red top-left
        x[2, 0, 1] = 1.0  # blue top-right
        save_ppm(tmp_path / "c.ppm", x)
        assert (tmp_path / "c.ppm").read_bytes() == b"P6\n2 1\n255\n\xff\x00\x00\x00\x00\xff"

    def test_pgm_millimeters(self, tmp_path):
        save_pgm16(tmp_path / "d.pgm", np.array([[1.234]]))
        raw = (tmp_path / "d.pgm").read_bytes()
        assert raw == b"P5\n1 1\n65535\n" + struct.pack(">H", 1234)
        assert load_pgm16(tmp_path / "d.pgm")[0, 0, 0, 0] == np.float32(1.234)

    @settings(max_examples=25, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(0.5, 10.0)))
    def test_pgm_round_trip_to_millimeter(self, tmp_path_factory, depth):
        p = tmp_path_factory.mktemp("pgm") / "d.pgm"
        save_pgm16(p, depth)
        back = load_pgm16(p)[0, 0].astype(np.float64)
        np.testing.assert_allclose(back, np.round(depth * 1000) / 1000, atol=1e-6)

    def test_header_comments(self, tmp_path):
        (tmp_path / "e.pgm").write_bytes(b"P5\n# made by hand\n1 1\n65535\n" + struct.pack(">H", 500))
        assert load_pgm16(tmp_path / "e.pgm")[0, 0, 0, 0] == np.float32(0.5)

    def test_distinct_errors(self, tmp_path):
        good = tmp_path / "g.ppm"
        save_ppm(good, np.zeros((3, 2, 2)))
        raw = good.read_bytes()
        (tmp_path / "trunc.ppm").write_bytes(raw[:-1])
        (tmp_path / "magic.ppm").write_bytes(b"P3" + raw[2:])
        (tmp_path / "max.ppm").write_bytes(raw.replace(b"255", b"127", 1))
        (tmp_path / "junk.ppm").write_bytes(b"P6\nxx 2\n255\n")
        with pytest.raises(TruncatedError):
            load_ppm(tmp_path / "trunc.ppm")
        with pytest.raises(HeaderError):
            load_ppm(tmp_path / "magic.ppm")
        with pytest.raises(MaxvalError):
            load_ppm(tmp_path / "max.ppm")
        with pytest.raises(HeaderError):
            load_ppm(tmp_path / "junk.ppm")

    def test_pgm_wrong_maxval(self, tmp_path):
        (tmp_path / "m.pgm").write_bytes(b"P5\n1 1\n255\n\x01")
        with pytest.raises(MaxvalError):
            load_pgm16(tmp_path / "m.pgm")


class TestDataset:
    def test_generate_and_load(self, tmp_path):
        generate_dataset(tmp_path, 3, 32, 64, seed=9, split="val")
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest[0] == {"rgb": "rgb_00000.ppm", "depth": "depth_00000.pgm"}
        meta = json.loads((tmp_path / "dataset.json").read_text())
        assert meta == {"split": "val", "seed": 9, "count": 3, "size": [32, 64]}
        assert all(a.exists() and b.exists() for a, b in load_manifest(tmp_path))
        rgb, depth = load_dataset(tmp_path)
        mem_rgb, mem_depth = synth_arrays(3, 32, 64, seed=9)
        np.testing.assert_array_equal(rgb, mem_rgb)
        np.testing.assert_array_equal(depth, mem_depth)

    def test_bad_manifest(self, tmp_path):
        (tmp_path / "manifest.json").write_text(json.dumps([{"rgb": "a.ppm"}]))
        with pytest.raises(FormatError):
            load_manifest(tmp_path)
        with pytest.raises(FormatError):
            load_manifest(tmp_path / "missing")


class TestContainer:
    def test_round_trip(self, tmp_path, rng):
        tensors = {"a.weight": rng.standard_normal((2, 3, 1, 1)).astype(np.float32),
                   "b": np.array([1.5], dtype=np.float32), "scalar": np.float32(2.0).reshape(()),
                   "ünï": np.zeros((0, 4), dtype=np.float32)}
        save_tensors(tmp_path / "t.drt", tensors)
        back = load_tensors(tmp_path / "t.drt")
        assert list(back) == list(tensors)
        for k in tensors:
            assert back[k].shape == tensors[k].shape
            np.testing.assert_array_equal(back[k], tensors[k])

    def test_byte_layout(self, tmp_path):
        save_tensors(tmp_path / "x.drt", {"w": np.array([[1.0, -2.0]], dtype=np.float32)})
        want = b"DRT1" + struct.pack("<I", 1) + struct.pack("<I", 1) + b"w" + struct.pack("<3I", 2, 1, 2)
        want += struct.pack("<2f", 1.0, -2.0)
        assert (tmp_path / "x.drt").read_bytes() == want

    def test_errors(self, tmp_path):
        save_tensors(tmp_path / "x.drt", {"w": np.ones((2, 2), dtype=np.float32)})
        raw = (tmp_path / "x.drt").read_bytes()
        (tmp_path / "magic.drt").write_bytes(b"DRT2" + raw[4:])
        (tmp_path / "short.drt").write_bytes(raw[:-3])
        (tmp_path / "long.drt").write_bytes(raw + b"\0")
        with pytest.raises(HeaderError):
            load_tensors(tmp_path / "magic.drt")
        with pytest.raises(TruncatedError):
            load_tensors(tmp_path / "short.drt")
        with pytest.raises(FormatError, match="trailing"):
            load_tensors(tmp_path / "long.drt")
