import numpy as np
import pytest

from slimmatch import io as sio
from slimmatch.matching import MatchSet
from slimmatch.pipeline import init_model, tiny_config
from slimmatch.synth import make_pair


class TestPgm:
    def test_round_trip(self, tmp_path):
        img = np.linspace(0, 1, 64 * 48).reshape(48, 64)
        path = tmp_path / "img.pgm"
        sio.write_pgm(path, img)
        back = sio.read_pgm(path)
        assert back.shape == (48, 64)
        assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-12

    def test_quantized_round_trip_exact(self, tmp_path):
        img = np.arange(256).reshape(16, 16) / 255.0
        path = tmp_path / "img.pgm"
        sio.write_pgm(path, img)
        sio.write_pgm(tmp_path / "again.pgm", sio.read_pgm(path))
        assert (tmp_path / "img.pgm").read_bytes() == (tmp_path / "again.pgm").read_bytes()

    def test_comment_in_header(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 2\n255\n\x00\x40\x80\xff")
        img = sio.read_pgm(path)
        assert img.shape == (2, 2)
        assert img[1, 1] == 1.0

    def test_malformed_rejected(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P2\n2 2\n255\n0 0 0 0")
        with pytest.raises(sio.FileFormatError):
            sio.read_pgm(path)
        path.write_bytes(b"P5\n4 4\n255\nshort")
        with pytest.raises(sio.FileFormatError):
            sio.read_pgm(path)


class TestDatasetLayout:
    def test_scene_round_trip(self, tmp_path):
        scene = make_pair(32, 32, 3)
        d = sio.write_scene(tmp_path, 0, scene)
        assert d.name == "pair_00000"
        h = sio.read_homography(d / "h.txt")
        np.testing.assert_array_equal(h, scene.h_mat)
        a = sio.read_pgm(d / "a.pgm")
        assert np.abs(a - scene.image_a).max() <= 0.5 / 255.0 + 1e-12

    def test_rewrite_is_byte_identical(self, tmp_path):
        scene = make_pair(32, 32, 4)
        sio.write_scene(tmp_path / "one", 0, scene)
        sio.write_scene(tmp_path / "two", 0, scene)
        for name in ("a.pgm", "b.pgm", "h.txt"):
            b1 = (tmp_path / "one" / "pair_00000" / name).read_bytes()
            b2 = (tmp_path / "two" / "pair_00000" / name).read_bytes()
            assert b1 == b2

    def test_list_pair_dirs_sorted(self, tmp_path):
        for i in (3, 0, 11):
            sio.write_scene(tmp_path, i, make_pair(16, 16, i))
        names = [p.name for p in sio.list_pair_dirs(tmp_path)]
        assert names == ["pair_00000", "pair_00003", "pair_00011"]


class TestMatchesTsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        m = MatchSet(points_a=rng.uniform(0, 64, (5, 2)).round(4),
                     points_b=rng.uniform(0, 64, (5, 2)).round(4),
                     confidence=rng.uniform(0, 1, 5).round(4), level="fine")
        path = tmp_path / "m.tsv"
        sio.write_matches_tsv(path, m)
        back = sio.read_matches_tsv(path)
        np.testing.assert_allclose(back.points_a, m.points_a, atol=1e-12)
        np.testing.assert_allclose(back.points_b, m.points_b, atol=1e-12)
        np.testing.assert_allclose(back.confidence, m.confidence, atol=1e-12)

    def test_empty_set_keeps_header(self, tmp_path):
        m = MatchSet(points_a=np.zeros((0, 2)), points_b=np.zeros((0, 2)),
                     confidence=np.zeros(0), level="fine")
        path = tmp_path / "empty.tsv"
        sio.write_matches_tsv(path, m)
        assert path.read_text() == sio.TSV_HEADER + "\n"
        assert len(sio.read_matches_tsv(path)) == 0

    def test_header_required(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("1\t2\t3\t4\t5\n")
        with pytest.raises(sio.FileFormatError):
            sio.read_matches_tsv(path)


class TestModelFile:
    def test_save_load_bit_exact(self, tmp_path):
        cfg = tiny_config(seed=13, layers=1)
        params = init_model(cfg)
        path = tmp_path / "model.txt"
        sio.save_model(path, params, cfg)
        loaded, cfg2 = sio.load_model(path)
        assert cfg2 == cfg
        for (n1, l1), (n2, l2) in zip(params.named_leaves(), loaded.named_leaves()):
            assert n1 == n2
            assert np.array_equal(l1.data, l2.data), n1

    def test_truncated_model_rejected(self, tmp_path):
        cfg = tiny_config(seed=13, layers=1)
        params = init_model(cfg)
        path = tmp_path / "model.txt"
        sio.save_model(path, params, cfg)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-4]) + "\n")
        with pytest.raises(sio.FileFormatError):
            sio.load_model(path)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("something-else\n")
        with pytest.raises(sio.FileFormatError):
            sio.load_model(path)


class TestPoseFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        t = rng.standard_normal(3)
        path = tmp_path / "pair_00000.pose"
        sio.write_pose_pair(path, q, t, q, t)
        r1, t1, r2, t2 = sio.read_pose_pair(path)
        np.testing.assert_array_equal(r1, q)
        np.testing.assert_array_equal(t2, t)


class TestSvg:
    def test_parses_with_one_line_per_match(self, tmp_path):
        import xml.etree.ElementTree as ET
        rng = np.random.default_rng(2)
        m = MatchSet(points_a=rng.uniform(0, 32, (4, 2)),
                     points_b=rng.uniform(0, 32, (4, 2)),
                     confidence=rng.uniform(0, 1, 4), level="fine")
        path = tmp_path / "view.svg"
        sio.write_matches_svg(path, np.zeros((32, 32)), np.ones((32, 32)), m)
        root = ET.parse(path).getroot()
        lines = [e for e in root.iter() if e.tag.endswith("line")]
        images = [e for e in root.iter() if e.tag.endswith("image")]
        assert len(lines) == 4
        assert len(images) == 2
