"""Rain synthesis, dataset folders, patching, image codecs."""

import struct
import zlib

import numpy as np
import pytest

from transmamba.data import (DataError, RainPair, RainRecipe, flip_augment,
                             generate_dataset, load_paired_folder, make_clean_image,
                             random_patch, synthesize_rain)
from transmamba.imageio import (ImageFormatError, read_image, read_png, write_image,
                                write_png, write_ppm, read_ppm)
from transmamba.rng import Rng
from transmamba.spectral import build_mesh_index
from transmamba.tensor import Tensor


class TestSynthesizeRain:
    def test_zero_streaks_returns_clean(self):
        clean = make_clean_image(32, Rng(1))
        pair = synthesize_rain(clean, RainRecipe(streak_count=(0, 0), seed=4))
        assert np.array_equal(pair.rainy.data, pair.clean.data)

    def test_seeded_determinism_bit_exact(self):
        clean = make_clean_image(32, Rng(2))
        a = synthesize_rain(clean, RainRecipe(seed=9))
        b = synthesize_rain(clean, RainRecipe(seed=9))
        assert np.array_equal(a.rainy.data, b.rainy.data)

    def test_streaks_only_brighten(self):
        clean = make_clean_image(48, Rng(3))
        pair = synthesize_rain(clean, RainRecipe(seed=10))
        assert pair.rainy.data.mean() >= pair.clean.data.mean()
        assert np.all(pair.rainy.data >= pair.clean.data - 1e-12)

    def test_values_stay_in_unit_range(self):
        pair = synthesize_rain(make_clean_image(32, Rng(4)), RainRecipe(seed=11))
        assert pair.rainy.data.min() >= 0.0 and pair.rainy.data.max() <= 1.0

    def test_default_recipe_mass_concentrates_in_low_band(self):
        m = build_mesh_index(64, 64, 2)
        low = m.band_positions(1)
        for seed in range(4):
            clean = make_clean_image(64, Rng(20 + seed))
            pair = synthesize_rain(clean, RainRecipe(seed=30 + seed))
            field = pair.rainy.data - pair.clean.data
            spec = np.abs(np.fft.fft2(field, axes=(-2, -1))).reshape(3, -1)
            frac = spec[:, low].sum() / spec.sum()
            assert frac >= 0.6, frac

    def test_recipe_validation(self):
        with pytest.raises(ValueError):
            RainRecipe(length=(10.0, 5.0))
        with pytest.raises(ValueError):
            RainRecipe(intensity=(0.0, 0.5))


class TestPatchAndFlip:
    def _pair(self, seed=5, size=24):
        clean = make_clean_image(size, Rng(seed))
        return synthesize_rain(clean, RainRecipe(seed=seed + 100))

    def test_full_size_patch_is_identity(self):
        pair = self._pair()
        crop = random_patch(pair, 24, Rng(6))
        assert np.array_equal(crop.rainy.data, pair.rainy.data)

    def test_crop_commutes_with_residual(self):
        pair = self._pair(7)
        rng_a, rng_b = Rng(8), Rng(8)
        crop = random_patch(pair, 12, rng_a)
        res_pair = RainPair(Tensor(pair.rainy.data - pair.clean.data),
                            Tensor(np.zeros_like(pair.clean.data)), pair.id)
        res_crop = random_patch(res_pair, 12, rng_b)
        assert np.array_equal(crop.rainy.data - crop.clean.data, res_crop.rainy.data)

    def test_oversized_patch_rejected(self):
        with pytest.raises(DataError):
            random_patch(self._pair(9), 25, Rng(10))

    def test_double_horizontal_flip_is_identity(self):
        x = Rng(11).normal((3, 6, 6))
        assert np.array_equal(x[:, :, ::-1][:, :, ::-1], x)

    def test_flip_augment_keeps_alignment(self):
        pair = self._pair(12)
        flipped = flip_augment(pair, Rng(13))
        res = np.sort((flipped.rainy.data - flipped.clean.data).ravel())
        want = np.sort((pair.rainy.data - pair.clean.data).ravel())
        assert np.allclose(res, want)


class TestImageCodecs:
    def test_png_uint8_roundtrip_exact(self, tmp_path):
        img = (Rng(14).uniform((3, 9, 7)) * 255).astype(np.uint8)
        path = tmp_path / "x.png"
        write_png(path, img)
        back = read_png(path)
        assert np.array_equal((back.data * 255).round().astype(np.uint8), img)

    def test_png_quantization_bound(self, tmp_path):
        img = Rng(15).uniform((3, 8, 8))
        path = tmp_path / "y.png"
        write_png(path, img)
        assert np.max(np.abs(read_png(path).data - img)) <= 0.5 / 255.0 + 1e-12

    def test_png_decoder_handles_all_row_filters(self, tmp_path):
        """Hand-build a PNG using Sub/Up/Average/Paeth filters."""
        rng = Rng(16)
        H, W = 5, 4
        img = (rng.uniform((H, W * 3)) * 255).astype(np.uint8)

        def paeth(a, b, c):
            p = a + b - c
            pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
            if pa <= pb and pa <= pc:
                return a
            return b if pb <= pc else c

        raw = bytearray()
        prev = np.zeros(W * 3, dtype=np.int64)
        filters = [0, 1, 2, 3, 4]
        for y in range(H):
            row = img[y].astype(np.int64)
            f = filters[y]
            raw.append(f)
            for i in range(W * 3):
                left = row[i - 3] if i >= 3 else 0
                ul = prev[i - 3] if i >= 3 else 0
                if f == 0:
                    enc = row[i]
                elif f == 1:
                    enc = row[i] - left
                elif f == 2:
                    enc = row[i] - prev[i]
                elif f == 3:
                    enc = row[i] - (left + prev[i]) // 2
                else:
                    enc = row[i] - paeth(int(left), int(prev[i]), int(ul))
                raw.append(enc & 0xFF)
            prev = row

        def chunk(tag, payload):
            return struct.pack(">I", len(payload)) + tag + payload + \
                struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)

        blob = b"\x89PNG\r\n\x1a\n" + \
            chunk(b"IHDR", struct.pack(">IIBBBBB", W, H, 8, 2, 0, 0, 0)) + \
            chunk(b"IDAT", zlib.compress(bytes(raw))) + chunk(b"IEND", b"")
        path = tmp_path / "filters.png"
        path.write_bytes(blob)
        back = (read_png(path).data * 255).round().astype(np.uint8)
        assert np.array_equal(back, img.reshape(H, W, 3).transpose(2, 0, 1))

    def test_ppm_roundtrip(self, tmp_path):
        img = (Rng(17).uniform((3, 6, 5)) * 255).astype(np.uint8)
        path = tmp_path / "z.ppm"
        write_ppm(path, img)
        assert np.array_equal((read_ppm(path).data * 255).round().astype(np.uint8), img)

    def test_unsupported_png_flavors_rejected(self, tmp_path):
        path = tmp_path / "bad.png"
        path.write_bytes(b"nonsense")
        with pytest.raises(ImageFormatError):
            read_png(path)

    def test_unknown_extension_rejected(self, tmp_path):
        with pytest.raises(ImageFormatError):
            read_image(tmp_path / "img.jpg")


class TestPairedFolders:
    def test_empty_dirs_give_empty_list(self, tmp_path):
        (tmp_path / "rain").mkdir()
        (tmp_path / "clean").mkdir()
        assert load_paired_folder(tmp_path / "rain", tmp_path / "clean") == []

    def test_missing_counterpart_named_in_error(self, tmp_path):
        (tmp_path / "rain").mkdir()
        (tmp_path / "clean").mkdir()
        write_image(tmp_path / "rain" / "0001.png", Rng(18).uniform((3, 8, 8)))
        with pytest.raises(DataError, match="0001.png"):
            load_paired_folder(tmp_path / "rain", tmp_path / "clean")

    def test_pair_roundtrip_within_quantization(self, tmp_path):
        pair = synthesize_rain(make_clean_image(16, Rng(19)), RainRecipe(seed=42))
        (tmp_path / "rain").mkdir()
        (tmp_path / "clean").mkdir()
        write_image(tmp_path / "rain" / "0000.png", pair.rainy)
        write_image(tmp_path / "clean" / "0000.png", pair.clean)
        (loaded,) = load_paired_folder(tmp_path / "rain", tmp_path / "clean")
        assert loaded.id == "0000"
        assert np.max(np.abs(loaded.rainy.data - pair.rainy.data)) <= 1.0 / 255.0


class TestGenerateDataset:
    def test_writes_paired_layout_and_reloads(self, tmp_path):
        pairs = generate_dataset(tmp_path, 3, RainRecipe(), seed=7, size=24)
        assert len(pairs) == 3
        loaded = load_paired_folder(tmp_path / "rain", tmp_path / "clean")
        assert [p.id for p in loaded] == ["0000", "0001", "0002"]
        for mem, disk in zip(pairs, loaded):
            assert np.max(np.abs(mem.rainy.data - disk.rainy.data)) <= 1.0 / 255.0

    def test_same_seed_identical_bytes(self, tmp_path):
        generate_dataset(tmp_path / "a", 2, RainRecipe(), seed=5, size=16)
        generate_dataset(tmp_path / "b", 2, RainRecipe(), seed=5, size=16)
        for name in ("rain/0000.png", "clean/0001.png"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
