// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
//
// Round-trip and determinism checks for the IO layer: hashing, gzip, NIfTI,
// CSV, PNG, and the raster text renderer.

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gbmbench/csv.hpp"
#include "gbmbench/draw.hpp"
#include "gbmbench/gzipio.hpp"
#include "gbmbench/nifti.hpp"
#include "gbmbench/png.hpp"
#include "gbmbench/sha256.hpp"
#include "gbmbench/volume.hpp"

namespace fs = std::filesystem;
using namespace gbmbench;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("gbmbench_io_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string random_bytes(size_t n, uint32_t seed) {
    std::mt19937 rng(seed);
    std::string s(n, '\0');
    for (auto& c : s) c = static_cast<char>(rng() & 0xff);
    return s;
}

}  // namespace

TEST(Io, Sha256KnownVectors) {
    EXPECT_EQ(sha256_hex(""),
              "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"),
              "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(sha256_hex("The quick brown fox jumps over the lazy dog"),
              "d7a8fbb307d7809469ca9abcb0082e4f8d5651e46d3cdb762d02d0bf37c9e592");
    // Incremental updates must agree with one-shot hashing across block joints.
    const std::string payload = random_bytes(200000, 7);
    Sha256 h;
    h.update(payload.substr(0, 63));
    h.update(payload.substr(63, 64));
    h.update(payload.substr(127));
    EXPECT_EQ(h.hex_digest(), sha256_hex(payload));
}

TEST(Io, GzipRoundTripAndDeterminism) {
    const std::string payload = random_bytes(150000, 11) + std::string(5000, 'x');
    const std::string gz1 = gzip_compress(payload);
    const std::string gz2 = gzip_compress(payload);
    EXPECT_EQ(gz1, gz2) << "same payload must compress to identical bytes";
    EXPECT_TRUE(looks_gzip(gz1));
    EXPECT_FALSE(looks_gzip(payload));
    EXPECT_EQ(gzip_decompress(gz1), payload);
    EXPECT_EQ(gzip_decompress(gzip_compress("")), "");
}

TEST(Io, NiftiWriteReadRoundTrip) {
    const fs::path dir = temp_dir("nifti");
    Volume v = Volume::zeros(5, 6, 7);
    v.spacing = {0.9, 1.1, 2.5};
    v.origin = {-3.0, 4.5, 10.25};
    std::mt19937 rng(3);
    std::uniform_real_distribution<float> d(-100.0f, 100.0f);
    for (int64_t i = 0; i < v.data.numel(); ++i) v.data.data()[i] = d(rng);

    const fs::path path = dir / "vol.nii.gz";
    write_nifti(path, v);
    const Volume r = read_nifti(path);

    ASSERT_EQ(r.nx(), 7);
    ASSERT_EQ(r.ny(), 6);
    ASSERT_EQ(r.nz(), 5);
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(r.spacing[i], v.spacing[i], 1e-6);
        EXPECT_NEAR(r.origin[i], v.origin[i], 1e-5);
    }
    for (int64_t i = 0; i < v.data.numel(); ++i)
        ASSERT_EQ(r.data.data()[i], v.data.data()[i]) << "float32 payload must round-trip exactly";

    const NiftiHeaderInfo info = read_nifti_header(path);
    EXPECT_EQ(info.nx, 7);
    EXPECT_EQ(info.ny, 6);
    EXPECT_EQ(info.nz, 5);
    EXPECT_NEAR(info.spacing[2], 2.5, 1e-6);

    // Writes are deterministic: same volume, same bytes.
    const fs::path path2 = dir / "vol2.nii.gz";
    write_nifti(path2, v);
    EXPECT_EQ(read_text_file(path), read_text_file(path2));
}

TEST(Io, NiftiReadsScaledInt16) {
    // Hand-build an uncompressed int16 file with scl_slope/inter to check the
    // datatype conversion path used for foreign inputs.
    const fs::path dir = temp_dir("nifti_i16");
    nifti_detail::Nifti1Header h;
    std::memset(&h, 0, sizeof(h));
    h.sizeof_hdr = 348;
    h.dim[0] = 3;
    h.dim[1] = 3;
    h.dim[2] = 2;
    h.dim[3] = 2;
    for (int d = 4; d < 8; ++d) h.dim[d] = 1;
    h.datatype = 4;  // int16
    h.bitpix = 16;
    h.pixdim[1] = 1.0f;
    h.pixdim[2] = 1.0f;
    h.pixdim[3] = 1.0f;
    h.vox_offset = 352.0f;
    h.scl_slope = 2.0f;
    h.scl_inter = 1.0f;
    std::memcpy(h.magic, "n+1", 4);

    std::vector<int16_t> vals(12);
    for (int i = 0; i < 12; ++i) vals[i] = static_cast<int16_t>(i - 6);
    std::string raw(352 + vals.size() * sizeof(int16_t), '\0');
    std::memcpy(raw.data(), &h, sizeof(h));
    std::memcpy(raw.data() + 352, vals.data(), vals.size() * sizeof(int16_t));
    const fs::path path = dir / "scaled.nii";
    atomic_write(path, raw);

    const Volume v = read_nifti(path);
    ASSERT_EQ(v.data.numel(), 12);
    for (int i = 0; i < 12; ++i)
        EXPECT_FLOAT_EQ(v.data.data()[i], static_cast<float>(i - 6) * 2.0f + 1.0f);
}

TEST(Io, NiftiRejectsGarbage) {
    const fs::path dir = temp_dir("nifti_bad");
    const fs::path path = dir / "bad.nii";
    atomic_write(path, std::string(400, 'z'));
    EXPECT_THROW(read_nifti(path), IOFailure);
    EXPECT_THROW(read_nifti(dir / "missing.nii.gz"), IOFailure);
}

TEST(Io, CsvQuotingRoundTrip) {
    CsvTable t;
    t.header = {"id", "note", "value"};
    t.rows = {{"a1", "plain", "3"},
              {"a2", "has,comma", "4"},
              {"a3", "has \"quotes\"", "5"},
              {"a4", "multi\nline", "6"},
              {"a5", "", "7"}};
    const std::string text = format_csv(t);
    const CsvTable r = parse_csv(text);
    ASSERT_EQ(r.header, t.header);
    ASSERT_EQ(r.rows, t.rows);
    EXPECT_EQ(r.column("note"), 1);
    EXPECT_THROW(r.column("absent"), Error);

    const fs::path dir = temp_dir("csv");
    write_csv(dir / "t.csv", t);
    EXPECT_EQ(read_csv(dir / "t.csv").rows, t.rows);
}

TEST(Io, PngRoundTripAndDeterminism) {
    const int64_t w = 33, h = 17;
    std::mt19937 rng(5);
    std::vector<uint8_t> rgb(static_cast<size_t>(w * h * 3));
    for (auto& b : rgb) b = static_cast<uint8_t>(rng() & 0xff);

    const std::string png1 = encode_png_rgb(w, h, rgb);
    const std::string png2 = encode_png_rgb(w, h, rgb);
    EXPECT_EQ(png1, png2) << "encoder must be byte-deterministic";

    const PngImage img = decode_png(png1);
    ASSERT_EQ(img.width, w);
    ASSERT_EQ(img.height, h);
    ASSERT_EQ(img.rgb, rgb);
}

TEST(Io, CanvasTextRenders) {
    Canvas c(64, 16);
    c.text(1, 1, "A1", {0, 0, 0});
    const fs::path dir = temp_dir("canvas");
    c.save(dir / "txt.png");
    const PngImage img = read_png(dir / "txt.png");
    ASSERT_EQ(img.width, 64);
    ASSERT_EQ(img.height, 16);
    // Glyph 'A' row 0 is ".###.": pixel (x=1+1, y=1) on, (x=1+0, y=1) off.
    EXPECT_EQ(img.r(1, 2), 0);
    EXPECT_EQ(img.r(1, 1), 255);
    // Advance is 6 columns: '1' starts at x=7; its row 0 is "..#..".
    EXPECT_EQ(img.r(1, 7 + 2), 0);
    EXPECT_EQ(Canvas::text_width("abc"), 17);
}

TEST(Io, CanvasPrimitivesStayInBounds) {
    Canvas c(20, 10, {10, 20, 30});
    // Off-canvas coordinates are clipped pixel-by-pixel, never written.
    c.line(-5, -5, 25, 15, {255, 0, 0});
    c.rect(-2, -2, 30, 20, {0, 255, 0});
    c.fill_rect(15, 5, 100, 100, {0, 0, 255});
    const PngImage img = decode_png(encode_png_rgb(20, 10, c.pixels()));
    EXPECT_EQ(img.b(9, 19), 255);  // fill clipped to canvas

    Canvas d(20, 10, {0, 0, 0});
    d.line(0, 0, 19, 9, {255, 0, 0});
    const PngImage img2 = decode_png(encode_png_rgb(20, 10, d.pixels()));
    EXPECT_EQ(img2.r(0, 0), 255);
    EXPECT_EQ(img2.r(9, 19), 255);
}
