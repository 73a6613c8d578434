#include <gtest/gtest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>

#include "conecraft/datakit.hpp"

using namespace conecraft;
using namespace conecraft::datakit;

namespace {

void write_be32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    f.write(reinterpret_cast<char*>(b), 4);
}

std::filesystem::path write_idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                                       const std::vector<std::uint8_t>& payload,
                                       std::uint32_t magic = kIdxImagesMagic) {
    const auto path = std::filesystem::temp_directory_path() /
                      ("conecraft_idx_" + std::to_string(n) + "_" + std::to_string(magic) + ".bin");
    std::ofstream f(path, std::ios::binary);
    write_be32(f, magic);
    write_be32(f, n);
    write_be32(f, rows);
    write_be32(f, cols);
    f.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    return path;
}

}  // namespace

TEST(LoadIdx, ParsesAndSplits) {
    std::vector<std::uint8_t> payload(12 * 4, 0);
    for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<std::uint8_t>(i % 256);
    auto path = write_idx_images(12, 2, 2, payload);
    Dataset ds = load_idx(path, std::nullopt, Domain::pm1, 3);
    EXPECT_EQ(ds.n(), 12u);
    EXPECT_EQ(ds.d(), 4u);
    EXPECT_EQ(ds.n_train, 9u);
    EXPECT_EQ(ds.n_val, 3u);
    EXPECT_EQ(ds.side, 2u);
    std::filesystem::remove(path);
}

TEST(LoadIdx, ByteExtremesMapToDomainEnds) {
    std::vector<std::uint8_t> payload = {0, 255, 128, 64};
    auto path = write_idx_images(1, 2, 2, payload);
    Dataset pm = load_idx(path, std::nullopt, Domain::pm1, 0);
    EXPECT_DOUBLE_EQ(pm.images.data[0], -1.0);
    EXPECT_DOUBLE_EQ(pm.images.data[1], 1.0);
    Dataset zo = load_idx(path, std::nullopt, Domain::zero_one, 0);
    EXPECT_DOUBLE_EQ(zo.images.data[0], 0.0);
    EXPECT_DOUBLE_EQ(zo.images.data[1], 1.0);
    std::filesystem::remove(path);
}

TEST(LoadIdx, BadMagicAndTruncation) {
    std::vector<std::uint8_t> payload(4, 7);
    auto bad = write_idx_images(1, 2, 2, payload, 0x00000901);
    EXPECT_THROW(load_idx(bad), BadMagic);
    std::filesystem::remove(bad);

    auto trunc = write_idx_images(2, 2, 2, payload);  // promises 8 bytes, has 4
    EXPECT_THROW(load_idx(trunc), TruncatedFile);
    std::filesystem::remove(trunc);
}

TEST(LoadIdx, LabelCountMismatch) {
    std::vector<std::uint8_t> payload(8, 1);
    auto imgs = write_idx_images(2, 2, 2, payload);
    const auto lbl = std::filesystem::temp_directory_path() / "conecraft_idx_labels.bin";
    {
        std::ofstream f(lbl, std::ios::binary);
        write_be32(f, kIdxLabelsMagic);
        write_be32(f, 5);  // wrong count
        const char z[5] = {0};
        f.write(z, 5);
    }
    EXPECT_THROW(load_idx(imgs, lbl), DimensionMismatch);
    std::filesystem::remove(imgs);
    std::filesystem::remove(lbl);
}

TEST(Pixels, ByteRoundTripIsExact) {
    for (int b = 0; b < 256; ++b) {
        const auto byte = static_cast<std::uint8_t>(b);
        EXPECT_EQ(pixel_to_byte(byte_to_pixel(byte, Domain::pm1), Domain::pm1), byte);
        EXPECT_EQ(pixel_to_byte(byte_to_pixel(byte, Domain::zero_one), Domain::zero_one), byte);
    }
}

TEST(Synthetic, DeterministicAndInBounds) {
    Dataset a = synthetic_dataset(16, 50, 42);
    Dataset b = synthetic_dataset(16, 50, 42);
    EXPECT_EQ(a.images.data, b.images.data);  // bit-identical
    EXPECT_EQ(a.n(), 50u);
    EXPECT_EQ(a.d(), 256u);
    double mx = 0;
    for (double v : a.images.data) {
        EXPECT_LE(std::abs(v), 1.0);
        mx = std::max(mx, std::abs(v));
    }
    EXPECT_DOUBLE_EQ(mx, 1.0);  // rescaled to touch the boundary

    Dataset c = synthetic_dataset(16, 10, 43);
    EXPECT_NE(c.images.data, a.rows(0, 10).data);
}

TEST(Synthetic, ZeroOneDomain) {
    Dataset ds = synthetic_dataset(8, 20, 1, Domain::zero_one);
    for (double v : ds.images.data) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Synthetic, SplitsSumAndAreDisjoint) {
    Dataset ds = synthetic_splits(8, 30, 5, 7, 9);
    EXPECT_EQ(ds.n_train + ds.n_val + ds.n_test, ds.n());
    // disjointness is structural (contiguous ranges); check shapes
    EXPECT_EQ(ds.train().rows(), 30u);
    EXPECT_EQ(ds.val().rows(), 5u);
    EXPECT_EQ(ds.test().rows(), 7u);
}

TEST(Batches, SizesAndCoverage) {
    auto groups = batches(10, 4, 0, 0);
    ASSERT_EQ(groups.size(), 3u);
    EXPECT_EQ(groups[0].size(), 4u);
    EXPECT_EQ(groups[1].size(), 4u);
    EXPECT_EQ(groups[2].size(), 2u);
    std::set<std::size_t> seen;
    for (const auto& g : groups) seen.insert(g.begin(), g.end());
    EXPECT_EQ(seen.size(), 10u);
    EXPECT_EQ(*seen.begin(), 0u);
    EXPECT_EQ(*seen.rbegin(), 9u);
}

TEST(Batches, DeterministicPerSeedAndEpoch) {
    auto a = batches(100, 16, 7, 3);
    auto b = batches(100, 16, 7, 3);
    EXPECT_EQ(a, b);
    auto c = batches(100, 16, 7, 4);
    EXPECT_NE(a, c);  // different epoch, different shuffle
    auto d = batches(100, 16, 8, 3);
    EXPECT_NE(a, d);  // different seed
}

TEST(Batches, GatherRowsRespectsOffset) {
    Dataset ds = synthetic_splits(4, 6, 2, 0, 5);
    tensorkit::Tensor v = gather_rows(ds.images, {0, 1}, ds.n_train);
    tensorkit::Tensor direct = ds.val();
    EXPECT_EQ(v.data, direct.data);
}
