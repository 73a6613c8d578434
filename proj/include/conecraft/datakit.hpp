#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "conecraft/common.hpp"
#include "conecraft/rng.hpp"
#include "conecraft/tensor.hpp"

namespace conecraft::datakit {

using tensorkit::Tensor;

enum class Domain { pm1, zero_one };

inline Domain domain_from_string(const std::string& s) {
    if (s == "pm1" || s == "[-1,1]") return Domain::pm1;
    if (s == "01" || s == "[0,1]") return Domain::zero_one;
    throw ConfigError("unknown pixel domain: " + s);
}

inline double byte_to_pixel(std::uint8_t b, Domain dom) {
    return dom == Domain::pm1 ? 2.0 * static_cast<double>(b) / 255.0 - 1.0
                              : static_cast<double>(b) / 255.0;
}

inline std::uint8_t pixel_to_byte(double p, Domain dom) {
    const double raw = dom == Domain::pm1 ? (p + 1.0) * 255.0 / 2.0 : p * 255.0;
    const double clamped = std::min(255.0, std::max(0.0, raw));
    return static_cast<std::uint8_t>(std::lround(clamped));
}

/// Images as rows, split contiguously into [train | val | test].
struct Dataset {
    Tensor images;  // n x d
    std::size_t n_train = 0;
    std::size_t n_val = 0;
    std::size_t n_test = 0;
    std::size_t side = 0;
    Domain domain = Domain::pm1;

    std::size_t n() const { return images.rows(); }
    std::size_t d() const { return images.cols(); }

    Tensor rows(std::size_t begin, std::size_t count) const {
        Tensor out = Tensor::zeros({count, d()});
        std::copy(images.data.begin() + static_cast<std::ptrdiff_t>(begin * d()),
                  images.data.begin() + static_cast<std::ptrdiff_t>((begin + count) * d()),
                  out.data.begin());
        return out;
    }

    Tensor train() const { return rows(0, n_train); }
    Tensor val() const { return rows(n_train, n_val); }
    Tensor test() const { return rows(n_train + n_val, n_test); }
};

namespace detail {

inline std::uint32_t read_be32(std::istream& f, const std::string& what) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (f.gcount() != 4) throw TruncatedFile("unexpected end of file reading " + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Parse a big-endian IDX image file (optionally validating a matching label
/// file) and split off the last `val_count` rows as the validation set.
inline Dataset load_idx(const std::filesystem::path& images_path,
                        const std::optional<std::filesystem::path>& labels_path = std::nullopt,
                        Domain domain = Domain::pm1, std::size_t val_count = 0) {
    std::ifstream f(images_path, std::ios::binary);
    if (!f) throw Error("cannot open: " + images_path.string());
    const std::uint32_t magic = detail::read_be32(f, "magic");
    if (magic != kIdxImagesMagic) {
        throw BadMagic("not an IDX image file (magic mismatch): " + images_path.string());
    }
    const std::uint32_t n = detail::read_be32(f, "count");
    const std::uint32_t rows = detail::read_be32(f, "rows");
    const std::uint32_t cols = detail::read_be32(f, "cols");
    if (rows == 0 || cols == 0) throw ParseError("IDX image dims are zero");
    const std::size_t d = static_cast<std::size_t>(rows) * cols;

    std::vector<std::uint8_t> buf(static_cast<std::size_t>(n) * d);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (f.gcount() != static_cast<std::streamsize>(buf.size())) {
        throw TruncatedFile("IDX payload shorter than header promises: " + images_path.string());
    }

    if (labels_path) {
        std::ifstream lf(*labels_path, std::ios::binary);
        if (!lf) throw Error("cannot open: " + labels_path->string());
        const std::uint32_t lmagic = detail::read_be32(lf, "label magic");
        if (lmagic != kIdxLabelsMagic) {
            throw BadMagic("not an IDX label file (magic mismatch): " + labels_path->string());
        }
        const std::uint32_t ln = detail::read_be32(lf, "label count");
        if (ln != n) throw DimensionMismatch("label count != image count");
    }

    Dataset ds;
    ds.domain = domain;
    ds.side = rows == cols ? rows : 0;
    ds.images = Tensor::zeros({n, d});
    for (std::size_t i = 0; i < buf.size(); ++i) ds.images.data[i] = byte_to_pixel(buf[i], domain);
    if (val_count > n) throw DimensionMismatch("validation split larger than dataset");
    ds.n_val = val_count;
    ds.n_train = n - val_count;
    ds.n_test = 0;
    return ds;
}

/// Deterministic low-frequency images: a positive DC component plus a few
/// random 2-d cosines, rescaled per image so the extreme pixel exactly
/// touches the domain boundary.
inline Dataset synthetic_dataset(std::size_t side, std::size_t n, std::uint64_t seed,
                                 Domain domain = Domain::pm1, std::size_t n_waves = 3) {
    Dataset ds;
    ds.domain = domain;
    ds.side = side;
    const std::size_t d = side * side;
    ds.images = Tensor::zeros({n, d});
    Rng rng(seed);
    for (std::size_t img = 0; img < n; ++img) {
        const double dc = rng.uniform(0.4, 0.9);
        std::vector<double> fx(n_waves), fy(n_waves), amp(n_waves), phase(n_waves);
        for (std::size_t w = 0; w < n_waves; ++w) {
            do {
                fx[w] = static_cast<double>(rng.below(3));
                fy[w] = static_cast<double>(rng.below(3));
            } while (fx[w] == 0.0 && fy[w] == 0.0);
            amp[w] = rng.uniform(0.3, 1.0);
            phase[w] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        }
        double maxabs = 0.0;
        double* row = ds.images.data.data() + img * d;
        for (std::size_t y = 0; y < side; ++y) {
            for (std::size_t x = 0; x < side; ++x) {
                double v = dc;
                for (std::size_t w = 0; w < n_waves; ++w) {
                    v += amp[w] * std::cos(2.0 * std::numbers::pi *
                                               (fx[w] * static_cast<double>(x) +
                                                fy[w] * static_cast<double>(y)) /
                                               static_cast<double>(side) +
                                           phase[w]);
                }
                row[y * side + x] = v;
                maxabs = std::max(maxabs, std::abs(v));
            }
        }
        for (std::size_t i = 0; i < d; ++i) {
            double v = row[i] / maxabs;  // |v| <= 1 exactly
            if (domain == Domain::zero_one) v = (v + 1.0) / 2.0;
            row[i] = v;
        }
    }
    ds.n_train = n;
    return ds;
}

inline Dataset synthetic_splits(std::size_t side, std::size_t n_train, std::size_t n_val,
                                std::size_t n_test, std::uint64_t seed, Domain domain = Domain::pm1) {
    Dataset ds = synthetic_dataset(side, n_train + n_val + n_test, seed, domain);
    ds.n_train = n_train;
    ds.n_val = n_val;
    ds.n_test = n_test;
    return ds;
}

/// Shuffled index order for one epoch, deterministic in (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(Rng::mix(seed, epoch));
    rng.shuffle(idx);
    return idx;
}

/// Batched index groups covering the epoch; the final partial batch is kept.
inline std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                                     std::uint64_t seed, std::uint64_t epoch) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    const std::vector<std::size_t> order = epoch_order(n, seed, epoch);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; i += batch_size) {
        const std::size_t hi = std::min(n, i + batch_size);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(hi));
    }
    return out;
}

/// Gather dataset rows (offset by the split start) into a batch tensor.
inline Tensor gather_rows(const Tensor& images, const std::vector<std::size_t>& idx,
                          std::size_t row_offset = 0) {
    const std::size_t d = images.cols();
    Tensor out = Tensor::zeros({idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* src = images.data.data() + (row_offset + idx[i]) * d;
        std::copy(src, src + d, out.data.data() + i * d);
    }
    return out;
}

}  // namespace conecraft::datakit
