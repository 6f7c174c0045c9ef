#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "pglmm/sampler.hpp"

namespace pglmm {

// Posterior persistence format:
//   magic "PGLMPOST1", then M and K*q as 64-bit little-endian unsigned
//   integers, then M*K*q row-major IEEE-754 doubles (little-endian).
// A JSON sidecar "<name>.meta.json" carries labels, M, K, q and the seed.

namespace detail {

inline void put_u64_le(std::ostream& os, std::uint64_t v) {
    std::array<unsigned char, 8> b;
    for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = (v >> (8 * i)) & 0xff;
    os.write(reinterpret_cast<const char*>(b.data()), 8);
}

inline std::uint64_t get_u64_le(std::istream& is) {
    std::array<unsigned char, 8> b;
    is.read(reinterpret_cast<char*>(b.data()), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
}

inline void put_f64_le(std::ostream& os, double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, 8);
    put_u64_le(os, bits);
}

inline double get_f64_le(std::istream& is) {
    const std::uint64_t bits = get_u64_le(is);
    double x;
    std::memcpy(&x, &bits, 8);
    return x;
}

} // namespace detail

inline void save_posterior(const std::string& path, const PosteriorDraws& draws,
                           std::uint64_t seed) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open posterior file for writing: " + path);
    os.write("PGLMPOST1", 9);
    detail::put_u64_le(os, static_cast<std::uint64_t>(draws.M));
    detail::put_u64_le(os, static_cast<std::uint64_t>(draws.K) * static_cast<std::uint64_t>(draws.q));
    for (Eigen::Index r = 0; r < draws.data.rows(); ++r)
        for (Eigen::Index c = 0; c < draws.data.cols(); ++c)
            detail::put_f64_le(os, draws.data(r, c));
    if (!os) throw std::runtime_error("failed writing posterior file: " + path);

    nlohmann::ordered_json meta;
    meta["M"] = draws.M;
    meta["K"] = draws.K;
    meta["q"] = draws.q;
    meta["seed"] = seed;
    auto labels = nlohmann::ordered_json::array();
    for (const auto& l : draws.labels)
        labels.push_back({{"group", l.group}, {"variable", l.variable}});
    meta["labels"] = std::move(labels);
    std::ofstream ms(path + ".meta.json");
    if (!ms) throw std::runtime_error("cannot open posterior sidecar for writing: " + path);
    ms << meta.dump(2) << '\n';
}

inline PosteriorDraws load_posterior(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open posterior file: " + path);
    char magic[9];
    is.read(magic, 9);
    if (!is || std::string(magic, 9) != "PGLMPOST1")
        throw std::runtime_error("not a PGLMPOST1 file: " + path);
    const std::uint64_t M = detail::get_u64_le(is);
    const std::uint64_t KQ = detail::get_u64_le(is);

    std::ifstream ms(path + ".meta.json");
    if (!ms) throw std::runtime_error("cannot open posterior sidecar: " + path + ".meta.json");
    nlohmann::json meta = nlohmann::json::parse(ms);

    PosteriorDraws draws;
    draws.M = static_cast<int>(M);
    draws.K = meta.at("K").get<int>();
    draws.q = meta.at("q").get<int>();
    if (static_cast<std::uint64_t>(draws.K) * static_cast<std::uint64_t>(draws.q) != KQ)
        throw std::runtime_error("posterior sidecar inconsistent with binary header: " + path);
    draws.data.resize(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(KQ));
    for (Eigen::Index r = 0; r < draws.data.rows(); ++r)
        for (Eigen::Index c = 0; c < draws.data.cols(); ++c)
            draws.data(r, c) = detail::get_f64_le(is);
    if (!is) throw std::runtime_error("truncated posterior file: " + path);
    for (const auto& l : meta.at("labels"))
        draws.labels.push_back({l.at("group").get<std::string>(), l.at("variable").get<std::string>()});
    return draws;
}

} // namespace pglmm
