#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfmk/distance.hpp"
#include "dfmk/scheduler.hpp"

namespace dfmk {

using ordered_json = nlohmann::ordered_json;

inline constexpr int kScheduleFormatVersion = 1;
inline constexpr int kReportFormatVersion = 1;
inline constexpr std::uint32_t kBinaryVersion = 1;
inline constexpr char kDistancesMagic[5] = "DFMK";
inline constexpr char kEmbeddingsMagic[5] = "DFME";

// Atomic file write: write to a sibling temp file, then rename into place.
inline void atomic_write(const std::filesystem::path& path, const std::string& contents) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("atomic_write: cannot open " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw std::runtime_error("atomic_write: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

// ---- SchedulerTable JSON ----

inline ordered_json schedule_to_json(const SchedulerTable& table) {
    ordered_json j;
    j["formatVersion"] = kScheduleFormatVersion;
    j["kind"] = table.kind == SchedulerTable::Kind::MetricKO ? "metric-ko" : "generic-ko";
    j["paramMax"] = table.param_max;
    j["totalLength"] = table.total_length;
    j["meta"] = {{"gridSize", table.meta.grid_size},
                 {"tolerance", table.meta.tolerance},
                 {"averaging", table.meta.averaging}};
    j["times"] = table.times;
    j["values"] = table.values;
    j["derivatives"] = table.derivatives;
    return j;
}

inline SchedulerTable schedule_from_json(const ordered_json& j) {
    if (!j.contains("formatVersion") || j.at("formatVersion").get<int>() != kScheduleFormatVersion)
        throw std::runtime_error("schedule_from_json: missing or unsupported formatVersion");
    SchedulerTable table;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "metric-ko")
        table.kind = SchedulerTable::Kind::MetricKO;
    else if (kind == "generic-ko")
        table.kind = SchedulerTable::Kind::GenericKO;
    else
        throw std::runtime_error("schedule_from_json: unknown kind " + kind);
    table.param_max = j.at("paramMax").get<double>();
    table.total_length = j.at("totalLength").get<double>();
    table.meta.grid_size = j.at("meta").at("gridSize").get<std::size_t>();
    table.meta.tolerance = j.at("meta").at("tolerance").get<double>();
    table.meta.averaging = j.at("meta").at("averaging").get<std::string>();
    table.times = j.at("times").get<std::vector<double>>();
    table.values = j.at("values").get<std::vector<double>>();
    table.derivatives = j.at("derivatives").get<std::vector<double>>();
    table.validate();
    return table;
}

inline void save_schedule(const std::filesystem::path& path, const SchedulerTable& table) {
    atomic_write(path, schedule_to_json(table).dump(2) + "\n");
}

inline SchedulerTable load_schedule(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_schedule: cannot open " + path.string());
    ordered_json j;
    in >> j;
    return schedule_from_json(j);
}

// ---- Binary distance / embedding containers ----
// Layout (little endian): magic[4], u32 version, u32 C, u32 s [, u32 dim],
// then row-major f64 payload.

namespace detail {

inline void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint32_t read_u32(std::ifstream& in, const std::string& what) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw std::runtime_error("load: truncated file while reading " + what);
    return v;
}

inline void read_doubles(std::ifstream& in, std::vector<double>& out, const std::string& what) {
    in.read(reinterpret_cast<char*>(out.data()),
            static_cast<std::streamsize>(out.size() * sizeof(double)));
    if (!in) throw std::runtime_error("load: truncated file while reading " + what);
}

inline void check_magic(std::ifstream& in, const char* magic, const std::string& path) {
    char buf[4];
    in.read(buf, 4);
    if (!in || std::string(buf, 4) != std::string(magic, 4))
        throw std::runtime_error("load: bad magic in " + path);
}

} // namespace detail

inline void save_distances(const std::filesystem::path& path, const DistanceSet& ds) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("save_distances: cannot open " + tmp.string());
        out.write(kDistancesMagic, 4);
        detail::write_u32(out, kBinaryVersion);
        detail::write_u32(out, static_cast<std::uint32_t>(ds.codebook_count()));
        detail::write_u32(out, static_cast<std::uint32_t>(ds.vocab_size()));
        for (std::size_t c = 0; c < ds.codebook_count(); ++c) {
            const auto& e = ds[c].entries();
            out.write(reinterpret_cast<const char*>(e.data()),
                      static_cast<std::streamsize>(e.size() * sizeof(double)));
        }
        if (!out) throw std::runtime_error("save_distances: write failed");
    }
    std::filesystem::rename(tmp, path);
}

inline DistanceSet load_distances(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_distances: cannot open " + path.string());
    detail::check_magic(in, kDistancesMagic, path.string());
    const auto version = detail::read_u32(in, "version");
    if (version != kBinaryVersion)
        throw std::runtime_error("load_distances: unsupported version " + std::to_string(version));
    const auto c_count = detail::read_u32(in, "codebook count");
    const auto s = detail::read_u32(in, "vocab size");
    std::vector<DistanceMatrix> cbs;
    cbs.reserve(c_count);
    for (std::uint32_t c = 0; c < c_count; ++c) {
        std::vector<double> entries(static_cast<std::size_t>(s) * s);
        detail::read_doubles(in, entries, "codebook " + std::to_string(c));
        cbs.emplace_back(s, std::move(entries)); // validates the distance axioms
    }
    return DistanceSet(std::move(cbs));
}

struct EmbeddingsFile {
    std::size_t codebooks = 0;
    std::size_t vocab = 0;
    std::size_t dim = 0;
    std::vector<double> data; // [c][token][dim] row-major

    std::vector<std::vector<double>> codebook(std::size_t c) const {
        std::vector<std::vector<double>> out(vocab, std::vector<double>(dim));
        for (std::size_t x = 0; x < vocab; ++x)
            for (std::size_t k = 0; k < dim; ++k)
                out[x][k] = data[(c * vocab + x) * dim + k];
        return out;
    }
};

inline void save_embeddings(const std::filesystem::path& path, const EmbeddingsFile& emb) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("save_embeddings: cannot open " + tmp.string());
        out.write(kEmbeddingsMagic, 4);
        detail::write_u32(out, kBinaryVersion);
        detail::write_u32(out, static_cast<std::uint32_t>(emb.codebooks));
        detail::write_u32(out, static_cast<std::uint32_t>(emb.vocab));
        detail::write_u32(out, static_cast<std::uint32_t>(emb.dim));
        out.write(reinterpret_cast<const char*>(emb.data.data()),
                  static_cast<std::streamsize>(emb.data.size() * sizeof(double)));
        if (!out) throw std::runtime_error("save_embeddings: write failed");
    }
    std::filesystem::rename(tmp, path);
}

inline EmbeddingsFile load_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_embeddings: cannot open " + path.string());
    detail::check_magic(in, kEmbeddingsMagic, path.string());
    const auto version = detail::read_u32(in, "version");
    if (version != kBinaryVersion)
        throw std::runtime_error("load_embeddings: unsupported version " + std::to_string(version));
    EmbeddingsFile emb;
    emb.codebooks = detail::read_u32(in, "codebook count");
    emb.vocab = detail::read_u32(in, "vocab size");
    emb.dim = detail::read_u32(in, "embedding dim");
    emb.data.resize(emb.codebooks * emb.vocab * emb.dim);
    detail::read_doubles(in, emb.data, "embedding payload");
    return emb;
}

inline DistanceSet distances_from_embeddings(const EmbeddingsFile& emb, bool l2_normalize) {
    std::vector<DistanceMatrix> cbs;
    cbs.reserve(emb.codebooks);
    for (std::size_t c = 0; c < emb.codebooks; ++c)
        cbs.push_back(DistanceMatrix::from_embeddings(emb.codebook(c), l2_normalize));
    return DistanceSet(std::move(cbs));
}

// ---- Target fixture JSON ----
// { "s": 4, "N": 2, "C": 1, "q": [[...s^N entries per codebook...]] }

struct TargetFixture {
    std::size_t vocab = 0;
    std::size_t target_length = 0;
    std::size_t codebooks = 0;
    std::vector<std::vector<double>> joint_q;
};

inline TargetFixture load_target_fixture(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_target_fixture: cannot open " + path.string());
    ordered_json j;
    in >> j;
    TargetFixture fx;
    fx.vocab = j.at("s").get<std::size_t>();
    fx.target_length = j.at("N").get<std::size_t>();
    fx.codebooks = j.at("C").get<std::size_t>();
    fx.joint_q = j.at("q").get<std::vector<std::vector<double>>>();
    if (fx.joint_q.size() != fx.codebooks)
        throw std::runtime_error("load_target_fixture: q must have C entries");
    std::size_t states = 1;
    for (std::size_t i = 0; i < fx.target_length; ++i) states *= fx.vocab;
    for (const auto& q : fx.joint_q) {
        if (q.size() != states)
            throw std::runtime_error("load_target_fixture: q entry must have s^N values");
    }
    return fx;
}

inline void save_target_fixture(const std::filesystem::path& path, const TargetFixture& fx) {
    ordered_json j;
    j["s"] = fx.vocab;
    j["N"] = fx.target_length;
    j["C"] = fx.codebooks;
    j["q"] = fx.joint_q;
    atomic_write(path, j.dump(2) + "\n");
}

// ---- Logits table JSON ----
// { "entries": { "<key>": [logits...] } } with keys from LogitsTableProvider.

inline std::map<std::string, std::vector<double>> load_logits_table(
    const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_logits_table: cannot open " + path.string());
    ordered_json j;
    in >> j;
    return j.at("entries").get<std::map<std::string, std::vector<double>>>();
}

inline void save_logits_table(const std::filesystem::path& path,
                              const std::map<std::string, std::vector<double>>& table) {
    ordered_json j;
    j["entries"] = table;
    atomic_write(path, j.dump(2) + "\n");
}

// ---- Token grid JSON (corrupt command) ----
// { "N": 3, "C": 2, "tokens": [ ... N*C row-major ... ] }

struct TokenGrid {
    std::size_t positions = 0;
    std::size_t codebooks = 0;
    std::vector<std::size_t> tokens;
};

inline TokenGrid load_token_grid(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_token_grid: cannot open " + path.string());
    ordered_json j;
    in >> j;
    TokenGrid grid;
    grid.positions = j.at("N").get<std::size_t>();
    grid.codebooks = j.at("C").get<std::size_t>();
    grid.tokens = j.at("tokens").get<std::vector<std::size_t>>();
    if (grid.tokens.size() != grid.positions * grid.codebooks)
        throw std::runtime_error("load_token_grid: token count mismatch");
    return grid;
}

inline void save_token_grid(const std::filesystem::path& path, const TokenGrid& grid) {
    ordered_json j;
    j["N"] = grid.positions;
    j["C"] = grid.codebooks;
    j["tokens"] = grid.tokens;
    atomic_write(path, j.dump(2) + "\n");
}

} // namespace dfmk
