#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dfmk/io.hpp"

using namespace dfmk;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("dfmk_io_test_" + name);
}

SchedulerTable sample_table() {
    return build_ko_schedule_generic(
        [](double k) { return fisher_information_mixture(0.4, k); }, 0.95, 128, 33);
}

} // namespace

TEST_CASE("schedule JSON round trip is field-identical") {
    const SchedulerTable t = sample_table();
    const auto path = temp_path("schedule.json");
    save_schedule(path, t);
    const SchedulerTable back = load_schedule(path);
    CHECK(back.times == t.times);
    CHECK(back.values == t.values);
    CHECK(back.derivatives == t.derivatives);
    CHECK(back.param_max == t.param_max);
    CHECK(back.total_length == t.total_length);
    CHECK(back.meta.grid_size == t.meta.grid_size);
    CHECK(back.meta.tolerance == t.meta.tolerance);
    CHECK(back.meta.averaging == t.meta.averaging);
    CHECK(back.kind == t.kind);
    std::filesystem::remove(path);
}

TEST_CASE("schedule load rejects bad payloads") {
    const auto path = temp_path("bad_schedule.json");
    {
        std::ofstream out(path);
        out << "{\"kind\": \"metric-ko\"}";
    }
    CHECK_THROWS_AS(load_schedule(path), std::runtime_error); // missing formatVersion
    ordered_json j = schedule_to_json(sample_table());
    j["kind"] = "mystery";
    CHECK_THROWS_AS(schedule_from_json(j), std::runtime_error);
    ordered_json j2 = schedule_to_json(sample_table());
    j2["values"][0] = 0.5; // violates endpoint invariant via validate()
    CHECK_THROWS_AS(schedule_from_json(j2), std::invalid_argument);
    std::filesystem::remove(path);
}

TEST_CASE("distances binary round trip and validation") {
    const DistanceSet ds({DistanceMatrix(3, {0.0, 1.0, 2.0, 1.0, 0.0, 1.5, 2.0, 1.5, 0.0}),
                          DistanceMatrix(3, {0.0, 0.5, 0.25, 0.5, 0.0, 0.75, 0.25, 0.75, 0.0})});
    const auto path = temp_path("distances.bin");
    save_distances(path, ds);
    const DistanceSet back = load_distances(path);
    REQUIRE(back.codebook_count() == 2);
    REQUIRE(back.vocab_size() == 3);
    for (std::size_t c = 0; c < 2; ++c) CHECK(back[c].entries() == ds[c].entries());

    // Truncated payload reports what was being read.
    const auto trunc = temp_path("distances_trunc.bin");
    {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> buf(40);
        in.read(buf.data(), 40);
        std::ofstream out(trunc, std::ios::binary);
        out.write(buf.data(), 40);
    }
    try {
        load_distances(trunc);
        FAIL("expected truncation error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
        CHECK(std::string(e.what()).find("codebook 0") != std::string::npos);
    }

    // Bad magic.
    const auto badmagic = temp_path("distances_magic.bin");
    {
        std::ofstream out(badmagic, std::ios::binary);
        out.write("NOPE", 4);
    }
    CHECK_THROWS_AS(load_distances(badmagic), std::runtime_error);

    // Nonzero diagonal rejected at load time by the DistanceMatrix axioms.
    const auto baddiag = temp_path("distances_diag.bin");
    {
        std::ofstream out(baddiag, std::ios::binary);
        out.write(kDistancesMagic, 4);
        const std::uint32_t header[3] = {kBinaryVersion, 1, 2};
        out.write(reinterpret_cast<const char*>(header), sizeof(header));
        const double payload[4] = {0.5, 1.0, 1.0, 0.0};
        out.write(reinterpret_cast<const char*>(payload), sizeof(payload));
    }
    CHECK_THROWS_AS(load_distances(baddiag), std::invalid_argument);

    for (const auto& p : {path, trunc, badmagic, baddiag}) std::filesystem::remove(p);
}

TEST_CASE("embeddings binary round trip and derived distances") {
    EmbeddingsFile emb;
    emb.codebooks = 1;
    emb.vocab = 2;
    emb.dim = 2;
    emb.data = {1.0, 0.0, 3.0, 4.0};
    const auto path = temp_path("embeddings.bin");
    save_embeddings(path, emb);
    const EmbeddingsFile back = load_embeddings(path);
    CHECK(back.codebooks == 1);
    CHECK(back.vocab == 2);
    CHECK(back.dim == 2);
    CHECK(back.data == emb.data);

    const DistanceSet plain = distances_from_embeddings(back, false);
    CHECK(plain[0].at(0, 1) == Catch::Approx(4.0 + 16.0));
    const DistanceSet norm = distances_from_embeddings(back, true);
    CHECK(norm[0].at(0, 1) == Catch::Approx(0.16 + 0.64));
    std::filesystem::remove(path);
}

TEST_CASE("target fixture JSON round trip") {
    TargetFixture fx;
    fx.vocab = 2;
    fx.target_length = 2;
    fx.codebooks = 1;
    fx.joint_q = {{0.1, 0.2, 0.3, 0.4}};
    const auto path = temp_path("fixture.json");
    save_target_fixture(path, fx);
    const TargetFixture back = load_target_fixture(path);
    CHECK(back.vocab == 2);
    CHECK(back.target_length == 2);
    CHECK(back.joint_q == fx.joint_q);

    // Wrong q size rejected.
    fx.joint_q = {{0.5, 0.5}};
    const auto bad = temp_path("fixture_bad.json");
    ordered_json j;
    j["s"] = 2;
    j["N"] = 2;
    j["C"] = 1;
    j["q"] = fx.joint_q;
    atomic_write(bad, j.dump());
    CHECK_THROWS_AS(load_target_fixture(bad), std::runtime_error);
    std::filesystem::remove(path);
    std::filesystem::remove(bad);
}

TEST_CASE("token grid and logits table round trips") {
    TokenGrid grid;
    grid.positions = 2;
    grid.codebooks = 2;
    grid.tokens = {0, 1, 2, 3};
    const auto gpath = temp_path("tokens.json");
    save_token_grid(gpath, grid);
    const TokenGrid gback = load_token_grid(gpath);
    CHECK(gback.tokens == grid.tokens);
    CHECK(gback.positions == 2);

    std::map<std::string, std::vector<double>> logits;
    logits["c0|i0|t0.500000000|z1,0"] = {0.5, -0.25};
    const auto lpath = temp_path("logits.json");
    save_logits_table(lpath, logits);
    CHECK(load_logits_table(lpath) == logits);
    std::filesystem::remove(gpath);
    std::filesystem::remove(lpath);
}

TEST_CASE("atomic write leaves no temp file behind") {
    const auto path = temp_path("atomic.txt");
    atomic_write(path, "payload");
    CHECK(std::filesystem::exists(path));
    CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
    std::ifstream in(path);
    std::string content;
    std::getline(in, content);
    CHECK(content == "payload");
    std::filesystem::remove(path);
}
