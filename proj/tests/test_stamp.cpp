#include "doctest.h"
#include "support.hpp"

#include "fairstamp/errors.hpp"
#include "fairstamp/stamp.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

using namespace fairstamp;
using fstest::tiny_config;

TEST_SUITE("stamp") {

TEST_CASE("new stamp is an identity with seeded keys") {
    const auto s = new_stamp<double>(2, 8, 5, 17);
    CHECK(s.key.rows() == 5);
    CHECK(s.key.cols() == 8);
    CHECK(s.value.isZero(0.0));
    CHECK(s.parameter_count() == 2 * 5 * 8);
    CHECK(new_stamp<double>(2, 8, 5, 17).key == s.key);
    CHECK(new_stamp<double>(2, 8, 5, 18).key != s.key);
    // std 0.01: a generous bound on the sample spread.
    const double rms = std::sqrt(s.key.squaredNorm() / static_cast<double>(s.key.size()));
    CHECK(rms > 0.003);
    CHECK(rms < 0.03);
    const RowVector<double> h = RowVector<double>::Random(8);
    CHECK(apply(s, h).isZero(0.0));
    CHECK_THROWS_AS(new_stamp<double>(0, 8, 5, 1), ArgumentError);
    CHECK_THROWS_AS(new_stamp<double>(1, 8, 0, 1), ArgumentError);
}

TEST_CASE("apply matches a hand computation") {
    FairnessStamp<double> s;
    s.layer = 1;
    s.key.resize(3, 4);
    s.value.resize(3, 4);
    s.key << 1, 0, -1, 2,
             0.5, 0.5, 0.5, 0.5,
             -1, -1, 0, 0;
    s.value << 1, 2, 3, 4,
               -1, 0, 1, 0,
               10, 10, 10, 10;
    RowVector<double> h(4);
    h << 1, 2, 3, 4;
    // pre = [1 - 3 + 8, 5, -3] = [6, 5, -3]; relu -> [6, 5, 0]
    RowVector<double> expected(4);
    expected << 6 - 5, 12, 18 + 5, 24;
    CHECK(fstest::max_abs_diff(apply(s, h), expected) < 1e-12);

    CHECK(apply(s, RowVector<double>(RowVector<double>::Zero(4))).isZero(0.0));
    CHECK(fstest::max_abs_diff(apply(s, RowVector<double>(2.5 * h)), RowVector<double>(2.5 * expected)) < 1e-12);
    CHECK_THROWS_AS(apply(s, RowVector<double>(RowVector<double>::Zero(5))), ShapeError);
}

TEST_CASE("rank one stamp moves along one direction") {
    auto s = fstest::busy_stamp<double>(1, 6, 1, 3);
    for (int k = 0; k < 10; ++k) {
        const RowVector<double> h = RowVector<double>::Random(6);
        const RowVector<double> d = apply(s, h);
        const double coef = std::max(0.0, h.dot(s.key.row(0)));
        CHECK(fstest::max_abs_diff(d, RowVector<double>(coef * s.value.row(0))) < 1e-12);
    }
}

TEST_CASE("attach semantics") {
    const auto c = tiny_config(3, 8, 2, 16, 12, 16, 4);
    const auto base = fstest::tiny_model<double>(c);
    const auto checksum = base->checksum();
    const TokenSeq probe{1, 3, 5, 7, 9};

    SUBCASE("fresh stamp leaves logits unchanged") {
        auto sm = attach<double>(base, new_stamp<double>(2, 8, 4, 1));
        CHECK(sm.forward(probe).logits == base->forward(probe).logits);
        CHECK(sm.detached().forward(probe).logits == base->forward(probe).logits);
    }
    SUBCASE("busy stamp changes only layers at and above it") {
        auto sm = attach<double>(base, fstest::busy_stamp<double>(2, 8, 4, 9));
        const auto a = sm.forward(probe);
        const auto b = base->forward(probe);
        CHECK(a.hidden.at(1) == b.hidden.at(1));
        CHECK(fstest::max_abs_diff(a.hidden.at(2), b.hidden.at(2)) > 1e-6);
        CHECK(fstest::max_abs_diff(a.logits, b.logits) > 1e-6);
    }
    SUBCASE("FFN output gains exactly the stamp delta") {
        const auto stamp = fstest::busy_stamp<double>(2, 8, 4, 9);
        std::vector<FairnessStamp<double>> stamps{stamp};
        const auto with = run_forward<double>(ModelView<double>{base.get(), stamps}, probe);
        // Same FFN input, so compare against a base FFN evaluated on it.
        const auto& blk = with.blocks[1];
        const auto& p = base->params().blocks[1];
        const Matrix<double> plain = blk.ffn_act * p.ffn_out;
        for (int i = 0; i < static_cast<int>(probe.size()); ++i) {
            const RowVector<double> delta = blk.ffn_out.row(i) - plain.row(i);
            CHECK(fstest::max_abs_diff(delta, apply(stamp, RowVector<double>(blk.ffn_norm_out.row(i)))) < 1e-6);
        }
    }
    SUBCASE("attach errors") {
        StampedModel<double> sm(base);
        sm.attach(new_stamp<double>(1, 8, 4, 1));
        CHECK_THROWS_AS(sm.attach(new_stamp<double>(1, 8, 4, 2)), AttachError);
        CHECK_THROWS_AS(sm.attach(new_stamp<double>(4, 8, 4, 2)), ArgumentError);
        CHECK_THROWS_AS(sm.attach(new_stamp<double>(2, 6, 4, 2)), ShapeError);
        sm.attach(new_stamp<double>(3, 8, 4, 2));
        CHECK(sm.stamps().size() == 2);
        CHECK(sm.stamp_parameter_count() == 2 * (2 * 4 * 8));
    }
    CHECK(base->checksum() == checksum);
}

TEST_CASE("stamp files") {
    fstest::TempDir dir("stamp");
    const auto s = fstest::busy_stamp<float>(2, 8, 4, 12);
    save_stamp(s, dir / "s");
    const auto loaded = load_stamp(dir / "s");
    CHECK(loaded.layer == 2);
    CHECK(loaded.key == s.key);
    CHECK(loaded.value == s.value);
    for (int k = 0; k < 5; ++k) {
        const RowVector<float> h = RowVector<float>::Random(8);
        CHECK(apply(loaded, h) == apply(s, h));
    }

    SUBCASE("dimension mismatch surfaces at attach") {
        const auto base = fstest::tiny_model<float>(tiny_config(2, 12, 2, 16, 12, 16, 1));
        StampedModel<float> sm(base);
        CHECK_THROWS_AS(sm.attach(loaded), ShapeError);
    }
    SUBCASE("unknown format version") {
        auto j = nlohmann::json::parse(std::ifstream(dir / "s" / "stamp_manifest.json"));
        j["format_version"] = 7;
        std::ofstream(dir / "s" / "stamp_manifest.json") << j.dump();
        CHECK_THROWS_AS(load_stamp(dir / "s"), LoadError);
    }
    SUBCASE("declared shape mismatch") {
        auto j = nlohmann::json::parse(std::ifstream(dir / "s" / "stamp_manifest.json"));
        j["d_c"] = 5;
        std::ofstream(dir / "s" / "stamp_manifest.json") << j.dump();
        CHECK_THROWS_AS(load_stamp(dir / "s"), LoadError);
    }
    SUBCASE("corrupted payload") {
        std::fstream f(dir / "s" / "stamp.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(3);
        f.put('\x55');
        f.close();
        CHECK_THROWS_AS(load_stamp(dir / "s"), LoadError);
    }
}

}  // TEST_SUITE
