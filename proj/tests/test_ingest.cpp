#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "marecg/core/rng.hpp"
#include "marecg/ingest/record.hpp"
#include "marecg/ingest/synth.hpp"
#include "marecg/ingest/wfdb.hpp"
#include "marecg/snomed/routing.hpp"

using namespace marecg;
using ingest::HeaderInfo;

TEST_CASE("header parsing: Dx extraction is case and whitespace tolerant") {
    SUBCASE("plain Dx comment") {
        auto h = ingest::parse_header("r1 1 500 100\nr1.dat 16 1000(0)/mV 16 0 0 0 0 I\n"
                                      "#Dx: 164889003,59118001\n");
        CHECK(h.dx_codes == std::vector<std::int64_t>{164889003, 59118001});
        CHECK(h.id == "r1");
        CHECK(h.nsig == 1);
        CHECK(h.fs == 500.0);
        CHECK(h.nsamp == 100);
    }
    SUBCASE("missing Dx line is legal") {
        auto h = ingest::parse_header("r1 1 500 100\nr1.dat 16 1000(0)/mV\n");
        CHECK(h.dx_codes.empty());
    }
    SUBCASE("case and spacing variants") {
        for (const char* variant : {"# dx : 426177001\n", "#DX:426177001\n", "#  Dx:  426177001\n",
                                    "# dX: 426177001 \n"}) {
            auto h = ingest::parse_header(std::string("r1 1 500 100\nr1.dat 16 1000(0)/mV\n") + variant);
            INFO(variant);
            CHECK(h.dx_codes == std::vector<std::int64_t>{426177001});
        }
    }
    SUBCASE("non-Dx comments are ignored") {
        auto h = ingest::parse_header("r1 1 500 100\nr1.dat 16 1000(0)/mV\n# Age: 60\n# Sex: F\n");
        CHECK(h.dx_codes.empty());
    }
    SUBCASE("malformed numerics report the line") {
        try {
            ingest::parse_header("r1 1 500 100\nr1.dat 16 bogus/mV\n");
            FAIL("expected throw");
        } catch (const ingest::wfdb_error& e) {
            CHECK(e.line_no == 2);
        }
        CHECK_THROWS(ingest::parse_header("r1 x 500 100\n"));
        CHECK_THROWS(ingest::parse_header("r1 2 500 100\nr1.dat 16 1000(0)/mV\n"));  // missing line
    }
}

TEST_CASE("header writer round-trips through the parser") {
    HeaderInfo h;
    h.id = "rec42";
    h.nsig = 2;
    h.fs = 500;
    h.nsamp = 250;
    for (int i = 0; i < 2; ++i) {
        ingest::SignalDesc d;
        d.file = "rec42.dat";
        d.gain = 1000;
        d.baseline = i * 10;
        d.description = i == 0 ? "I" : "II";
        h.signals.push_back(d);
    }
    h.dx_codes = {164889003, 54329005};
    std::string text = ingest::write_header(h);
    auto parsed = ingest::parse_header(text);
    CHECK(ingest::write_header(parsed) == text);
    CHECK(parsed.dx_codes == h.dx_codes);
    CHECK(parsed.signals[1].baseline == doctest::Approx(10));
    CHECK(parsed.signals[1].description == "II");
}

TEST_CASE("Dx parsing round-trips the writer for every shipped code") {
    for (const auto& [code, nodes] : snomed::default_routing().entries()) {
        (void)nodes;
        HeaderInfo h;
        h.id = "x";
        h.nsig = 1;
        h.fs = 500;
        h.nsamp = 10;
        ingest::SignalDesc d;
        d.file = "x.dat";
        d.description = "I";
        h.signals.push_back(d);
        h.dx_codes = {code};
        auto parsed = ingest::parse_header(ingest::write_header(h));
        CHECK(parsed.dx_codes == std::vector<std::int64_t>{code});
    }
}

TEST_CASE("format-16 signal codec") {
    HeaderInfo h;
    h.id = "s";
    h.nsig = 12;
    h.fs = 500;
    h.nsamp = 2;
    for (int i = 0; i < 12; ++i) {
        ingest::SignalDesc d;
        d.gain = 1000;
        d.baseline = 7;
        h.signals.push_back(d);
    }
    SUBCASE("raw equal to baseline decodes to zero") {
        std::vector<std::vector<float>> sig(12, std::vector<float>(2, 0.0f));
        auto bytes = ingest::write_signal16(sig, h);
        auto back = ingest::load_signal16(bytes, h);
        for (const auto& lead : back)
            for (float v : lead) CHECK(v == 0.0f);
    }
    SUBCASE("raw = baseline + gain decodes to exactly 1.0") {
        std::vector<std::uint8_t> bytes(2 * 12 * 2);
        for (std::size_t k = 0; k < 2; ++k)
            for (std::size_t c = 0; c < 12; ++c) {
                std::int16_t raw = 1007;  // baseline 7 + gain 1000
                bytes[2 * (k * 12 + c)] = static_cast<std::uint8_t>(raw & 0xff);
                bytes[2 * (k * 12 + c) + 1] = static_cast<std::uint8_t>((raw >> 8) & 0xff);
            }
        auto sig = ingest::load_signal16(bytes, h);
        for (const auto& lead : sig)
            for (float v : lead) CHECK(v == doctest::Approx(1.0f));
    }
    SUBCASE("sine round trip stays within the quantization bound") {
        h.nsamp = 500;
        std::vector<std::vector<float>> sig(12, std::vector<float>(500));
        for (std::size_t c = 0; c < 12; ++c)
            for (std::size_t i = 0; i < 500; ++i)
                sig[c][i] = static_cast<float>(1.5 * std::sin(0.05 * static_cast<double>(i) +
                                                              static_cast<double>(c)));
        auto bytes = ingest::write_signal16(sig, h);
        auto back = ingest::load_signal16(bytes, h);
        double bound = 1.0 / (2.0 * 1000.0) + 1e-9;
        for (std::size_t c = 0; c < 12; ++c)
            for (std::size_t i = 0; i < 500; ++i)
                CHECK(std::fabs(back[c][i] - sig[c][i]) <= bound);
    }
    SUBCASE("odd byte count is a truncation error") {
        std::vector<std::uint8_t> bytes(2 * 12 * 2 + 1);
        CHECK_THROWS(ingest::load_signal16(bytes, h));
    }
}

TEST_CASE("revin: normalization and inversion") {
    SUBCASE("constant lead normalizes to zeros via the epsilon floor") {
        std::vector<std::vector<float>> sig = {{2.5f, 2.5f, 2.5f, 2.5f}};
        auto st = ingest::revin_normalize(sig);
        for (float v : sig[0]) CHECK(v == 0.0f);
        CHECK(st.mean[0] == doctest::Approx(2.5f));
    }
    SUBCASE("symmetric lead lands on +-1") {
        std::vector<std::vector<float>> sig = {{-1.0f, 1.0f, -1.0f, 1.0f}};
        ingest::revin_normalize(sig);
        CHECK(sig[0][0] == doctest::Approx(-1.0f));
        CHECK(sig[0][1] == doctest::Approx(1.0f));
    }
    SUBCASE("random lead round-trips within 1e-5 relative") {
        num::Rng rng(3);
        std::vector<std::vector<float>> sig(2, std::vector<float>(400));
        for (auto& lead : sig)
            for (auto& v : lead) v = static_cast<float>(0.3 * rng.gauss() + 0.1);
        auto orig = sig;
        auto st = ingest::revin_normalize(sig);
        for (const auto& lead : sig) {
            double mean = 0, var = 0;
            for (float v : lead) mean += v;
            mean /= static_cast<double>(lead.size());
            for (float v : lead) var += (v - mean) * (v - mean);
            var /= static_cast<double>(lead.size());
            CHECK(std::fabs(mean) < 1e-6);
            CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(1e-4));
        }
        ingest::revin_denormalize(sig, st);
        for (std::size_t c = 0; c < sig.size(); ++c)
            for (std::size_t i = 0; i < sig[c].size(); ++i)
                CHECK(std::fabs(sig[c][i] - orig[c][i]) <=
                      1e-5 * std::max(1.0f, std::fabs(orig[c][i])));
    }
}

TEST_CASE("preprocess: resampling, padding, quality, idempotence") {
    ingest::PreprocessConfig cfg;
    cfg.target_len = 3500;
    const auto& routing = snomed::default_routing();

    SUBCASE("1000 Hz 7000-sample input lands at 3500 samples of 500 Hz") {
        ingest::SynthSpec spec;
        spec.length = 7000;
        spec.fs = 1000;  // generator treats fs generically
        spec.rate_bpm = 60;
        auto rec = ingest::synth_record(spec, 5);
        auto out = ingest::preprocess("r", rec.signal, 1000.0, {426783006}, cfg, routing);
        CHECK(out.quality.pass);
        CHECK(out.fs == 500.0);
        for (const auto& lead : out.signal) CHECK(lead.size() == 3500);
    }
    SUBCASE("all-zero lead fails with reason zero_fraction") {
        std::vector<std::vector<float>> sig(12, std::vector<float>(3500, 0.0f));
        sig[3] = std::vector<float>(3500, 0.0f);
        auto out = ingest::preprocess("z", sig, 500.0, {}, cfg, routing);
        CHECK_FALSE(out.quality.pass);
        CHECK(out.quality.reason == "zero_fraction");
    }
    SUBCASE("amplitude and saturation screens") {
        ingest::SynthSpec spec;
        spec.length = 3500;
        auto rec = ingest::synth_record(spec, 6);
        auto sig = rec.signal;
        sig[2][100] = 30.0f;  // beyond 25 mV
        auto out = ingest::preprocess("a", sig, 500.0, {}, cfg, routing);
        CHECK_FALSE(out.quality.pass);
        CHECK(out.quality.reason == "amplitude");
        CHECK(out.quality.lead == 2);

        sig = rec.signal;
        for (std::size_t i = 200; i < 260; ++i) sig[1][i] = 5.0f;  // 60-sample plateau at the max
        out = ingest::preprocess("s", sig, 500.0, {}, cfg, routing);
        CHECK_FALSE(out.quality.pass);
        CHECK(out.quality.reason == "saturation");
    }
    SUBCASE("unsupported sampling rate is rejected") {
        std::vector<std::vector<float>> sig(12, std::vector<float>(1000, 0.1f));
        auto out = ingest::preprocess("u", sig, 250.0, {}, cfg, routing);
        CHECK_FALSE(out.quality.pass);
        CHECK(out.quality.reason == "unsupported_fs");
    }
    SUBCASE("conformant input is unchanged apart from normalization, and idempotent") {
        ingest::SynthSpec spec;
        spec.length = 3500;
        spec.rate_bpm = 72;
        auto rec = ingest::synth_record(spec, 7);
        auto out = ingest::preprocess("c", rec.signal, 500.0, rec.codes, cfg, routing);
        REQUIRE(out.quality.pass);
        // Undo RevIN: the samples must match the input exactly (identity path).
        auto denorm = out.signal;
        ingest::revin_denormalize(denorm, out.revin);
        for (std::size_t c = 0; c < denorm.size(); ++c)
            for (std::size_t i = 0; i < denorm[c].size(); ++i)
                CHECK(std::fabs(denorm[c][i] - rec.signal[c][i]) < 1e-5);
        // Re-preprocessing the already-normalized record changes nothing but stats.
        auto again = ingest::preprocess("c", out.signal, 500.0, rec.codes, cfg, routing);
        CHECK(again.quality.pass);
        CHECK(again.rpeaks == out.rpeaks);
        for (std::size_t c = 0; c < denorm.size(); ++c)
            for (std::size_t i = 0; i < denorm[c].size(); ++i)
                CHECK(std::fabs(again.signal[c][i] - out.signal[c][i]) < 1e-4);
    }
    SUBCASE("padding is trailing zeros") {
        ingest::SynthSpec spec;
        spec.length = 3000;
        auto rec = ingest::synth_record(spec, 8);
        auto out = ingest::preprocess("p", rec.signal, 500.0, {}, cfg, routing);
        REQUIRE(out.quality.pass);
        for (const auto& lead : out.signal) CHECK(lead.size() == 3500);
        auto raw = out.signal;
        ingest::revin_denormalize(raw, out.revin);
        for (std::size_t i = 3000; i < 3500; ++i)
            CHECK(std::fabs(raw[0][i]) < 1e-5);  // the padded tail decodes back to zero
    }
    SUBCASE("cropping is centered") {
        ingest::SynthSpec spec;
        spec.length = 4100;
        auto rec = ingest::synth_record(spec, 9);
        auto out = ingest::preprocess("cc", rec.signal, 500.0, {}, cfg, routing);
        REQUIRE(out.quality.pass);
        auto raw = out.signal;
        ingest::revin_denormalize(raw, out.revin);
        // Center crop of 4100 -> 3500 starts at offset 300.
        for (std::size_t i = 0; i < 3500; i += 37)
            CHECK(std::fabs(raw[5][i] - rec.signal[5][i + 300]) < 1e-5);
    }
}

TEST_CASE("synth determinism and corpus round trip") {
    ingest::SynthSpec spec;
    spec.rate_bpm = 60;
    spec.length = 3500;
    auto a = ingest::synth_record(spec, 99);
    auto b = ingest::synth_record(spec, 99);
    CHECK(a.signal == b.signal);
    CHECK(a.true_rpeaks == b.true_rpeaks);
    CHECK(a.codes == b.codes);

    SUBCASE("60 bpm clean gives RR of 500 samples") {
        REQUIRE(a.true_rpeaks.size() >= 3);
        for (std::size_t i = 1; i < a.true_rpeaks.size(); ++i) {
            double rr = static_cast<double>(a.true_rpeaks[i] - a.true_rpeaks[i - 1]);
            CHECK(std::fabs(rr - 500.0) <= 11.0);  // regular class jitters by up to 2%
        }
    }
    SUBCASE("rate bounds are enforced") {
        ingest::SynthSpec bad;
        bad.rate_bpm = 10;
        CHECK_THROWS(ingest::synth_record(bad, 1));
    }
    SUBCASE("corpus write/load preserves ids, codes, and quantized samples") {
        auto dir = std::filesystem::temp_directory_path() / "marecg_test_corpus";
        std::filesystem::remove_all(dir);
        auto records = ingest::synth_corpus(6, 11, 3500);
        ingest::write_corpus(dir.string(), records);
        auto loaded = ingest::load_corpus(dir.string());
        REQUIRE(loaded.size() == records.size());
        for (std::size_t i = 0; i < records.size(); ++i) {
            CHECK(loaded[i].id == records[i].id);
            CHECK(loaded[i].codes == records[i].codes);
            for (std::size_t c = 0; c < 12; ++c)
                for (std::size_t k = 0; k < 3500; ++k)
                    CHECK(std::fabs(loaded[i].signal[c][k] - records[i].signal[c][k]) <= 5.1e-4);
        }
        // Writing the same corpus twice is byte-identical.
        auto dir2 = std::filesystem::temp_directory_path() / "marecg_test_corpus2";
        std::filesystem::remove_all(dir2);
        ingest::write_corpus(dir2.string(), ingest::synth_corpus(6, 11, 3500));
        for (const auto& r : records) {
            for (const char* ext : {".hea", ".dat"}) {
                std::ifstream f1(dir / (r.id + ext), std::ios::binary);
                std::ifstream f2(dir2 / (r.id + ext), std::ios::binary);
                std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
                std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
                CHECK(s1 == s2);
            }
        }
        std::filesystem::remove_all(dir);
        std::filesystem::remove_all(dir2);
    }
}

TEST_CASE("preprocess_corpus keeps manifest order") {
    auto records = ingest::synth_corpus(5, 21, 3500);
    std::vector<ingest::RawRecord> raw;
    for (const auto& r : records) raw.push_back({r.id, r.signal, r.fs, r.codes});
    ingest::PreprocessConfig cfg;
    cfg.target_len = 3500;
    auto out = ingest::preprocess_corpus(raw, cfg, snomed::default_routing());
    REQUIRE(out.size() == raw.size());
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i].id == raw[i].id);
}
