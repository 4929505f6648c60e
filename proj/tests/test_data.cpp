#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tritransnet/data.hpp"

using namespace ttn;
using D = Tensor<double>;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("ttn_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(rand()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary);
    f.write(bytes.data(), (std::streamsize)bytes.size());
}

}  // namespace

TEST(Codec, TwoByTwoP5) {
    TempDir td;
    std::string p = td.file("a.pgm");
    write_bytes(p, std::string("P5\n2 2\n255\n") + '\x00' + '\xff' + '\xff' + '\x00');
    Image img = read_pnm(p);
    EXPECT_EQ(img.w, 2);
    EXPECT_EQ(img.h, 2);
    EXPECT_EQ(img.channels, 1);
    EXPECT_EQ(img.pix, (std::vector<std::uint16_t>{0, 255, 255, 0}));
}

TEST(Codec, SixteenBitBigEndian) {
    TempDir td;
    std::string p = td.file("b.pgm");
    // value 32768 = bytes 0x80 0x00
    write_bytes(p, std::string("P5\n1 1\n65535\n") + '\x80' + '\x00');
    Image img = read_pnm(p);
    EXPECT_EQ(img.maxval, 65535);
    EXPECT_EQ(img.pix[0], 32768);
}

TEST(Codec, DistinctErrorsNameFileAndByte) {
    TempDir td;
    std::string malformed = td.file("m.pgm");
    write_bytes(malformed, "P5\nabc\n");
    try {
        read_pnm(malformed);
        FAIL();
    } catch (const DataError& e) {
        std::string w = e.what();
        EXPECT_NE(w.find("m.pgm"), std::string::npos);
        EXPECT_NE(w.find("byte"), std::string::npos);
        EXPECT_NE(w.find("malformed"), std::string::npos);
    }
    std::string overflow = td.file("o.pgm");
    write_bytes(overflow, "P5\n99999999 2\n255\n");
    try {
        read_pnm(overflow);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("overflow"), std::string::npos);
    }
    std::string truncated = td.file("t.pgm");
    write_bytes(truncated, std::string("P5\n4 4\n255\n") + "ab");
    try {
        read_pnm(truncated);
        FAIL();
    } catch (const DataError& e) {
        std::string w = e.what();
        EXPECT_NE(w.find("truncated"), std::string::npos);
        EXPECT_NE(w.find("t.pgm"), std::string::npos);
    }
    EXPECT_THROW(read_pnm(td.file("missing.pgm")), DataError);
}

TEST(Codec, RoundTrip8Bit) {
    TempDir td;
    Image img;
    img.w = 3;
    img.h = 2;
    img.channels = 3;
    img.maxval = 255;
    for (int i = 0; i < 18; ++i) img.pix.push_back((std::uint16_t)(i * 13 % 256));
    std::string p = td.file("rt.ppm");
    write_pnm(p, img);
    Image back = read_pnm(p);
    EXPECT_EQ(back.pix, img.pix);
    EXPECT_EQ(back.channels, 3);
}

TEST(LoadSample, NormalizationAndThreshold) {
    TempDir td;
    // rgb 2x2 (values arbitrary), depth 2x2, gt with 127 and 128
    std::string rgb = td.file("r.ppm");
    write_bytes(rgb, std::string("P6\n2 2\n255\n") + std::string(12, '\x40'));
    std::string dep = td.file("d.pgm");
    write_bytes(dep, std::string("P5\n2 2\n255\n") + '\x00' + '\xff' + '\x80' + '\x40');
    std::string gt = td.file("g.pgm");
    write_bytes(gt, std::string("P5\n2 2\n255\n") + '\x7f' + '\x80' + '\x00' + '\xff');
    // target size equals source so no resampling obscures the values
    Sample<double> s = load_sample<double>(rgb, dep, gt, 2);
    EXPECT_NEAR(s.depth.at({0, 0, 0}), 0.0, 1e-12);
    EXPECT_NEAR(s.depth.at({0, 0, 1}), 1.0, 1e-12);
    EXPECT_EQ(s.gt.at({0, 0, 0}), 0.0);  // 127/255 < 0.5
    EXPECT_EQ(s.gt.at({0, 0, 1}), 1.0);  // 128/255 >= 0.5
    for (double v : s.gt.vec()) EXPECT_TRUE(v == 0.0 || v == 1.0);
}

TEST(LoadSample, SixteenBitNormalization) {
    TempDir td;
    std::string rgb = td.file("r.ppm");
    write_bytes(rgb, std::string("P6\n1 1\n255\n") + std::string(3, '\x10'));
    std::string dep = td.file("d.pgm");
    write_bytes(dep, std::string("P5\n1 1\n65535\n") + '\x80' + '\x00');
    Sample<double> s = load_sample<double>(rgb, dep, "", 32);
    EXPECT_NEAR(s.depth.at({0, 0, 0}), 32768.0 / 65535.0, 1e-9);
    EXPECT_FALSE(s.gt.defined());
}

TEST(RoundTrip, SampleWithinHalfQuantizationStep) {
    std::vector<Sample<float>> set = synth_samples<float>(7, 1, 32);
    TempDir td;
    synth_generate<float>(7, 1, 32, td.path.string());
    Sample<float> back = load_sample<float>(td.file("sample0_rgb.ppm"), td.file("sample0_depth.pgm"),
                                            td.file("sample0_gt.pgm"), 32);
    for (long i = 0; i < set[0].rgb.size(); ++i)
        EXPECT_NEAR(back.rgb.vec()[i], set[0].rgb.vec()[i], 1.0 / 510.0);
    for (long i = 0; i < set[0].depth.size(); ++i)
        EXPECT_NEAR(back.depth.vec()[i], set[0].depth.vec()[i], 1.0 / 510.0);
    EXPECT_EQ(back.gt.vec(), set[0].gt.vec());
}

TEST(Augment, DeterministicGivenSeed) {
    Sample<float> s = synth_sample<float>(1, 0, 32);
    Rng r1(42), r2(42);
    Sample<float> a = augment(s, r1), b = augment(s, r2);
    EXPECT_EQ(a.rgb.vec(), b.rgb.vec());
    EXPECT_EQ(a.depth.vec(), b.depth.vec());
    EXPECT_EQ(a.gt.vec(), b.gt.vec());
}

TEST(Augment, FlipIsInvolution) {
    Sample<float> s = synth_sample<float>(2, 0, 32);
    Sample<float> ff = flip_horizontal(flip_horizontal(s));
    EXPECT_EQ(ff.rgb.vec(), s.rgb.vec());
    EXPECT_EQ(ff.gt.vec(), s.gt.vec());
}

TEST(Augment, Rot90FourTimesIsIdentity) {
    Sample<float> s = synth_sample<float>(3, 0, 32);
    Sample<float> r = rotate90(s, 4);
    EXPECT_EQ(r.rgb.vec(), s.rgb.vec());
    Sample<float> once = rotate90(s, 1);
    EXPECT_EQ(rotate90(once, 3).rgb.vec(), s.rgb.vec());
}

TEST(Augment, GtStaysBinary) {
    Sample<float> s = synth_sample<float>(4, 0, 32);
    for (unsigned long long seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        Sample<float> a = augment(s, rng);
        for (float v : a.gt.vec()) EXPECT_TRUE(v == 0.0f || v == 1.0f) << "seed " << seed;
        EXPECT_EQ(a.rgb.dim(1), 32);
        EXPECT_EQ(a.rgb.dim(2), 32);
    }
}

TEST(Augment, SpatialAlignmentViaDeltaImage) {
    // mark one pixel in every map; the mark must land at the same place in all
    Sample<float> s;
    s.rgb = Tensor<float>::zeros({3, 16, 16});
    s.depth = Tensor<float>::zeros({1, 16, 16});
    s.gt = Tensor<float>::zeros({1, 16, 16});
    long y = 3, x = 11;
    for (int c = 0; c < 3; ++c) s.rgb.vec()[(c * 16 + y) * 16 + x] = 1.0f;
    s.depth.vec()[y * 16 + x] = 1.0f;
    s.gt.vec()[y * 16 + x] = 1.0f;
    Sample<float> f = rotate90(flip_horizontal(s), 1);
    // find the hot pixel in each map; positions must agree
    auto argmax = [](const std::vector<float>& v, long off, long n) {
        long best = 0;
        for (long i = 0; i < n; ++i)
            if (v[off + i] > v[off + best]) best = i;
        return best;
    };
    long pd = argmax(f.depth.vec(), 0, 256);
    long pg = argmax(f.gt.vec(), 0, 256);
    long pr = argmax(f.rgb.vec(), 0, 256);
    EXPECT_EQ(pd, pg);
    EXPECT_EQ(pd, pr);
}

TEST(Synth, DeterministicAndNonEmpty) {
    auto a = synth_samples<float>(0, 4, 32);
    auto b = synth_samples<float>(0, 4, 32);
    ASSERT_EQ(a.size(), 4u);
    for (size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(a[i].rgb.vec(), b[i].rgb.vec());
        EXPECT_EQ(a[i].gt.vec(), b[i].gt.vec());
        double cov = 0;
        for (float v : a[i].gt.vec()) cov += v;
        EXPECT_GT(cov, 0.0);
    }
    auto c = synth_samples<float>(1, 1, 32);
    EXPECT_NE(c[0].rgb.vec(), a[0].rgb.vec());
    EXPECT_THROW(synth_samples<float>(0, 1, 33), DataError);
}

TEST(Synth, CoverageBounds) {
    for (unsigned long long seed = 0; seed < 3; ++seed)
        for (long i = 0; i < 8; ++i) {
            Sample<float> s = synth_sample<float>(seed, i, 64);
            double cov = 0;
            for (float v : s.gt.vec()) cov += v;
            cov /= (double)s.gt.size();
            EXPECT_GE(cov, 0.02) << "seed " << seed << " index " << i;
            EXPECT_LE(cov, 0.6) << "seed " << seed << " index " << i;
        }
}

TEST(Synth, DepthContrast) {
    // objects sit closer (lower depth) than the background on average
    Sample<float> s = synth_sample<float>(5, 0, 64);
    double fg = 0, bg = 0, nfg = 0, nbg = 0;
    for (long i = 0; i < s.gt.size(); ++i) {
        if (s.gt.vec()[i] > 0.5) {
            fg += s.depth.vec()[i];
            ++nfg;
        } else {
            bg += s.depth.vec()[i];
            ++nbg;
        }
    }
    EXPECT_LT(fg / nfg, bg / nbg);
}

TEST(Manifest, ParsingAndErrors) {
    TempDir td;
    synth_generate<float>(9, 2, 32, td.path.string());
    auto entries = load_manifest(td.file("manifest.txt"));
    ASSERT_EQ(entries.size(), 2u);
    EXPECT_NE(entries[0].rgb.find("sample0_rgb.ppm"), std::string::npos);
    EXPECT_FALSE(entries[0].gt.empty());
    // two-column manifest: inference mode, no gt
    write_bytes(td.file("infer.txt"), "a.ppm\tb.pgm\n");
    auto inf = load_manifest(td.file("infer.txt"));
    ASSERT_EQ(inf.size(), 1u);
    EXPECT_TRUE(inf[0].gt.empty());
    write_bytes(td.file("bad.txt"), "only_one_column\n");
    EXPECT_THROW(load_manifest(td.file("bad.txt")), DataError);
    EXPECT_THROW(load_manifest(td.file("nope.txt")), DataError);
}

TEST(Batch, StacksAndValidates) {
    auto set = synth_samples<float>(11, 3, 32);
    Tensor<float> rgb = stack_batch(set, {0, 2}, &Sample<float>::rgb);
    EXPECT_EQ(rgb.shape(), (Shape{2, 3, 32, 32}));
    EXPECT_EQ(std::vector<float>(rgb.vec().begin(), rgb.vec().begin() + set[0].rgb.size()),
              set[0].rgb.vec());
    auto other = synth_samples<float>(11, 1, 64);
    set.push_back(other[0]);
    EXPECT_THROW(stack_batch(set, {0, 3}, &Sample<float>::rgb), ShapeError);
}
