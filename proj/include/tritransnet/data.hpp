#pragma once

// RGB-D sample ingestion, deterministic augmentation, the manifest format,
// and a synthetic desk-scale dataset generator.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tritransnet/image_io.hpp"
#include "tritransnet/tensor.hpp"

namespace ttn {

template <typename T>
struct Sample {
    Tensor<T> rgb;    // [3,H,W] in [0,1]
    Tensor<T> depth;  // [1,H,W] in [0,1]
    Tensor<T> gt;     // [1,H,W] binary
};

struct ManifestEntry {
    std::string rgb, depth, gt;  // gt may be empty (inference manifests)
};

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("manifest not found: " + path);
    std::filesystem::path base = std::filesystem::path(path).parent_path();
    std::vector<ManifestEntry> out;
    std::string line;
    long lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        size_t start = 0;
        for (size_t i = 0; i <= line.size(); ++i)
            if (i == line.size() || line[i] == '\t') {
                fields.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        if (fields.size() != 2 && fields.size() != 3)
            throw DataError(path + " line " + std::to_string(lineno) +
                            ": expected rgb<TAB>depth[<TAB>gt]");
        ManifestEntry e;
        e.rgb = (base / fields[0]).string();
        e.depth = (base / fields[1]).string();
        if (fields.size() == 3) e.gt = (base / fields[2]).string();
        out.push_back(std::move(e));
    }
    return out;
}

namespace data_detail {

template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
    long c = img.channels, h = img.h, w = img.w;
    std::vector<T> v((size_t)(c * h * w));
    T inv = T(1) / T(img.maxval);
    // interleaved -> planar
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
            for (long ch = 0; ch < c; ++ch)
                v[(ch * h + y) * w + x] = T(img.pix[(y * w + x) * c + ch]) * inv;
    return Tensor<T>::from({c, h, w}, std::move(v));
}

template <typename T>
Tensor<T> resize_chw(const Tensor<T>& x, long ho, long wo) {
    NoGradGuard ng;
    long c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h == ho && w == wo) return x.detach();
    return reshape(resize_bilinear(reshape(x, {1, c, h, w}), ho, wo), {c, ho, wo});
}

template <typename T>
Tensor<T> resize_nearest_chw(const Tensor<T>& x, long ho, long wo) {
    long c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h == ho && w == wo) return x.detach();
    std::vector<T> out((size_t)(c * ho * wo));
    const T* xv = x.data();
    for (long ch = 0; ch < c; ++ch)
        for (long oy = 0; oy < ho; ++oy) {
            long iy = std::min((long)(((T)oy + T(0.5)) * T(h) / T(ho)), h - 1);
            for (long ox = 0; ox < wo; ++ox) {
                long ix = std::min((long)(((T)ox + T(0.5)) * T(w) / T(wo)), w - 1);
                out[(ch * ho + oy) * wo + ox] = xv[(ch * h + iy) * w + ix];
            }
        }
    return Tensor<T>::from({c, ho, wo}, std::move(out));
}

template <typename T>
void threshold_binary(Tensor<T>& t) {
    for (auto& v : t.vec()) v = v >= T(0.5) ? T(1) : T(0);
}

}  // namespace data_detail

template <typename T>
Sample<T> load_sample(const std::string& rgb_path, const std::string& depth_path,
                      const std::string& gt_path, long target_size) {
    using namespace data_detail;
    Image rgb = read_pnm(rgb_path);
    if (rgb.channels != 3) throw DataError(rgb_path + ": expected P6 color image");
    Image dep = read_pnm(depth_path);
    if (dep.channels != 1) throw DataError(depth_path + ": expected P5 grayscale image");
    Sample<T> s;
    s.rgb = resize_chw(image_to_tensor<T>(rgb), target_size, target_size);
    s.depth = resize_chw(image_to_tensor<T>(dep), target_size, target_size);
    if (!gt_path.empty()) {
        Image gt = read_pnm(gt_path);
        if (gt.channels != 1) throw DataError(gt_path + ": expected P5 grayscale image");
        s.gt = resize_nearest_chw(image_to_tensor<T>(gt), target_size, target_size);
        threshold_binary(s.gt);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Augmentation primitives; each applies one geometric transform to all maps.

namespace data_detail {

template <typename T>
Tensor<T> flip_h_chw(const Tensor<T>& x) {
    long c = x.dim(0), h = x.dim(1), w = x.dim(2);
    std::vector<T> out((size_t)x.size());
    const T* xv = x.data();
    for (long ch = 0; ch < c; ++ch)
        for (long y = 0; y < h; ++y)
            for (long xx = 0; xx < w; ++xx)
                out[(ch * h + y) * w + xx] = xv[(ch * h + y) * w + (w - 1 - xx)];
    return Tensor<T>::from({c, h, w}, std::move(out));
}

// counter-clockwise quarter turn: out[y][x] = in[x][w_out-1-y] ... fixed below
template <typename T>
Tensor<T> rot90_chw(const Tensor<T>& x) {
    long c = x.dim(0), h = x.dim(1), w = x.dim(2);
    // output is [c, w, h]; out(y', x') = in(x', w-1-y')
    std::vector<T> out((size_t)x.size());
    const T* xv = x.data();
    for (long ch = 0; ch < c; ++ch)
        for (long oy = 0; oy < w; ++oy)
            for (long ox = 0; ox < h; ++ox)
                out[(ch * w + oy) * h + ox] = xv[(ch * h + ox) * w + (w - 1 - oy)];
    return Tensor<T>::from({c, w, h}, std::move(out));
}

template <typename T>
Tensor<T> crop_chw(const Tensor<T>& x, long top, long bottom, long left, long right) {
    long c = x.dim(0), h = x.dim(1), w = x.dim(2);
    long nh = h - top - bottom, nw = w - left - right;
    if (nh <= 0 || nw <= 0) throw ShapeError("crop: nothing left");
    std::vector<T> out((size_t)(c * nh * nw));
    const T* xv = x.data();
    for (long ch = 0; ch < c; ++ch)
        for (long y = 0; y < nh; ++y)
            for (long xx = 0; xx < nw; ++xx)
                out[(ch * nh + y) * nw + xx] = xv[(ch * h + y + top) * w + xx + left];
    return Tensor<T>::from({c, nh, nw}, std::move(out));
}

}  // namespace data_detail

template <typename T>
Sample<T> flip_horizontal(const Sample<T>& s) {
    using namespace data_detail;
    return {flip_h_chw(s.rgb), flip_h_chw(s.depth), s.gt.defined() ? flip_h_chw(s.gt) : s.gt};
}

template <typename T>
Sample<T> rotate90(const Sample<T>& s, long quarter_turns) {
    using namespace data_detail;
    Sample<T> out = s;
    for (long i = 0; i < ((quarter_turns % 4) + 4) % 4; ++i) {
        out.rgb = rot90_chw(out.rgb);
        out.depth = rot90_chw(out.depth);
        if (out.gt.defined()) out.gt = rot90_chw(out.gt);
    }
    return out;
}

template <typename T>
Sample<T> border_crop_resize(const Sample<T>& s, long top, long bottom, long left, long right) {
    using namespace data_detail;
    long h = s.rgb.dim(1), w = s.rgb.dim(2);
    Sample<T> out;
    out.rgb = resize_chw(crop_chw(s.rgb, top, bottom, left, right), h, w);
    out.depth = resize_chw(crop_chw(s.depth, top, bottom, left, right), h, w);
    if (s.gt.defined()) {
        out.gt = resize_nearest_chw(crop_chw(s.gt, top, bottom, left, right), h, w);
        threshold_binary(out.gt);
    }
    return out;
}

// Flip with probability 1/2, rotate by a uniform multiple of 90 degrees,
// crop up to 10% per side and resize back. Deterministic per rng state.
template <typename T>
Sample<T> augment(const Sample<T>& s, Rng& rng) {
    std::uniform_int_distribution<int> coin(0, 1);
    std::uniform_int_distribution<int> quarter(0, 3);
    long max_crop_h = s.rgb.dim(1) / 10, max_crop_w = s.rgb.dim(2) / 10;
    std::uniform_int_distribution<long> ch(0, max_crop_h), cw(0, max_crop_w);
    bool do_flip = coin(rng) == 1;
    int rot = quarter(rng);
    long top = ch(rng), bottom = ch(rng), left = cw(rng), right = cw(rng);
    Sample<T> out = s;
    if (do_flip) out = flip_horizontal(out);
    out = rotate90(out, rot);
    out = border_crop_resize(out, top, bottom, left, right);
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic dataset: 1-3 random rectangles/ellipses as salient objects, with
// coherent color/depth contrast and a binary mask; deterministic per seed.

template <typename T>
Sample<T> synth_sample(unsigned long long seed, long index, long size) {
    Rng rng(derive_seed(seed, 0x73796e7468, (unsigned long long)index));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    auto mask = std::vector<char>((size_t)(size * size), 0);
    double coverage = 0;
    for (int attempt = 0; attempt < 200; ++attempt) {
        std::fill(mask.begin(), mask.end(), 0);
        int n_obj = 1 + (int)(uni(rng) * 3.0);
        if (n_obj > 3) n_obj = 3;
        for (int o = 0; o < n_obj; ++o) {
            bool ellipse = uni(rng) < 0.5;
            double cy = uni(rng) * size, cx = uni(rng) * size;
            double ry = (0.06 + 0.18 * uni(rng)) * size;
            double rx = (0.06 + 0.18 * uni(rng)) * size;
            for (long y = 0; y < size; ++y)
                for (long x = 0; x < size; ++x) {
                    bool in;
                    if (ellipse) {
                        double dy = (y - cy) / ry, dx = (x - cx) / rx;
                        in = dy * dy + dx * dx <= 1.0;
                    } else {
                        in = std::abs(y - cy) <= ry && std::abs(x - cx) <= rx;
                    }
                    if (in) mask[y * size + x] = 1;
                }
        }
        long cnt = 0;
        for (char m : mask) cnt += m;
        coverage = (double)cnt / (double)(size * size);
        if (coverage >= 0.02 && coverage <= 0.6) break;
    }
    double bg_col[3], fg_col[3];
    for (int c = 0; c < 3; ++c) bg_col[c] = uni(rng);
    for (int c = 0; c < 3; ++c) fg_col[c] = uni(rng);
    // keep some color contrast so the task is learnable
    double diff = 0;
    for (int c = 0; c < 3; ++c) diff += std::abs(fg_col[c] - bg_col[c]);
    if (diff < 0.6)
        for (int c = 0; c < 3; ++c) fg_col[c] = bg_col[c] > 0.5 ? bg_col[c] - 0.4 : bg_col[c] + 0.4;
    double bg_depth = 0.6 + 0.3 * uni(rng);
    double fg_depth = 0.15 + 0.3 * uni(rng);
    // depth is imperfect: a couple of non-salient background regions sit at
    // foreground-like depth, so depth alone over-predicts saliency
    std::vector<double> dis(mask.size(), 0.0);
    int n_dis = 2 + (uni(rng) < 0.5 ? 1 : 0);
    for (int o = 0; o < n_dis; ++o) {
        bool ellipse = uni(rng) < 0.5;
        double cy = uni(rng) * size, cx = uni(rng) * size;
        double ry = (0.10 + 0.16 * uni(rng)) * size;
        double rx = (0.10 + 0.16 * uni(rng)) * size;
        double dd = 0.15 + 0.3 * uni(rng);
        for (long y = 0; y < size; ++y)
            for (long x = 0; x < size; ++x) {
                bool in;
                if (ellipse) {
                    double dy = (y - cy) / ry, dx = (x - cx) / rx;
                    in = dy * dy + dx * dx <= 1.0;
                } else {
                    in = std::abs(y - cy) <= ry && std::abs(x - cx) <= rx;
                }
                if (in && mask[y * size + x] == 0) dis[y * size + x] = dd;
            }
    }
    std::normal_distribution<double> noise(0.0, 0.02);
    std::normal_distribution<double> dnoise(0.0, 0.05);
    auto clamp01 = [](double v) { return v < 0 ? 0.0 : (v > 1 ? 1.0 : v); };
    std::vector<T> rgb((size_t)(3 * size * size)), dep((size_t)(size * size)),
        gt((size_t)(size * size));
    for (long y = 0; y < size; ++y)
        for (long x = 0; x < size; ++x) {
            bool fg = mask[y * size + x] != 0;
            for (int c = 0; c < 3; ++c)
                rgb[(c * size + y) * size + x] =
                    (T)clamp01((fg ? fg_col[c] : bg_col[c]) + noise(rng));
            double d = fg ? fg_depth : (dis[y * size + x] > 0.0 ? dis[y * size + x] : bg_depth);
            dep[y * size + x] = (T)clamp01(d + dnoise(rng));
            gt[y * size + x] = fg ? T(1) : T(0);
        }
    Sample<T> s;
    s.rgb = Tensor<T>::from({3, size, size}, std::move(rgb));
    s.depth = Tensor<T>::from({1, size, size}, std::move(dep));
    s.gt = Tensor<T>::from({1, size, size}, std::move(gt));
    return s;
}

template <typename T>
std::vector<Sample<T>> synth_samples(unsigned long long seed, long n, long size) {
    if (size % 32 != 0) throw DataError("synth: size must be divisible by 32");
    std::vector<Sample<T>> out;
    for (long i = 0; i < n; ++i) out.push_back(synth_sample<T>(seed, i, size));
    return out;
}

namespace data_detail {

template <typename T>
Image tensor_to_image8(const Tensor<T>& t) {
    long c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Image img;
    img.w = w;
    img.h = h;
    img.channels = c;
    img.maxval = 255;
    img.pix.resize((size_t)(c * h * w));
    const T* v = t.data();
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
            for (long ch = 0; ch < c; ++ch) {
                double d = (double)v[(ch * h + y) * w + x];
                long q = (long)std::llround(d * 255.0);
                img.pix[(y * w + x) * c + ch] = (std::uint16_t)std::min(std::max(q, 0L), 255L);
            }
    return img;
}

}  // namespace data_detail

// Writes n synthetic samples plus a manifest into out_dir; returns manifest path.
template <typename T>
std::string synth_generate(unsigned long long seed, long n, long size,
                           const std::string& out_dir) {
    if (size % 32 != 0) throw DataError("synth: size must be divisible by 32");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::string manifest_path = (fs::path(out_dir) / "manifest.txt").string();
    std::ofstream manifest(manifest_path);
    if (!manifest) throw DataError("cannot write manifest: " + manifest_path);
    for (long i = 0; i < n; ++i) {
        Sample<T> s = synth_sample<T>(seed, i, size);
        std::string stem = "sample" + std::to_string(i);
        write_pnm((fs::path(out_dir) / (stem + "_rgb.ppm")).string(),
                  data_detail::tensor_to_image8(s.rgb));
        write_pnm((fs::path(out_dir) / (stem + "_depth.pgm")).string(),
                  data_detail::tensor_to_image8(s.depth));
        write_pnm((fs::path(out_dir) / (stem + "_gt.pgm")).string(),
                  data_detail::tensor_to_image8(s.gt));
        manifest << stem << "_rgb.ppm\t" << stem << "_depth.pgm\t" << stem << "_gt.pgm\n";
    }
    return manifest_path;
}

// Stacks per-sample maps into batch tensors [B,C,H,W].
template <typename T>
Tensor<T> stack_batch(const std::vector<Sample<T>>& samples, const std::vector<long>& idx,
                      Tensor<T> Sample<T>::*field) {
    const Tensor<T>& first = samples[idx[0]].*field;
    long c = first.dim(0), h = first.dim(1), w = first.dim(2);
    std::vector<T> out((size_t)((long)idx.size() * c * h * w));
    for (size_t i = 0; i < idx.size(); ++i) {
        const Tensor<T>& t = samples[idx[i]].*field;
        if (t.dim(0) != c || t.dim(1) != h || t.dim(2) != w)
            throw ShapeError("batch: sample shapes differ");
        std::copy(t.vec().begin(), t.vec().end(), out.begin() + (long)i * c * h * w);
    }
    return Tensor<T>::from({(long)idx.size(), c, h, w}, std::move(out));
}

}  // namespace ttn
