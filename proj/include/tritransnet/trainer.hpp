#pragma once

// Training loop (Adam, step-decay schedule, checkpointing, resume), held-out
// evaluation, and the ablation grid.

#include <algorithm>
#include <cstring>
#include <iostream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "tritransnet/data.hpp"
#include "tritransnet/loss.hpp"
#include "tritransnet/metrics.hpp"
#include "tritransnet/model.hpp"
#include "tritransnet/tensor_io.hpp"

namespace ttn {

// Bias-corrected Adam; moment buffers indexed parallel to the parameter list.
template <typename T>
struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long step_count = 0;
    std::vector<std::vector<double>> m, v;

    void init(const ParamList<T>& params) {
        m.clear();
        v.clear();
        for (const auto& [name, t] : params.items) {
            m.emplace_back((size_t)t.size(), 0.0);
            v.emplace_back((size_t)t.size(), 0.0);
        }
        step_count = 0;
    }

    void step(ParamList<T>& params, double lr) {
        if (m.size() != params.items.size()) init(params);
        ++step_count;
        double bc1 = 1.0 - std::pow(beta1, (double)step_count);
        double bc2 = 1.0 - std::pow(beta2, (double)step_count);
        for (size_t pi = 0; pi < params.items.size(); ++pi) {
            auto& [name, t_const] = params.items[pi];
            auto& t = const_cast<Tensor<T>&>(t_const);
            const std::vector<T>& g = t.grad();
            std::vector<T>& w = t.vec();
            for (size_t i = 0; i < w.size(); ++i) {
                double gi = (double)g[i];
                if (!std::isfinite(gi))
                    throw NumericError("adam: non-finite gradient in parameter '" + name + "'");
                m[pi][i] = beta1 * m[pi][i] + (1.0 - beta1) * gi;
                v[pi][i] = beta2 * v[pi][i] + (1.0 - beta2) * gi * gi;
                double mhat = m[pi][i] / bc1;
                double vhat = v[pi][i] / bc2;
                w[i] = (T)((double)w[i] - lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

namespace train_detail {

// Moment buffers are double regardless of T; store their raw bytes so a
// resumed run is bit-identical to an uninterrupted one.
template <typename T>
Tensor<T> pack_doubles(const std::vector<double>& d) {
    long units = (long)((d.size() * sizeof(double) + sizeof(T) - 1) / sizeof(T));
    std::vector<T> raw((size_t)units, T(0));
    std::memcpy(raw.data(), d.data(), d.size() * sizeof(double));
    return Tensor<T>::from({units}, std::move(raw));
}

template <typename T>
void unpack_doubles(const Tensor<T>& t, std::vector<double>& d) {
    if ((size_t)t.size() * sizeof(T) < d.size() * sizeof(double))
        throw DataError("checkpoint: optimizer section too short");
    std::memcpy(d.data(), t.data(), d.size() * sizeof(double));
}

// Optimizer state rides along in the checkpoint as extra sections.
template <typename T>
void append_opt_sections(ParamList<T>& sections, const ParamList<T>& params, const Adam<T>& opt,
                         long next_epoch) {
    for (size_t pi = 0; pi < params.items.size(); ++pi) {
        const auto& name = params.items[pi].first;
        sections.add("opt.m." + name, pack_doubles<T>(opt.m[pi]));
        sections.add("opt.v." + name, pack_doubles<T>(opt.v[pi]));
    }
    sections.add("opt.state",
                 Tensor<T>::from({2}, {(T)opt.step_count, (T)next_epoch}));
}

}  // namespace train_detail

template <typename T>
struct TrainState {
    TriTransNet<T> model;
    ParamList<T> params;
    Adam<T> opt;
    long next_epoch = 0;  // first epoch not yet run
    long global_step = 0;
};

template <typename T>
void save_train_checkpoint(const std::string& path, const TrainConfig& cfg, TrainState<T>& st) {
    ParamList<T> sections = st.params;
    train_detail::append_opt_sections(sections, st.params, st.opt, st.next_epoch);
    save_checkpoint(path, sections, serialize_config(cfg));
}

// Rebuilds model + optimizer from a checkpoint; config comes from the file.
template <typename T>
TrainState<T> load_train_state(const std::string& path, TrainConfig& cfg_out) {
    Checkpoint<T> ck = load_checkpoint<T>(path);
    std::istringstream is(ck.config_text);
    cfg_out = parse_train_config(parse_config_text(is));
    TrainState<T> st;
    st.model = TriTransNet<T>(cfg_out.model, cfg_out.seed);
    st.params = st.model.parameters();
    restore_params(ck, st.params, path);
    st.opt.init(st.params);
    for (size_t pi = 0; pi < st.params.items.size(); ++pi) {
        const auto& name = st.params.items[pi].first;
        const Tensor<T>* m = ck.find("opt.m." + name);
        const Tensor<T>* v = ck.find("opt.v." + name);
        if (m && v) {
            train_detail::unpack_doubles(*m, st.opt.m[pi]);
            train_detail::unpack_doubles(*v, st.opt.v[pi]);
        }
    }
    if (const Tensor<T>* s = ck.find("opt.state")) {
        st.opt.step_count = (long)std::llround((double)s->vec()[0]);
        st.next_epoch = (long)std::llround((double)s->vec()[1]);
        st.global_step = st.opt.step_count;
    }
    return st;
}

// Loads only model weights for inference/evaluation.
template <typename T>
TriTransNet<T> load_model(const std::string& path, TrainConfig& cfg_out) {
    Checkpoint<T> ck = load_checkpoint<T>(path);
    std::istringstream is(ck.config_text);
    cfg_out = parse_train_config(parse_config_text(is));
    TriTransNet<T> model(cfg_out.model, cfg_out.seed);
    ParamList<T> params = model.parameters();
    restore_params(ck, params, path);
    return model;
}

// Runs (or resumes) the loop; writes `step epoch loss lr` lines to `log` and a
// checkpoint at the configured cadence plus at the end. On NaN loss the last
// written checkpoint is kept and NumericError is thrown.
template <typename T>
TrainState<T> train(const TrainConfig& cfg, const std::vector<Sample<T>>& samples,
                    const std::string& checkpoint_path, std::ostream& log,
                    const std::string& resume_path = "") {
    if (samples.empty()) throw DataError("train: dataset is empty");
    TrainState<T> st;
    if (!resume_path.empty()) {
        TrainConfig stored;
        st = load_train_state<T>(resume_path, stored);
        // schedule/seed come from the stored config; caller config may extend epochs
        if (serialize_config(TrainConfig{cfg.model}) != serialize_config(TrainConfig{stored.model}))
            throw DataError("train: resume config does not match checkpoint model config");
    } else {
        st.model = TriTransNet<T>(cfg.model, cfg.seed);
        st.params = st.model.parameters();
        st.opt.init(st.params);
    }
    log << "# parameters " << st.params.count() << "\n";
    std::string warn = cfg.model.memory_warning();
    if (!warn.empty()) log << "# " << warn << "\n";

    long n = (long)samples.size();
    long batch = std::min(cfg.batch, n);
    bool done = false;
    for (long epoch = st.next_epoch; epoch < cfg.epochs && !done; ++epoch) {
        std::vector<long> order(n);
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(cfg.seed, 0x65706f6368, (unsigned long long)epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double lr = cfg.lr_at_epoch(epoch);
        for (long off = 0; off + batch <= n; off += batch) {
            std::vector<long> idx(order.begin() + off, order.begin() + off + batch);
            std::vector<Sample<T>> views;
            for (long j = 0; j < batch; ++j) {
                const Sample<T>& s = samples[idx[j]];
                if (cfg.augment) {
                    Rng arng(derive_seed(cfg.seed, (unsigned long long)epoch,
                                         (unsigned long long)idx[j]));
                    views.push_back(augment(s, arng));
                } else {
                    views.push_back(s);
                }
            }
            std::vector<long> all(batch);
            std::iota(all.begin(), all.end(), 0);
            Tensor<T> rgb = stack_batch(views, all, &Sample<T>::rgb);
            Tensor<T> dep = stack_batch(views, all, &Sample<T>::depth);
            Tensor<T> gt = stack_batch(views, all, &Sample<T>::gt);

            st.params.zero_grad();
            auto out = st.model.forward(rgb, dep);
            Tensor<T> loss =
                total_loss(out.final_logits, out.side_logits, gt, cfg.model.loss_window,
                           (T)cfg.model.loss_gain, (T)cfg.model.loss_smooth, cfg.model.loss_kind);
            double lv = (double)loss.item();
            if (!std::isfinite(lv))
                throw NumericError("train: non-finite loss at step " +
                                   std::to_string(st.global_step + 1) +
                                   "; last checkpoint retained");
            loss.backward();
            st.opt.step(st.params, lr);
            ++st.global_step;
            log << st.global_step << " " << epoch << " " << std::setprecision(9) << lv << " "
                << lr << "\n";
            if (cfg.max_steps > 0 && st.global_step >= cfg.max_steps) {
                done = true;
                break;
            }
        }
        st.next_epoch = epoch + 1;
        if (!checkpoint_path.empty() && cfg.checkpoint_every > 0 &&
            st.next_epoch % cfg.checkpoint_every == 0)
            save_train_checkpoint(checkpoint_path, cfg, st);
    }
    if (!checkpoint_path.empty()) save_train_checkpoint(checkpoint_path, cfg, st);
    return st;
}

// ---------------------------------------------------------------------------
// Evaluation and inference (no augmentation, no gradients).

template <typename T>
metrics::GrayMap to_graymap(const Tensor<T>& chw) {
    metrics::GrayMap g;
    g.h = chw.dim(chw.rank() - 2);
    g.w = chw.dim(chw.rank() - 1);
    g.v.assign(chw.vec().end() - g.h * g.w, chw.vec().end());
    return g;
}

template <typename T>
Tensor<T> predict(const TriTransNet<T>& model, const Sample<T>& s) {
    NoGradGuard ng;
    long h = s.rgb.dim(1), w = s.rgb.dim(2);
    Tensor<T> rgb = reshape(s.rgb, {1, 3, h, w});
    Tensor<T> dep = reshape(s.depth, {1, 1, h, w});
    return reshape(model.forward(rgb, dep).final_map(), {1, h, w});
}

template <typename T>
metrics::Report evaluate(const TriTransNet<T>& model, const std::vector<Sample<T>>& samples) {
    metrics::Evaluator ev;
    for (const auto& s : samples) {
        if (!s.gt.defined()) throw DataError("evaluate: sample has no ground truth");
        ev.add(to_graymap(predict(model, s)), to_graymap(s.gt));
    }
    return ev.report();
}

// ---------------------------------------------------------------------------
// Ablation grid: each variant is a named set of config overrides trained with
// the same seed and data, then scored on the held-out set.

struct AblationVariant {
    std::string name;
    std::vector<std::pair<std::string, std::string>> overrides;  // config keys
};

inline AblationVariant parse_variant(const std::string& text) {
    // "name:key=value,key=value"; bare "name" means no overrides
    AblationVariant v;
    auto colon = text.find(':');
    v.name = text.substr(0, colon);
    if (v.name.empty()) throw UsageError("ablation variant needs a name: '" + text + "'");
    if (colon == std::string::npos) return v;
    std::istringstream ss(text.substr(colon + 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        auto eq = tok.find('=');
        if (eq == std::string::npos)
            throw UsageError("ablation override '" + tok + "' is not key=value");
        std::string key = tok.substr(0, eq);
        if (key != "ttem" && key != "k" && key != "decoder" && key != "fusion")
            throw UsageError("unknown ablation key '" + key +
                             "' (expected ttem|k|decoder|fusion)");
        v.overrides.emplace_back(key, tok.substr(eq + 1));
    }
    return v;
}

struct AblationRow {
    std::string name;
    metrics::Report report;
};

template <typename T>
std::vector<AblationRow> ablate(const TrainConfig& base,
                                const std::vector<AblationVariant>& grid,
                                const std::vector<Sample<T>>& train_set,
                                const std::vector<Sample<T>>& test_set, std::ostream& log) {
    std::vector<AblationRow> rows;
    for (const auto& v : grid) {
        TrainConfig cfg = base;
        for (const auto& [k, val] : v.overrides) apply_config_key(cfg, k, val);
        cfg.model.validate();
        log << "# variant " << v.name << "\n";
        TrainState<T> st = train(cfg, train_set, "", log);
        rows.push_back({v.name, evaluate(st.model, test_set)});
    }
    return rows;
}

inline std::string format_ablation(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "variant          S       F       E       MAE\n";
    for (const auto& r : rows)
        os << std::left << std::setw(16) << r.name << " " << std::setw(7) << r.report.s << " "
           << std::setw(7) << r.report.f << " " << std::setw(7) << r.report.e << " "
           << std::setw(7) << r.report.mae << "\n";
    return os.str();
}

}  // namespace ttn
