#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "riginv/model.hpp"

namespace riginv {

struct TrainConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    int batch = 32;
    int epochs = 200;
    std::uint64_t seed = 0;
    int checkpoint_every = 10;  // epochs
    std::size_t max_steps = 0;  // 0 = unlimited

    void validate() const {
        require(lr > 0.0 && std::isfinite(lr), "TrainConfig: lr must be positive");
        require(batch >= 1, "TrainConfig: batch must be >= 1");
        require(epochs >= 0, "TrainConfig: negative epochs");
        require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "TrainConfig: bad betas");
        require(eps > 0 && weight_decay >= 0, "TrainConfig: bad eps/weight_decay");
    }
};

// Decoupled weight decay applied before the bias-corrected Adam update.
// Frozen parameters are skipped entirely.
template <class T>
class AdamW {
public:
    explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) { cfg.validate(); }

    void step(ParamRegistry<T>& reg) {
        if (m_.empty()) {
            m_.resize(reg.entries().size());
            v_.resize(reg.entries().size());
        }
        require(m_.size() == reg.entries().size(), "AdamW: registry size changed");
        ++t_;
        const T bc1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, t_));
        const T bc2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, t_));
        for (std::size_t p = 0; p < reg.entries().size(); ++p) {
            auto& e = reg.entries()[p];
            if (!e.trainable) continue;
            auto& w = e.var.value().data;
            const auto& g = e.var.grad().data;
            require(g.size() == w.size(), "AdamW: grad/param shape mismatch");
            if (m_[p].size() != w.size()) {
                m_[p].assign(w.size(), T(0));
                v_[p].assign(w.size(), T(0));
            }
            const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
            const T lr = static_cast<T>(cfg_.lr), wd = static_cast<T>(cfg_.weight_decay);
            const T eps = static_cast<T>(cfg_.eps);
            for (std::size_t i = 0; i < w.size(); ++i) {
                w[i] -= lr * wd * w[i];
                m_[p][i] = b1 * m_[p][i] + (T(1) - b1) * g[i];
                v_[p][i] = b2 * v_[p][i] + (T(1) - b2) * g[i] * g[i];
                const T mhat = m_[p][i] / bc1;
                const T vhat = v_[p][i] / bc2;
                w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    std::size_t step_count() const { return t_; }

    void save(const std::string& dir) const {
        std::filesystem::create_directories(dir);
        const std::filesystem::path base(dir);
        nlohmann::json j;
        j["t"] = t_;
        j["num_params"] = m_.size();
        std::ofstream mf(base / "optim.json");
        if (!mf) throw IoError("AdamW::save: cannot open manifest");
        mf << j.dump() << "\n";
        std::ofstream blob(base / "optim.bin", std::ios::binary);
        if (!blob) throw IoError("AdamW::save: cannot open blob");
        for (const auto* moments : {&m_, &v_})
            for (const auto& t : *moments) {
                const std::uint64_t n = t.size();
                blob.write(reinterpret_cast<const char*>(&n), sizeof(n));
                blob.write(reinterpret_cast<const char*>(t.data()),
                           static_cast<std::streamsize>(n * sizeof(T)));
            }
        if (!blob) throw IoError("AdamW::save: blob write failure");
    }

    void load(const std::string& dir) {
        const std::filesystem::path base(dir);
        std::ifstream mf(base / "optim.json");
        if (!mf) throw IoError("AdamW::load: cannot open manifest in " + dir);
        nlohmann::json j;
        mf >> j;
        t_ = j.at("t").get<std::size_t>();
        const auto np = j.at("num_params").get<std::size_t>();
        m_.assign(np, {});
        v_.assign(np, {});
        std::ifstream blob(base / "optim.bin", std::ios::binary);
        if (!blob) throw IoError("AdamW::load: cannot open blob in " + dir);
        for (auto* moments : {&m_, &v_})
            for (auto& t : *moments) {
                std::uint64_t n = 0;
                blob.read(reinterpret_cast<char*>(&n), sizeof(n));
                t.resize(n);
                blob.read(reinterpret_cast<char*>(t.data()),
                          static_cast<std::streamsize>(n * sizeof(T)));
            }
        if (!blob) throw IoError("AdamW::load: blob read failure");
    }

private:
    TrainConfig cfg_;
    std::size_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

}  // namespace riginv
