#pragma once

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "riginv/autodiff.hpp"
#include "riginv/rig.hpp"

namespace riginv {

// Toy-scale hierarchical encoder geometry: four stages, 2x2 token pooling
// with dimension doubling between stages, full global attention per block.
struct ModelConfig {
    int resolution = 64;
    int patch = 4;
    std::array<int, 4> dims = {32, 64, 128, 256};
    std::array<int, 4> depths = {1, 1, 2, 1};
    std::array<int, 4> heads = {1, 2, 4, 8};
    int mlp_ratio = 4;
    int head_hidden = 256;
    int output_dim = static_cast<int>(kNumControls);
    std::vector<std::string> frozen_groups = default_frozen_groups();

    static std::vector<std::string> default_frozen_groups() {
        return {"branch_a/patch_embed", "branch_a/stage1", "branch_a/stage2", "branch_a/stage3",
                "branch_n/patch_embed", "branch_n/stage1", "branch_n/stage2", "branch_n/stage3"};
    }

    void validate() const {
        require(resolution > 0 && patch > 0, "ModelConfig: non-positive sizes");
        require(resolution % (patch * 8) == 0,
                "ModelConfig: resolution must be divisible by patch * pooling^3");
        for (int i = 0; i < 4; ++i) {
            require(dims[static_cast<std::size_t>(i)] % heads[static_cast<std::size_t>(i)] == 0,
                    "ModelConfig: dim not divisible by head count");
            require(depths[static_cast<std::size_t>(i)] >= 0, "ModelConfig: negative depth");
        }
        for (int i = 0; i < 3; ++i)
            require(dims[static_cast<std::size_t>(i + 1)] == 2 * dims[static_cast<std::size_t>(i)],
                    "ModelConfig: stage dims must double");
        require(head_hidden > 0, "ModelConfig: non-positive head width");
        require(output_dim == static_cast<int>(kNumControls), "ModelConfig: output dim must be 102");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"resolution", c.resolution}, {"patch", c.patch},       {"dims", c.dims},
         {"depths", c.depths},         {"heads", c.heads},       {"mlp_ratio", c.mlp_ratio},
         {"head_hidden", c.head_hidden}, {"output_dim", c.output_dim},
         {"frozen_groups", c.frozen_groups}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("resolution").get_to(c.resolution);
    j.at("patch").get_to(c.patch);
    j.at("dims").get_to(c.dims);
    j.at("depths").get_to(c.depths);
    j.at("heads").get_to(c.heads);
    j.at("mlp_ratio").get_to(c.mlp_ratio);
    j.at("head_hidden").get_to(c.head_hidden);
    j.at("output_dim").get_to(c.output_dim);
    j.at("frozen_groups").get_to(c.frozen_groups);
}

template <class T>
struct ParamEntry {
    std::string name;
    std::string group;
    Var<T> var;
    bool trainable = true;
};

template <class T>
class ParamRegistry {
public:
    Var<T> add(const std::string& group, const std::string& name, Tensor<T> init) {
        Var<T> v = Var<T>::leaf(std::move(init), true);
        entries_.push_back({group + "/" + name, group, v, true});
        return v;
    }

    std::vector<ParamEntry<T>>& entries() { return entries_; }
    const std::vector<ParamEntry<T>>& entries() const { return entries_; }

    void zero_grad() {
        for (auto& e : entries_) e.var.zero_grad();
    }

    std::size_t trainable_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (e.trainable) n += e.var.value().size();
        return n;
    }

    // `frozen` is the complete frozen set; everything else becomes trainable.
    void set_frozen(const std::vector<std::string>& frozen) {
        std::unordered_set<std::string> groups;
        for (const auto& e : entries_) groups.insert(e.group);
        std::unordered_set<std::string> frozen_set;
        for (const auto& g : frozen) {
            require(groups.count(g) > 0, "set_frozen: unknown parameter group '" + g + "'");
            frozen_set.insert(g);
        }
        for (auto& e : entries_) {
            e.trainable = frozen_set.count(e.group) == 0;
            e.var.set_requires_grad(e.trainable);
        }
    }

private:
    std::vector<ParamEntry<T>> entries_;
};

namespace nn {

template <class T>
struct Linear {
    Var<T> w, b;

    static Linear create(ParamRegistry<T>& reg, const std::string& group, const std::string& name,
                         std::size_t in, std::size_t out, Rng& rng, bool zero_weight = false) {
        // Xavier-scaled truncated normal: keeps token magnitudes stable
        // through the dim-doubling projections, which a flat std would shrink.
        const double std = std::sqrt(2.0 / static_cast<double>(in + out));
        Tensor<T> wt = zero_weight ? Tensor<T>({in, out})
                                   : trunc_normal_init<T>({in, out}, std, rng);
        return {reg.add(group, name + ".w", std::move(wt)),
                reg.add(group, name + ".b", Tensor<T>({out}))};
    }

    Var<T> operator()(const Var<T>& x) const { return ad::add_rowvec(ad::matmul(x, w), b); }
};

template <class T>
struct LayerNorm {
    Var<T> gamma, beta;

    static LayerNorm create(ParamRegistry<T>& reg, const std::string& group,
                            const std::string& name, std::size_t dim) {
        Tensor<T> g({dim});
        g.fill(T(1));
        return {reg.add(group, name + ".gamma", std::move(g)),
                reg.add(group, name + ".beta", Tensor<T>({dim}))};
    }

    Var<T> operator()(const Var<T>& x) const { return ad::layernorm_rows(x, gamma, beta); }
};

// Pre-norm transformer block with full global attention.
template <class T>
struct Block {
    LayerNorm<T> ln1, ln2;
    Linear<T> wq, wk, wv, wo, fc1, fc2;
    int num_heads = 1;

    static Block create(ParamRegistry<T>& reg, const std::string& group, const std::string& name,
                        std::size_t dim, int heads, int mlp_ratio, Rng& rng) {
        Block b;
        b.num_heads = heads;
        b.ln1 = LayerNorm<T>::create(reg, group, name + ".ln1", dim);
        b.wq = Linear<T>::create(reg, group, name + ".q", dim, dim, rng);
        b.wk = Linear<T>::create(reg, group, name + ".k", dim, dim, rng);
        b.wv = Linear<T>::create(reg, group, name + ".v", dim, dim, rng);
        b.wo = Linear<T>::create(reg, group, name + ".proj", dim, dim, rng);
        b.ln2 = LayerNorm<T>::create(reg, group, name + ".ln2", dim);
        b.fc1 = Linear<T>::create(reg, group, name + ".fc1", dim,
                                  dim * static_cast<std::size_t>(mlp_ratio), rng);
        b.fc2 = Linear<T>::create(reg, group, name + ".fc2",
                                  dim * static_cast<std::size_t>(mlp_ratio), dim, rng);
        return b;
    }

    Var<T> operator()(const Var<T>& x) const {
        const std::size_t dim = x.value().cols();
        const std::size_t dh = dim / static_cast<std::size_t>(num_heads);
        const Var<T> y = ln1(x);
        const Var<T> q = wq(y), k = wk(y), v = wv(y);
        std::vector<Var<T>> head_out;
        for (int h = 0; h < num_heads; ++h) {
            const std::size_t c0 = static_cast<std::size_t>(h) * dh;
            const Var<T> qh = ad::col_slice(q, c0, c0 + dh);
            const Var<T> kh = ad::col_slice(k, c0, c0 + dh);
            const Var<T> vh = ad::col_slice(v, c0, c0 + dh);
            Var<T> scores = ad::scale(ad::matmul_nt(qh, kh),
                                      static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
            head_out.push_back(ad::matmul(ad::softmax_rows(scores), vh));
        }
        Var<T> attn = wo(head_out.size() == 1 ? head_out[0] : ad::concat_cols(head_out));
        Var<T> x1 = ad::add(x, attn);
        Var<T> m = fc2(ad::gelu(fc1(ln2(x1))));
        return ad::add(x1, m);
    }
};

template <class T>
struct PatchEmbed {
    Var<T> w, b, pos;
    int channels = 3, patch = 4, grid = 16;
    std::shared_ptr<std::vector<std::size_t>> index_map;

    static PatchEmbed create(ParamRegistry<T>& reg, const std::string& group, int resolution,
                             int patch, std::size_t dim, Rng& rng) {
        PatchEmbed pe;
        pe.patch = patch;
        pe.grid = resolution / patch;
        const std::size_t np = static_cast<std::size_t>(pe.grid) * static_cast<std::size_t>(pe.grid);
        const std::size_t pd = static_cast<std::size_t>(pe.channels) *
                               static_cast<std::size_t>(patch) * static_cast<std::size_t>(patch);
        pe.w = reg.add(group, "proj.w",
                       trunc_normal_init<T>({pd, dim},
                                            std::sqrt(2.0 / static_cast<double>(pd + dim)), rng));
        pe.b = reg.add(group, "proj.b", Tensor<T>({dim}));
        pe.pos = reg.add(group, "pos", trunc_normal_init<T>({np, dim}, 0.02, rng));

        // Flat index map: row = patch, cols ordered (c, dy, dx).
        pe.index_map = std::make_shared<std::vector<std::size_t>>();
        pe.index_map->reserve(np * pd);
        const int res = resolution;
        for (int py = 0; py < pe.grid; ++py)
            for (int px = 0; px < pe.grid; ++px)
                for (int c = 0; c < pe.channels; ++c)
                    for (int dy = 0; dy < patch; ++dy)
                        for (int dx = 0; dx < patch; ++dx)
                            pe.index_map->push_back(
                                (static_cast<std::size_t>(c) * res +
                                 static_cast<std::size_t>(py * patch + dy)) * res +
                                static_cast<std::size_t>(px * patch + dx));
        return pe;
    }

    // image: flat C*H*W constant. Output: [grid*grid, dim] token rows.
    Var<T> operator()(const Var<T>& image) const {
        const std::size_t np = static_cast<std::size_t>(grid) * static_cast<std::size_t>(grid);
        const std::size_t pd = index_map->size() / np;
        require(image.value().size() == static_cast<std::size_t>(channels) *
                                            static_cast<std::size_t>(grid * patch) *
                                            static_cast<std::size_t>(grid * patch),
                "patch_embed: image size mismatch");
        Var<T> patches = ad::gather(image, index_map, {np, pd});
        return ad::add(ad::add_rowvec(ad::matmul(patches, w), b), pos);
    }
};

// One hierarchy stage: optional 2x2 max-pool + dim-doubling projection on
// entry, then `depth` attention blocks.
template <class T>
struct Stage {
    bool pooled = false;
    Linear<T> pool_proj;
    std::vector<Block<T>> blocks;

    static Stage create(ParamRegistry<T>& reg, const std::string& group, std::size_t in_dim,
                        std::size_t dim, int depth, int heads, int mlp_ratio, bool pooled,
                        Rng& rng) {
        Stage s;
        s.pooled = pooled;
        if (pooled) s.pool_proj = Linear<T>::create(reg, group, "pool", in_dim, dim, rng);
        for (int d = 0; d < depth; ++d)
            s.blocks.push_back(
                Block<T>::create(reg, group, "block" + std::to_string(d), dim, heads, mlp_ratio, rng));
        return s;
    }

    // grid is the token grid side on entry; returns the side on exit.
    Var<T> operator()(Var<T> tokens, std::size_t& grid) const {
        if (pooled) {
            tokens = pool_proj(ad::pool_max_2x2(tokens, grid, grid));
            grid /= 2;
        }
        for (const auto& b : blocks) tokens = b(tokens);
        return tokens;
    }
};

template <class T>
struct Encoder {
    PatchEmbed<T> patch_embed;
    std::array<Stage<T>, 4> stages;

    static Encoder create(ParamRegistry<T>& reg, const std::string& branch, const ModelConfig& cfg,
                          Rng& rng) {
        Encoder e;
        e.patch_embed = PatchEmbed<T>::create(reg, branch + "/patch_embed", cfg.resolution,
                                              cfg.patch, static_cast<std::size_t>(cfg.dims[0]), rng);
        for (int s = 0; s < 4; ++s) {
            const auto si = static_cast<std::size_t>(s);
            e.stages[si] = Stage<T>::create(
                reg, branch + "/stage" + std::to_string(s + 1),
                static_cast<std::size_t>(cfg.dims[si > 0 ? si - 1 : 0]),
                static_cast<std::size_t>(cfg.dims[si]), cfg.depths[si], cfg.heads[si],
                cfg.mlp_ratio, s > 0, rng);
        }
        return e;
    }

    // Full branch: patch embed, four stages, global average pool.
    Var<T> operator()(const Var<T>& image) const {
        Var<T> tokens = patch_embed(image);
        std::size_t grid = static_cast<std::size_t>(patch_embed.grid);
        for (const auto& s : stages) tokens = s(tokens, grid);
        return ad::mean_rows(tokens);  // [1, dims[3]]
    }
};

}  // namespace nn

// f_theta: two independent encoders over (appearance, normal map), features
// concatenated into a two-layer MLP head. Output is 102 raw values.
template <class T>
class DualBranchRegressor {
public:
    static DualBranchRegressor create(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        DualBranchRegressor m;
        m.cfg_ = cfg;
        m.seed_ = seed;
        Rng rng(seed);
        m.branch_a_ = nn::Encoder<T>::create(m.registry_, "branch_a", cfg, rng);
        m.branch_n_ = nn::Encoder<T>::create(m.registry_, "branch_n", cfg, rng);
        const std::size_t feat = 2 * static_cast<std::size_t>(cfg.dims[3]);
        m.head1_ = nn::Linear<T>::create(m.registry_, "head", "fc1", feat,
                                         static_cast<std::size_t>(cfg.head_hidden), rng);
        // Final layer zero-initialized: initial prediction is exactly the bias.
        m.head2_ = nn::Linear<T>::create(m.registry_, "head", "fc2",
                                         static_cast<std::size_t>(cfg.head_hidden),
                                         static_cast<std::size_t>(cfg.output_dim), rng,
                                         /*zero_weight=*/true);
        m.registry_.set_frozen(cfg.frozen_groups);
        return m;
    }

    // Inputs are flat C*H*W arrays (preprocessed). Returns [1, 102].
    Var<T> forward(const Tensor<T>& appearance, const Tensor<T>& normal_map) const {
        check_input(appearance);
        check_input(normal_map);
        const Var<T> fa = branch_a_(Var<T>::constant(appearance));
        const Var<T> fn = branch_n_(Var<T>::constant(normal_map));
        Var<T> h = ad::gelu(head1_(ad::concat_cols<T>({fa, fn})));
        return head2_(h);
    }

    Var<T> branch_a_features(const Tensor<T>& img) const {
        check_input(img);
        return branch_a_(Var<T>::constant(img));
    }
    Var<T> branch_n_features(const Tensor<T>& img) const {
        check_input(img);
        return branch_n_(Var<T>::constant(img));
    }

    void set_frozen(const std::vector<std::string>& groups) { registry_.set_frozen(groups); }
    ParamRegistry<T>& registry() { return registry_; }
    const ParamRegistry<T>& registry() const { return registry_; }
    const ModelConfig& config() const { return cfg_; }

    void save(const std::string& dir) const {
        std::filesystem::create_directories(dir);
        const std::filesystem::path base(dir);
        nlohmann::json j;
        j["format_version"] = 1;
        j["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
        j["seed"] = seed_;
        j["config"] = cfg_;
        j["params"] = nlohmann::json::array();
        std::ofstream blob(base / "model.bin", std::ios::binary);
        if (!blob) throw IoError("DualBranchRegressor::save: cannot open blob");
        std::size_t offset = 0;
        for (const auto& e : registry_.entries()) {
            j["params"].push_back({{"name", e.name},
                                   {"group", e.group},
                                   {"shape", e.var.value().shape},
                                   {"trainable", e.trainable},
                                   {"offset", offset}});
            const auto& d = e.var.value().data;
            blob.write(reinterpret_cast<const char*>(d.data()),
                       static_cast<std::streamsize>(d.size() * sizeof(T)));
            offset += d.size() * sizeof(T);
        }
        if (!blob) throw IoError("DualBranchRegressor::save: blob write failure");
        std::ofstream mf(base / "model.json");
        if (!mf) throw IoError("DualBranchRegressor::save: cannot open manifest");
        mf << j.dump(2) << "\n";
    }

    static DualBranchRegressor load(const std::string& dir) {
        const std::filesystem::path base(dir);
        std::ifstream mf(base / "model.json");
        if (!mf) throw IoError("DualBranchRegressor::load: cannot open manifest in " + dir);
        nlohmann::json j;
        mf >> j;
        const std::string dtype = j.at("dtype").get<std::string>();
        if (dtype != (sizeof(T) == 4 ? "f32" : "f64"))
            throw IoError("DualBranchRegressor::load: dtype mismatch (" + dtype + ")");
        ModelConfig cfg = j.at("config").get<ModelConfig>();
        DualBranchRegressor m = create(cfg, j.at("seed").get<std::uint64_t>());

        std::ifstream blob(base / "model.bin", std::ios::binary);
        if (!blob) throw IoError("DualBranchRegressor::load: cannot open blob in " + dir);
        const auto& params = j.at("params");
        require(params.size() == m.registry_.entries().size(),
                "DualBranchRegressor::load: parameter count mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& e = m.registry_.entries()[i];
            require(params[i].at("name").get<std::string>() == e.name,
                    "DualBranchRegressor::load: parameter name mismatch");
            const auto shape = params[i].at("shape").get<std::vector<std::size_t>>();
            require(shape == e.var.value().shape, "DualBranchRegressor::load: shape mismatch");
            blob.seekg(static_cast<std::streamoff>(params[i].at("offset").get<std::size_t>()));
            blob.read(reinterpret_cast<char*>(e.var.value().data.data()),
                      static_cast<std::streamsize>(e.var.value().data.size() * sizeof(T)));
            if (!blob) throw IoError("DualBranchRegressor::load: blob read failure");
        }
        return m;
    }

private:
    void check_input(const Tensor<T>& img) const {
        const std::size_t expected = 3 * static_cast<std::size_t>(cfg_.resolution) *
                                     static_cast<std::size_t>(cfg_.resolution);
        require(img.size() == expected, "forward: input resolution mismatch");
    }

    ModelConfig cfg_;
    std::uint64_t seed_ = 0;
    ParamRegistry<T> registry_;
    nn::Encoder<T> branch_a_, branch_n_;
    nn::Linear<T> head1_, head2_;
};

}  // namespace riginv
