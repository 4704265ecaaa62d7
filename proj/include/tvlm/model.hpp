#pragma once

// The model stack: tiny ViT tile encoder, 2-layer MLP projector, and a
// decoder-only LM over a character vocabulary. Templated on scalar so the
// whole forward/backward path runs in 32-bit for training and 64-bit for
// gradient verification.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tvlm/anyres.hpp"
#include "tvlm/conversation.hpp"
#include "tvlm/error.hpp"
#include "tvlm/image.hpp"
#include "tvlm/rng.hpp"
#include "tvlm/tensor.hpp"
#include "tvlm/tokenizer.hpp"

namespace tvlm {

struct ProjectorConfig {
    std::int64_t in_dim = 64;
    std::int64_t hidden = 128;
    std::int64_t out_dim = 128;

    void validate() const {
        if (in_dim < 1 || hidden < 1 || out_dim < 1) throw ConfigError("projector: widths must be >= 1");
    }
    std::string describe() const {
        return "proj(" + std::to_string(in_dim) + "," + std::to_string(hidden) + "," +
               std::to_string(out_dim) + ")";
    }
};

struct LMConfig {
    std::int64_t vocab = 50;
    std::int64_t width = 128;
    std::int64_t depth = 2;
    std::int64_t heads = 4;
    std::int64_t max_seq = 512;

    void validate() const {
        if (vocab < 2 || width < 1 || depth < 1 || heads < 1 || max_seq < 2) {
            throw ConfigError("lm: invalid config");
        }
        if (width % heads != 0) throw ConfigError("lm: width must be divisible by heads");
    }
    std::string describe() const {
        return "lm(v=" + std::to_string(vocab) + ",w=" + std::to_string(width) +
               ",depth=" + std::to_string(depth) + ",heads=" + std::to_string(heads) +
               ",seq=" + std::to_string(max_seq) + ")";
    }
};

struct ModelConfig {
    EncoderConfig encoder;
    ProjectorConfig projector;
    LMConfig lm;

    void validate() const {
        encoder.validate();
        projector.validate();
        lm.validate();
        if (projector.in_dim != encoder.d) throw ConfigError("projector.in_dim must equal encoder.d");
        if (projector.out_dim != lm.width) throw ConfigError("projector.out_dim must equal lm.width");
    }
    std::string describe() const {
        return encoder.describe() + "|" + projector.describe() + "|" + lm.describe();
    }
    std::string config_hash() const {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(fnv1a64(describe())));
        return std::string(buf);
    }
};

// Component tag from a parameter name prefix.
inline std::string component_of(const std::string& name) {
    if (name.rfind("enc.", 0) == 0) return "encoder";
    if (name.rfind("proj.", 0) == 0) return "projector";
    if (name.rfind("lm.", 0) == 0) return "lm";
    throw IncompatError("unknown parameter component for '" + name + "'");
}

template <class S>
struct ParamSet {
    std::vector<std::string> names;  // insertion order
    std::map<std::string, TensorT<S>> by_name;

    TensorT<S>& add(const std::string& name, TensorT<S> t) {
        auto [it, inserted] = by_name.emplace(name, std::move(t));
        if (!inserted) throw IncompatError("duplicate parameter name '" + name + "'");
        names.push_back(name);
        return it->second;
    }
    TensorT<S>& at(const std::string& name) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw IncompatError("missing parameter '" + name + "'");
        return it->second;
    }
    const TensorT<S>& at(const std::string& name) const {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw IncompatError("missing parameter '" + name + "'");
        return it->second;
    }
};

namespace detail {

// Weight init: N(0, 0.02) seeded per tensor name so construction order is
// irrelevant; biases zero, norm gains one.
template <class S>
TensorT<S> init_normal(Shape shape, std::uint64_t seed, const std::string& name, double std_dev = 0.02) {
    Rng rng = Rng::derive(seed, name);
    std::vector<S> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) v = static_cast<S>(rng.normal() * std_dev);
    return TensorT<S>::from_data(std::move(shape), std::move(data), true);
}

}  // namespace detail

// One pre-norm transformer block's parameters, shared layout between the
// encoder and the LM.
template <class S>
struct BlockRefs {
    TensorT<S> ln1_g, ln1_b, qkv_w, qkv_b, out_w, out_b;
    TensorT<S> ln2_g, ln2_b, mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

template <class S>
void add_block_params(ParamSet<S>& ps, const std::string& prefix, std::int64_t d, std::uint64_t seed) {
    ps.add(prefix + ".ln1.g", TensorT<S>::full({d}, S(1), true));
    ps.add(prefix + ".ln1.b", TensorT<S>::zeros({d}, true));
    ps.add(prefix + ".attn.qkv.w", detail::init_normal<S>({d, 3 * d}, seed, prefix + ".attn.qkv.w"));
    ps.add(prefix + ".attn.qkv.b", TensorT<S>::zeros({3 * d}, true));
    ps.add(prefix + ".attn.out.w", detail::init_normal<S>({d, d}, seed, prefix + ".attn.out.w"));
    ps.add(prefix + ".attn.out.b", TensorT<S>::zeros({d}, true));
    ps.add(prefix + ".ln2.g", TensorT<S>::full({d}, S(1), true));
    ps.add(prefix + ".ln2.b", TensorT<S>::zeros({d}, true));
    ps.add(prefix + ".mlp.w1", detail::init_normal<S>({d, 4 * d}, seed, prefix + ".mlp.w1"));
    ps.add(prefix + ".mlp.b1", TensorT<S>::zeros({4 * d}, true));
    ps.add(prefix + ".mlp.w2", detail::init_normal<S>({4 * d, d}, seed, prefix + ".mlp.w2"));
    ps.add(prefix + ".mlp.b2", TensorT<S>::zeros({d}, true));
}

template <class S>
BlockRefs<S> block_refs(ParamSet<S>& ps, const std::string& prefix) {
    return BlockRefs<S>{ps.at(prefix + ".ln1.g"),    ps.at(prefix + ".ln1.b"),
                        ps.at(prefix + ".attn.qkv.w"), ps.at(prefix + ".attn.qkv.b"),
                        ps.at(prefix + ".attn.out.w"), ps.at(prefix + ".attn.out.b"),
                        ps.at(prefix + ".ln2.g"),    ps.at(prefix + ".ln2.b"),
                        ps.at(prefix + ".mlp.w1"),   ps.at(prefix + ".mlp.b1"),
                        ps.at(prefix + ".mlp.w2"),   ps.at(prefix + ".mlp.b2")};
}

// Additive mask with -1e9 above the diagonal; softmax then zeroes them.
template <class S>
TensorT<S> causal_mask_const(std::int64_t t) {
    std::vector<S> m(static_cast<std::size_t>(t * t), S(0));
    for (std::int64_t i = 0; i < t; ++i)
        for (std::int64_t j = i + 1; j < t; ++j) m[static_cast<std::size_t>(i * t + j)] = S(-1e9);
    return TensorT<S>::from_data({t, t}, std::move(m));
}

template <class S>
TensorT<S> multi_head_attention(const TensorT<S>& x, const BlockRefs<S>& blk, std::int64_t heads,
                                bool causal) {
    const std::int64_t t = x.dim(0), d = x.dim(1), hs = d / heads;
    auto qkv = add_rowvec(matmul(x, blk.qkv_w), blk.qkv_b);
    std::optional<TensorT<S>> mask;
    if (causal) mask = causal_mask_const<S>(t);
    std::vector<TensorT<S>> head_outs;
    head_outs.reserve(static_cast<std::size_t>(heads));
    const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hs)));
    for (std::int64_t h = 0; h < heads; ++h) {
        auto q = slice_cols(qkv, h * hs, (h + 1) * hs);
        auto k = slice_cols(qkv, d + h * hs, d + (h + 1) * hs);
        auto v = slice_cols(qkv, 2 * d + h * hs, 2 * d + (h + 1) * hs);
        auto scores = scale(matmul(q, transpose(k)), inv_sqrt);
        if (mask) scores = add(scores, *mask);
        head_outs.push_back(matmul(softmax(scores), v));
    }
    auto merged = concat_cols(head_outs);
    return add_rowvec(matmul(merged, blk.out_w), blk.out_b);
}

template <class S>
TensorT<S> transformer_block(const TensorT<S>& x, const BlockRefs<S>& blk, std::int64_t heads,
                             bool causal, S ln_eps) {
    auto attn_in = layer_norm(x, blk.ln1_g, blk.ln1_b, ln_eps);
    auto x1 = add(x, multi_head_attention(attn_in, blk, heads, causal));
    auto mlp_in = layer_norm(x1, blk.ln2_g, blk.ln2_b, ln_eps);
    auto hidden = gelu(add_rowvec(matmul(mlp_in, blk.mlp_w1), blk.mlp_b1));
    auto mlp_out = add_rowvec(matmul(hidden, blk.mlp_w2), blk.mlp_b2);
    return add(x1, mlp_out);
}

// Per-token provenance of an encoded image.
struct EmbeddingSequence {
    std::vector<std::int32_t> tile_index;              // per token
    std::vector<std::pair<std::int32_t, std::int32_t>> position;  // tile-local (row, col)
    TilePlan plan;
};

enum class Segment : std::uint8_t { vision = 0, prompt = 1, response = 2 };

// Token-level layout of one training/eval example: vision prefix then chat
// turns. targets/weights are next-token aligned; weight 0 positions carry no
// supervision.
struct AssembledSequence {
    std::vector<std::int32_t> text_ids;
    std::vector<std::int32_t> target_ids;  // length L
    std::vector<float> weights;            // length L
    std::vector<Segment> segment;          // length L
    std::int64_t vision_tokens = 0;
    std::int64_t length() const { return vision_tokens + static_cast<std::int64_t>(text_ids.size()); }
    std::vector<bool> supervision_mask() const {
        std::vector<bool> m(weights.size());
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = weights[i] > 0.0f;
        return m;
    }
};

inline const std::string kUserPrefix = "USER: ";
inline const std::string kAssistantPrefix = "ASSISTANT: ";

// Builds target/mask vectors for [vision][BOS][turn...] with next-token
// alignment. Supervision covers each supervised assistant turn's text plus
// its end-of-turn token; role literals, user text and vision positions get
// weight zero. read_turn_weight scales the supervision of assistant turns
// that transcribe text (variants tag them), 1.0 = uniform.
AssembledSequence assemble(const Conversation& conv, std::int64_t vision_tokens,
                           const Tokenizer& tok, std::int64_t max_seq,
                           float read_turn_weight = 1.0f);

// Token ids for a generation prompt: BOS + all turns + "ASSISTANT: " opener.
std::vector<std::int32_t> assemble_prompt(const Conversation& conv, const Tokenizer& tok);

template <class S>
struct VLM {
    ModelConfig cfg;
    ParamSet<S> params;
    S ln_eps = static_cast<S>(1e-5);

    static VLM init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        VLM m;
        m.cfg = cfg;
        const auto& e = cfg.encoder;
        m.params.add("enc.patch.w", detail::init_normal<S>({e.p_h * e.p_w * e.channels, e.d}, seed, "enc.patch.w"));
        m.params.add("enc.patch.b", TensorT<S>::zeros({e.d}, true));
        m.params.add("enc.pos", detail::init_normal<S>({e.n_per_tile(), e.d}, seed, "enc.pos"));
        for (std::int64_t i = 0; i < e.depth; ++i)
            add_block_params(m.params, "enc.blk" + std::to_string(i), e.d, seed);
        m.params.add("enc.lnf.g", TensorT<S>::full({e.d}, S(1), true));
        m.params.add("enc.lnf.b", TensorT<S>::zeros({e.d}, true));

        m.params.add("proj.w1", detail::init_normal<S>({cfg.projector.in_dim, cfg.projector.hidden}, seed, "proj.w1"));
        m.params.add("proj.b1", TensorT<S>::zeros({cfg.projector.hidden}, true));
        m.params.add("proj.w2", detail::init_normal<S>({cfg.projector.hidden, cfg.projector.out_dim}, seed, "proj.w2"));
        m.params.add("proj.b2", TensorT<S>::zeros({cfg.projector.out_dim}, true));

        const auto& l = cfg.lm;
        m.params.add("lm.embed", detail::init_normal<S>({l.vocab, l.width}, seed, "lm.embed"));
        m.params.add("lm.pos", detail::init_normal<S>({l.max_seq, l.width}, seed, "lm.pos"));
        for (std::int64_t i = 0; i < l.depth; ++i)
            add_block_params(m.params, "lm.blk" + std::to_string(i), l.width, seed);
        m.params.add("lm.lnf.g", TensorT<S>::full({l.width}, S(1), true));
        m.params.add("lm.lnf.b", TensorT<S>::zeros({l.width}, true));
        m.params.add("lm.head.w", detail::init_normal<S>({l.width, l.vocab}, seed, "lm.head.w"));
        m.params.add("lm.head.b", TensorT<S>::zeros({l.vocab}, true));
        return m;
    }

    std::int64_t param_count(const std::string& component = "") const {
        std::int64_t n = 0;
        for (const auto& name : params.names) {
            if (component.empty() || component_of(name) == component) n += params.by_name.at(name).numel();
        }
        return n;
    }

    // Per-tile ViT forward over prepared tiles; concatenates content tiles
    // first (plan order) then the global thumbnail. Output [total_tokens, d].
    TensorT<S> encode_tiles(const std::vector<ImageSpec>& tiles, const TilePlan& plan,
                            EmbeddingSequence* seq_info = nullptr) {
        const auto& e = cfg.encoder;
        if (static_cast<std::int64_t>(tiles.size()) != plan.tile_count()) {
            throw IncompatError("encode_tiles: tile count " + std::to_string(tiles.size()) +
                                " does not match plan (" + std::to_string(plan.tile_count()) + ")");
        }
        std::vector<BlockRefs<S>> blocks;
        for (std::int64_t i = 0; i < e.depth; ++i)
            blocks.push_back(block_refs(params, "enc.blk" + std::to_string(i)));
        auto& patch_w = params.at("enc.patch.w");
        auto& patch_b = params.at("enc.patch.b");
        auto& pos = params.at("enc.pos");
        auto& lnf_g = params.at("enc.lnf.g");
        auto& lnf_b = params.at("enc.lnf.b");

        std::vector<TensorT<S>> encoded;
        encoded.reserve(tiles.size());
        for (const auto& tile : tiles) {
            if (tile.h != e.tile_side || tile.w != e.tile_side) {
                throw IncompatError("encode_tiles: tile is " + std::to_string(tile.h) + "x" +
                                    std::to_string(tile.w) + ", expected " + std::to_string(e.tile_side));
            }
            const auto patches = patchify(tile, e.p_h, e.p_w);
            std::vector<S> flat;
            flat.reserve(patches.size() * patches[0].size());
            for (const auto& p : patches)
                for (const float v : p) flat.push_back(static_cast<S>(v));
            auto x0 = TensorT<S>::from_data({e.n_per_tile(), e.p_h * e.p_w * e.channels}, std::move(flat));
            auto x = add(add_rowvec(matmul(x0, patch_w), patch_b), pos);
            for (const auto& blk : blocks) x = transformer_block(x, blk, e.heads, false, ln_eps);
            encoded.push_back(layer_norm(x, lnf_g, lnf_b, ln_eps));
        }
        if (seq_info) {
            seq_info->plan = plan;
            seq_info->tile_index.clear();
            seq_info->position.clear();
            const std::int64_t per_row = e.tile_side / e.p_w;
            for (std::size_t t = 0; t < tiles.size(); ++t) {
                for (std::int64_t i = 0; i < e.n_per_tile(); ++i) {
                    seq_info->tile_index.push_back(static_cast<std::int32_t>(t));
                    seq_info->position.emplace_back(static_cast<std::int32_t>(i / per_row),
                                                    static_cast<std::int32_t>(i % per_row));
                }
            }
        }
        return concat_rows(encoded);
    }

    TensorT<S> encode_image(const ImageSpec& img, std::optional<std::int64_t> token_cap = std::nullopt,
                            EmbeddingSequence* seq_info = nullptr) {
        const auto plan = plan_tiles(img, cfg.encoder, token_cap);
        const auto tiles = cut_tiles(img, plan, cfg.encoder);
        return encode_tiles(tiles, plan, seq_info);
    }

    // Two linear layers with a GELU between.
    TensorT<S> project(const TensorT<S>& z) {
        if (z.dim(1) != cfg.projector.in_dim) {
            throw IncompatError("project: input width " + std::to_string(z.dim(1)) +
                                " != projector.in_dim " + std::to_string(cfg.projector.in_dim));
        }
        auto h = gelu(add_rowvec(matmul(z, params.at("proj.w1")), params.at("proj.b1")));
        return add_rowvec(matmul(h, params.at("proj.w2")), params.at("proj.b2"));
    }

    // Causal decoder over [vision][text]; returns logits [L, vocab].
    TensorT<S> lm_logits(const std::optional<TensorT<S>>& vision_proj,
                         const std::vector<std::int32_t>& text_ids) {
        const auto& l = cfg.lm;
        std::vector<TensorT<S>> rows;
        std::int64_t len = static_cast<std::int64_t>(text_ids.size());
        if (vision_proj) {
            if (vision_proj->dim(1) != l.width) {
                throw IncompatError("lm_logits: vision width != lm width");
            }
            len += vision_proj->dim(0);
            rows.push_back(*vision_proj);
        }
        if (len > l.max_seq) {
            throw ConfigError("sequence length " + std::to_string(len) + " exceeds max_seq " +
                              std::to_string(l.max_seq));
        }
        if (!text_ids.empty()) rows.push_back(embedding(params.at("lm.embed"), text_ids));
        if (rows.empty()) throw ConfigError("lm_logits: empty sequence");
        auto x = rows.size() == 1 ? rows[0] : concat_rows(rows);
        std::vector<std::int32_t> pos_ids(static_cast<std::size_t>(len));
        for (std::int64_t i = 0; i < len; ++i) pos_ids[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);
        x = add(x, embedding(params.at("lm.pos"), pos_ids));
        for (std::int64_t i = 0; i < l.depth; ++i) {
            auto blk = block_refs(params, "lm.blk" + std::to_string(i));
            x = transformer_block(x, blk, l.heads, true, ln_eps);
        }
        x = layer_norm(x, params.at("lm.lnf.g"), params.at("lm.lnf.b"), ln_eps);
        return add_rowvec(matmul(x, params.at("lm.head.w")), params.at("lm.head.b"));
    }

    // Loss for one assembled example given projected vision tokens.
    TensorT<S> example_loss(const std::optional<TensorT<S>>& vision_proj, const AssembledSequence& seq) {
        auto logits = lm_logits(vision_proj, seq.text_ids);
        std::vector<S> w(seq.weights.begin(), seq.weights.end());
        return weighted_cross_entropy(logits, seq.target_ids, w);
    }

    // Greedy decoding; pure function of (params, image, prompt). Stops at
    // EOT/EOS, max_new tokens, or the context limit.
    std::string generate_greedy(const Conversation& prompt, const ImageSpec* img,
                                std::int64_t max_new, const Tokenizer& tok,
                                std::optional<std::int64_t> token_cap = std::nullopt) {
        NoGradGuard ng;
        std::optional<TensorT<S>> vision;
        if (img) vision = project(encode_image(*img, token_cap));
        std::vector<std::int32_t> ids = assemble_prompt(prompt, tok);
        const std::int64_t vision_len = vision ? vision->dim(0) : 0;
        std::vector<std::int32_t> generated;
        for (std::int64_t step = 0; step < max_new; ++step) {
            if (vision_len + static_cast<std::int64_t>(ids.size()) >= cfg.lm.max_seq) break;
            auto logits = lm_logits(vision, ids);
            const std::int64_t last = logits.dim(0) - 1;
            const std::int32_t next = static_cast<std::int32_t>(
                argmax(logits.data() + last * cfg.lm.vocab, cfg.lm.vocab));
            if (next == Tokenizer::kEot || next == Tokenizer::kEos) break;
            ids.push_back(next);
            generated.push_back(next);
        }
        return tok.decode(generated);
    }
};

}  // namespace tvlm
