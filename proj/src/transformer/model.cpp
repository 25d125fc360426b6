#include "swtt/model.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "swtt/errors.hpp"
#include "swtt/kv_cache.hpp"
#include "swtt/ops.hpp"
#include "swtt/random.hpp"
#include "swtt/rope.hpp"

namespace swtt {

namespace {

constexpr double kInitStd = 0.02;

Var normal_param(Rng& rng, Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.truncated_normal(kInitStd);
    return Var(std::move(t), true);
}

Var const_param(Shape shape, double v) { return Var(Tensor(std::move(shape), v), true); }

Linear make_linear(Rng& rng, std::size_t in, std::size_t out, bool zero = false) {
    return {zero ? const_param({in, out}, 0.0) : normal_param(rng, {in, out}), const_param({out}, 0.0)};
}

std::string join_schedule(const ScaleSchedule& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i].h) + "x" + std::to_string(s[i].w);
    }
    return out;
}

ScaleSchedule parse_schedule(const std::string& text) {
    std::vector<GridSize> sizes;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto x = item.find('x');
        if (x == std::string::npos) throw ConfigError("bad schedule entry '" + item + "'");
        sizes.push_back({std::stoul(item.substr(0, x)), std::stoul(item.substr(x + 1))});
    }
    return ScaleSchedule(std::move(sizes));
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

const std::string& require_key(const KeyValues& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("model config is missing '" + key + "'");
    return it->second;
}

bool parse_bool(const std::string& s) {
    if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "off" || s == "no") return false;
    throw ConfigError("bad boolean '" + s + "'");
}

}  // namespace

void ModelConfig::validate() const {
    if (depth == 0 || width == 0 || heads == 0 || vocab == 0 || channels == 0 || text_width == 0 || ffn_hidden == 0) {
        throw ConfigError("model dimensions must be positive");
    }
    if (width % heads != 0) {
        throw ConfigError("width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) + " heads");
    }
    if (head_dim() % 4 != 0) throw ConfigError("2D RoPE needs a head dimension divisible by 4");
    if (prompt_vocab.empty()) throw ConfigError("prompt vocabulary needs the null token");
    if (rope_max_size == 0) throw ConfigError("rope_max_size must be positive");
}

KeyValues config_to_kv(const ModelConfig& c) {
    KeyValues kv;
    kv["depth"] = std::to_string(c.depth);
    kv["width"] = std::to_string(c.width);
    kv["heads"] = std::to_string(c.heads);
    kv["ffn_hidden"] = std::to_string(c.ffn_hidden);
    kv["vocab"] = std::to_string(c.vocab);
    kv["channels"] = std::to_string(c.channels);
    kv["text_width"] = std::to_string(c.text_width);
    std::string pv;
    for (std::size_t i = 0; i < c.prompt_vocab.size(); ++i) pv += (i ? "," : "") + c.prompt_vocab[i];
    kv["prompt_vocab"] = pv;
    kv["schedule"] = join_schedule(c.schedule);
    kv["regime"] = to_string(c.regime);
    kv["rope_theta"] = fmt_double(c.rope_theta);
    kv["rope_max_size"] = std::to_string(c.rope_max_size);
    kv["high_precision_head"] = c.variant.high_precision_head ? "true" : "false";
    kv["sandwich_norm"] = c.variant.sandwich_norm ? "true" : "false";
    kv["swiglu"] = c.variant.swiglu ? "true" : "false";
    kv["seed"] = std::to_string(c.seed);
    return kv;
}

ModelConfig config_from_kv(const KeyValues& kv) {
    ModelConfig c;
    try {
        c.depth = std::stoul(require_key(kv, "depth"));
        c.width = std::stoul(require_key(kv, "width"));
        c.heads = std::stoul(require_key(kv, "heads"));
        c.ffn_hidden = std::stoul(require_key(kv, "ffn_hidden"));
        c.vocab = std::stoul(require_key(kv, "vocab"));
        c.channels = std::stoul(require_key(kv, "channels"));
        c.text_width = std::stoul(require_key(kv, "text_width"));
        c.prompt_vocab.clear();
        std::stringstream ss(require_key(kv, "prompt_vocab"));
        std::string item;
        while (std::getline(ss, item, ',')) c.prompt_vocab.push_back(item);
        c.schedule = parse_schedule(require_key(kv, "schedule"));
        c.regime = parse_regime(require_key(kv, "regime"));
        c.rope_theta = std::stod(require_key(kv, "rope_theta"));
        c.rope_max_size = std::stoul(require_key(kv, "rope_max_size"));
        c.variant.high_precision_head = parse_bool(require_key(kv, "high_precision_head"));
        c.variant.sandwich_norm = parse_bool(require_key(kv, "sandwich_norm"));
        c.variant.swiglu = parse_bool(require_key(kv, "swiglu"));
        c.seed = std::stoull(require_key(kv, "seed"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("malformed model config value: ") + e.what());
    } catch (const std::out_of_range& e) {
        throw ConfigError(std::string("model config value out of range: ") + e.what());
    }
    c.validate();
    return c;
}

Var Linear::operator()(const Var& x) const { return ops::linear(x, w, b); }

Model::Model(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    Rng rng(config_.seed);
    const std::size_t d = config_.width, tw = config_.text_width, hd = config_.head_dim();
    prompt_table_ = normal_param(rng, {config_.prompt_vocab.size(), tw});
    crop_proj_ = make_linear(rng, kCropFeatures, tw);
    start_ = normal_param(rng, {1, d});
    start_proj_ = make_linear(rng, tw, d);
    input_proj_ = make_linear(rng, config_.channels, d);
    level_ = normal_param(rng, {config_.schedule.size(), d});
    position_ = normal_param(rng, {config_.schedule.total_tokens(), d});
    for (std::size_t l = 0; l < config_.depth; ++l) {
        BlockParams b;
        b.ada = make_linear(rng, tw, 6 * d, true);
        b.q = make_linear(rng, d, d);
        b.k = make_linear(rng, d, d);
        b.v = make_linear(rng, d, d);
        b.o = make_linear(rng, d, d);
        b.q_gain = const_param({hd}, 1.0);
        b.k_gain = const_param({hd}, 1.0);
        b.cq = make_linear(rng, d, d);
        b.ck = make_linear(rng, tw, d);
        b.cv = make_linear(rng, tw, d);
        b.co = make_linear(rng, d, d);
        b.cq_gain = const_param({hd}, 1.0);
        b.ck_gain = const_param({hd}, 1.0);
        b.ffn_in = make_linear(rng, d, config_.ffn_hidden);
        b.ffn_gate = make_linear(rng, d, config_.ffn_hidden);
        b.ffn_out = make_linear(rng, config_.ffn_hidden, d);
        b.post_attn_gain = const_param({d}, 1.0);
        b.post_cross_gain = const_param({d}, 1.0);
        b.post_ffn_gain = const_param({d}, 1.0);
        blocks_.push_back(std::move(b));
    }
    head_gain_ = const_param({d}, 1.0);
    head_ = make_linear(rng, d, config_.vocab);
}

std::vector<std::pair<std::string, Var>> Model::named_parameters() const {
    std::vector<std::pair<std::string, Var>> out;
    auto lin = [&out](const std::string& name, const Linear& l) {
        out.emplace_back(name + ".w", l.w);
        out.emplace_back(name + ".b", l.b);
    };
    out.emplace_back("prompt_table", prompt_table_);
    lin("crop_proj", crop_proj_);
    out.emplace_back("start", start_);
    lin("start_proj", start_proj_);
    lin("input_proj", input_proj_);
    out.emplace_back("level", level_);
    out.emplace_back("position", position_);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const BlockParams& b = blocks_[l];
        const std::string p = "blocks." + std::to_string(l) + ".";
        lin(p + "ada", b.ada);
        lin(p + "q", b.q);
        lin(p + "k", b.k);
        lin(p + "v", b.v);
        lin(p + "o", b.o);
        out.emplace_back(p + "q_gain", b.q_gain);
        out.emplace_back(p + "k_gain", b.k_gain);
        lin(p + "cq", b.cq);
        lin(p + "ck", b.ck);
        lin(p + "cv", b.cv);
        lin(p + "co", b.co);
        out.emplace_back(p + "cq_gain", b.cq_gain);
        out.emplace_back(p + "ck_gain", b.ck_gain);
        lin(p + "ffn_in", b.ffn_in);
        lin(p + "ffn_gate", b.ffn_gate);
        lin(p + "ffn_out", b.ffn_out);
        out.emplace_back(p + "post_attn_gain", b.post_attn_gain);
        out.emplace_back(p + "post_cross_gain", b.post_cross_gain);
        out.emplace_back(p + "post_ffn_gain", b.post_ffn_gain);
    }
    out.emplace_back("head_gain", head_gain_);
    lin("head", head_);
    return out;
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : named_parameters()) n += v.value().size();
    return n;
}

Var Model::parameter(const std::string& name) const {
    for (const auto& [n, v] : named_parameters())
        if (n == name) return v;
    throw UsageError("no parameter named '" + name + "'");
}

void Model::zero_sublayer_outputs() {
    for (BlockParams& b : blocks_) {
        for (Linear* l : {&b.o, &b.co, &b.ffn_out}) {
            l->w.mutable_value().fill(0.0);
            l->b.mutable_value().fill(0.0);
        }
    }
}

Model Model::clone() const {
    Model m(config_);
    auto dst = m.named_parameters();
    auto src = named_parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i].second.mutable_value() = src[i].second.value();
    return m;
}

Var Model::pooled_with_crop(const ConditionBundle& c) const {
    if (!c.crop) return c.pooled;
    const Var features(crop_fourier_features(*c.crop, config_.schedule.final_size()));
    return ops::add(c.pooled, crop_proj_(features));
}

Var Model::embed_inputs(std::span<const ConditionBundle> conds, std::span<const ScaleInputs> inputs,
                        std::size_t first, std::size_t last) const {
    const ScaleSchedule& sched = config_.schedule;
    std::vector<Var> pieces;
    for (std::size_t b = 0; b < conds.size(); ++b) {
        if (inputs[b].maps.size() != last - first + 1) {
            throw UsageError("model input has " + std::to_string(inputs[b].maps.size()) + " maps for " +
                             std::to_string(last - first + 1) + " scales");
        }
        for (std::size_t s = first; s <= last; ++s) {
            Var piece;
            if (s == 0) {
                piece = ops::add(start_, start_proj_(pooled_with_crop(conds[b])));
            } else {
                const Tensor& map = inputs[b].maps[s - first];
                if (map.shape() != Shape{sched.tokens(s), config_.channels}) {
                    throw UsageError("input map for scale " + std::to_string(s + 1) + " has shape " +
                                     shape_str(map.shape()) + ", expected [" + std::to_string(sched.tokens(s)) + ", " +
                                     std::to_string(config_.channels) + "]");
                }
                piece = input_proj_(Var(map));
            }
            piece = ops::add(piece, ops::slice_rows(position_, sched.offset(s), sched.offset(s) + sched.tokens(s)));
            pieces.push_back(ops::add_rowvec(piece, ops::slice_rows(level_, s, s + 1)));
        }
    }
    return ops::concat_rows(pieces);
}

Var Model::head_logits(const Var& x) const {
    auto norm = [&](const Var& h) {
        return config_.variant.sandwich_norm ? ops::rms_norm(h, config_.width, head_gain_) : ops::layer_norm(h);
    };
    if (config_.variant.high_precision_head) {
        PrecisionScope full(Precision::Double);
        return head_(norm(x));
    }
    const Var h = ops::round_bf16(norm(x));
    return ops::round_bf16(ops::linear(h, ops::round_bf16(head_.w), head_.b));
}

namespace {

struct ForwardLayout {
    std::size_t batch = 0;
    std::size_t tokens = 0;  // per sample
    std::vector<ops::AttentionBlock> self_blocks;
    std::vector<ops::AttentionBlock> cross_blocks;
    Tensor rope_cos;
    Tensor rope_sin;
};

// Splits [R, 6D] modulation into shift/scale/gate for attention and FFN.
struct Modulation {
    Var shift1, scale1, gate1, shift2, scale2, gate2;
};

Modulation split_modulation(const Var& m, std::size_t d) {
    return {ops::slice_cols(m, 0, d),         ops::slice_cols(m, d, 2 * d),     ops::slice_cols(m, 2 * d, 3 * d),
            ops::slice_cols(m, 3 * d, 4 * d), ops::slice_cols(m, 4 * d, 5 * d), ops::slice_cols(m, 5 * d, 6 * d)};
}

Var modulate(const Var& h, const Var& shift, const Var& scale) {
    return ops::add(ops::mul(h, ops::add_scalar(scale, 1.0)), shift);
}

double mean_row_norm(const Tensor& x) {
    double total = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double s = 0.0;
        for (double v : x.row(r)) s += v * v;
        total += std::sqrt(s);
    }
    return total / static_cast<double>(x.rows());
}

}  // namespace

Var Model::forward(std::span<const ConditionBundle> conds, std::span<const ScaleInputs> inputs, std::size_t first,
                   std::size_t last, const ForwardOptions& opts) const {
    const ScaleSchedule& sched = config_.schedule;
    if (conds.empty() || conds.size() != inputs.size()) {
        throw UsageError("forward needs one condition per input sample");
    }
    if (first > last || last >= sched.size()) {
        throw UsageError("forward scale range [" + std::to_string(first + 1) + ", " + std::to_string(last + 1) +
                         "] outside a " + std::to_string(sched.size()) + "-scale schedule");
    }
    if (opts.cache != nullptr) {
        if (config_.regime != AttentionRegime::BlockCausal) {
            throw UsageError("KV cache used with a block-diagonal model");
        }
        if (conds.size() != 1) throw UsageError("KV-cached forward takes a single sample");
        if (opts.cache->depth() != config_.depth) throw UsageError("KV cache depth does not match the model");
    } else if (config_.regime == AttentionRegime::BlockCausal && first != 0) {
        throw UsageError("block-causal forward without a KV cache must start at scale 1");
    }

    ForwardLayout lay;
    lay.batch = conds.size();
    lay.tokens = sched.offset(last) + sched.tokens(last) - sched.offset(first);
    const std::size_t cached = opts.cache ? opts.cache->length() : 0;
    std::size_t cond_offset = 0;
    for (std::size_t b = 0; b < lay.batch; ++b) {
        const std::size_t row0 = b * lay.tokens;
        const auto blocks =
            config_.regime == AttentionRegime::BlockCausal
                ? attention_blocks(sched, config_.regime, first, last, row0, opts.cache ? 0 : row0,
                                   opts.cache ? cached : sched.offset(first))
                : attention_blocks(sched, config_.regime, first, last, row0, row0, 0);
        lay.self_blocks.insert(lay.self_blocks.end(), blocks.begin(), blocks.end());
        const std::size_t len = conds[b].length();
        lay.cross_blocks.push_back({row0, row0 + lay.tokens, cond_offset, cond_offset + len});
        cond_offset += len;
    }
    const std::size_t pairs = config_.head_dim() / 2;
    lay.rope_cos = Tensor({lay.batch * lay.tokens, pairs});
    lay.rope_sin = Tensor({lay.batch * lay.tokens, pairs});
    {
        std::vector<Position2D> pos;
        for (std::size_t s = first; s <= last; ++s) {
            const auto p = normalized_positions(sched[s], config_.rope_max_size);
            pos.insert(pos.end(), p.begin(), p.end());
        }
        const RopeTables t = rope2d_tables(pos, config_.head_dim(), config_.rope_theta);
        for (std::size_t b = 0; b < lay.batch; ++b) {
            std::copy(t.cos.data().begin(), t.cos.data().end(), lay.rope_cos.ptr() + b * t.cos.size());
            std::copy(t.sin.data().begin(), t.sin.data().end(), lay.rope_sin.ptr() + b * t.sin.size());
        }
    }

    PrecisionScope precision(opts.block_precision);
    std::vector<Var> pooled, cond_rows;
    for (const ConditionBundle& c : conds) {
        pooled.push_back(pooled_with_crop(c));
        cond_rows.push_back(c.tokens);
    }
    const Var pooled_all = ops::silu(ops::concat_rows(pooled));
    const Var cond_tokens = ops::concat_rows(cond_rows);
    const std::vector<std::size_t> repeat(lay.batch, lay.tokens);

    Var x = embed_inputs(conds, inputs, first, last);
    if (opts.block_norms) opts.block_norms->clear();
    const std::size_t d = config_.width, hd = config_.head_dim(), heads = config_.heads;
    const double logit_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const bool sandwich = config_.variant.sandwich_norm;
    auto norm_in = [&](const Var& h) { return sandwich ? ops::rms_norm(h, d) : ops::layer_norm(h); };

    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const BlockParams& p = blocks_[l];
        const Modulation m = split_modulation(ops::repeat_rows(p.ada(pooled_all), repeat), d);

        // Self-attention.
        Var h = modulate(norm_in(x), m.shift1, m.scale1);
        Var q = ops::rope_rotate(ops::rms_norm(p.q(h), hd, p.q_gain), lay.rope_cos, lay.rope_sin, heads);
        Var k = ops::rope_rotate(ops::rms_norm(p.k(h), hd, p.k_gain), lay.rope_cos, lay.rope_sin, heads);
        Var v = p.v(h);
        if (opts.cache) {
            const bool has_prefix = opts.cache->length(l) > 0;
            const std::vector<Var> ks{Var(opts.cache->read_keys(l)), k};
            const std::vector<Var> vs{Var(opts.cache->read_values(l)), v};
            opts.cache->extend(l, k.value(), v.value());
            if (has_prefix) {
                k = ops::concat_rows(ks);
                v = ops::concat_rows(vs);
            }
        }
        ops::AttentionProbe self_probe;
        if (opts.recorder && opts.recorder->self_attention) {
            self_probe = [&, l](std::size_t head, std::size_t row, std::size_t k0, std::span<const double> pr) {
                opts.recorder->self_attention(l, head, row, k0, pr);
            };
        }
        Var a = p.o(ops::attention(q, k, v, heads, lay.self_blocks, logit_scale, &self_probe));
        if (sandwich) a = ops::rms_norm(a, d, p.post_attn_gain);
        x = ops::add(x, ops::mul(a, ops::add_scalar(m.gate1, 1.0)));

        // Cross-attention to the condition tokens.
        h = norm_in(x);
        const Var cq = ops::rms_norm(p.cq(h), hd, p.cq_gain);
        const Var ck = ops::rms_norm(p.ck(cond_tokens), hd, p.ck_gain);
        const Var cv = p.cv(cond_tokens);
        ops::AttentionProbe cross_probe;
        if (opts.recorder && opts.recorder->cross_attention) {
            cross_probe = [&, l](std::size_t head, std::size_t row, std::size_t k0, std::span<const double> pr) {
                opts.recorder->cross_attention(l, head, row, k0, pr);
            };
        }
        Var c = p.co(ops::attention(cq, ck, cv, heads, lay.cross_blocks, logit_scale, &cross_probe));
        if (sandwich) c = ops::rms_norm(c, d, p.post_cross_gain);
        x = ops::add(x, c);

        // Feed-forward.
        h = modulate(norm_in(x), m.shift2, m.scale2);
        Var f = config_.variant.swiglu ? ops::mul(ops::silu(p.ffn_in(h)), p.ffn_gate(h)) : ops::gelu(p.ffn_in(h));
        f = p.ffn_out(f);
        if (sandwich) f = ops::rms_norm(f, d, p.post_ffn_gain);
        x = ops::add(x, ops::mul(f, ops::add_scalar(m.gate2, 1.0)));

        if (opts.block_norms) opts.block_norms->push_back(mean_row_norm(x.value()));
    }
    if (opts.cache) opts.cache->mark_scale(lay.tokens);
    return head_logits(x);
}

std::vector<double> activation_norm_probe(const Model& model, std::span<const ConditionBundle> conds,
                                          std::span<const ScaleInputs> inputs) {
    std::vector<double> norms;
    ForwardOptions opts;
    opts.block_norms = &norms;
    model.forward(conds, inputs, 0, model.config().schedule.size() - 1, opts);
    return norms;
}

}  // namespace swtt
