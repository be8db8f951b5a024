#include "owdet/detector.hpp"

#include <cmath>

#include "owdet/container.hpp"

namespace owdet {

namespace {

constexpr char kCheckpointMagic[4] = {'O', 'W', 'B', 'C'};

// Sinusoidal encoding for one position over `dims` slots, written into out.
void sincos_into(double* out, std::int64_t dims, double pos) {
    for (std::int64_t i = 0; i < dims; i += 2) {
        const double rate = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dims));
        out[i] = std::sin(pos * rate);
        if (i + 1 < dims) out[i + 1] = std::cos(pos * rate);
    }
}

}  // namespace

Tensor lora_effective_weight(const Tensor& w, const LoraPair* pair) {
    if (!pair) return w;
    // row-vector convention: y = x (W + (B A)^T)
    return add(w, transpose(matmul(pair->up, pair->down)));
}

void DetectorConfig::validate() const {
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
        throw ConfigError("d_model must be a positive multiple of n_heads");
    if (l_fusion <= 0) throw ConfigError("l_fusion must be positive");
    if (lora_layers < 0 || lora_layers > l_fusion)
        throw ConfigError("lora_layers must lie in [0, l_fusion]");
    if (prompt_length < 0) throw ConfigError("prompt_length must be >= 0");
    if (lora_rank < 1) throw ConfigError("lora_rank must be >= 1");
    if (lora_rank > d_model)
        throw ConfigError("lora rank " + std::to_string(lora_rank) + " exceeds d_model " +
                          std::to_string(d_model));
    if (n_queries <= 0) throw ConfigError("n_queries must be positive");
    if (grid_h <= 0 || grid_w <= 0 || image_h % grid_h != 0 || image_w % grid_w != 0)
        throw ConfigError("image size must be divisible by the patch grid");
    if (ffn_hidden <= 0 || text_layers <= 0 || image_layers <= 0 || decoder_layers <= 0)
        throw ConfigError("layer counts and ffn_hidden must be positive");
    if (vocab.size() < 1) throw ConfigError("vocabulary is empty");
}

MemoryInitConfig DetectorConfig::memory_config() const {
    MemoryInitConfig m;
    m.prompt_length = prompt_length;
    m.d_model = d_model;
    m.lora_rank = lora_rank;
    m.lora_layers = lora_layers;
    m.tie_qk = tie_qk;
    return m;
}

nlohmann::json DetectorConfig::to_json() const {
    return nlohmann::json{{"d_model", d_model},
                          {"n_heads", n_heads},
                          {"l_fusion", l_fusion},
                          {"n_queries", n_queries},
                          {"grid_h", grid_h},
                          {"grid_w", grid_w},
                          {"image_h", image_h},
                          {"image_w", image_w},
                          {"prompt_length", prompt_length},
                          {"lora_rank", lora_rank},
                          {"lora_layers", lora_layers},
                          {"tie_qk", tie_qk},
                          {"ffn_hidden", ffn_hidden},
                          {"text_layers", text_layers},
                          {"image_layers", image_layers},
                          {"decoder_layers", decoder_layers},
                          {"positional_encodings", positional_encodings},
                          {"vocab", vocab.tokens()}};
}

DetectorConfig DetectorConfig::from_json(const nlohmann::json& j) {
    DetectorConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.l_fusion = j.value("l_fusion", c.l_fusion);
    c.n_queries = j.value("n_queries", c.n_queries);
    c.grid_h = j.value("grid_h", c.grid_h);
    c.grid_w = j.value("grid_w", c.grid_w);
    c.image_h = j.value("image_h", c.image_h);
    c.image_w = j.value("image_w", c.image_w);
    c.prompt_length = j.value("prompt_length", c.prompt_length);
    c.lora_rank = j.value("lora_rank", c.lora_rank);
    c.lora_layers = j.value("lora_layers", c.lora_layers);
    c.tie_qk = j.value("tie_qk", c.tie_qk);
    c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
    c.text_layers = j.value("text_layers", c.text_layers);
    c.image_layers = j.value("image_layers", c.image_layers);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.positional_encodings = j.value("positional_encodings", c.positional_encodings);
    if (j.contains("vocab")) c.vocab = Vocabulary::from_tokens(j["vocab"].get<std::vector<std::string>>());
    return c;
}

Detector::Detector(DetectorConfig config) : config_(std::move(config)) { config_.validate(); }

Detector::Detector(DetectorConfig config, Rng& init_rng) : Detector(std::move(config)) {
    init_params(init_rng);
}

void Detector::init_params(Rng& rng) {
    const std::int64_t d = config_.d_model;
    const std::int64_t h = config_.ffn_hidden;
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));

    auto add_attn = [&](const std::string& prefix, bool tied_qk) {
        if (tied_qk) {
            params_.add(prefix + ".wqk", Tensor::randn({d, d}, rng, proj_std));
        } else {
            params_.add(prefix + ".wq", Tensor::randn({d, d}, rng, proj_std));
            params_.add(prefix + ".wk", Tensor::randn({d, d}, rng, proj_std));
        }
        params_.add(prefix + ".wv", Tensor::randn({d, d}, rng, proj_std));
        params_.add(prefix + ".wo", Tensor::randn({d, d}, rng, proj_std));
    };
    auto add_ln = [&](const std::string& prefix) {
        params_.add(prefix + ".gamma", Tensor::full({d}, 1.0));
        params_.add(prefix + ".beta", Tensor::zeros({d}));
    };
    auto add_ffn = [&](const std::string& prefix) {
        params_.add(prefix + ".w1", Tensor::randn({d, h}, rng, proj_std));
        params_.add(prefix + ".w2", Tensor::randn({h, d}, rng, 1.0 / std::sqrt(static_cast<double>(h))));
    };
    auto add_block = [&](const std::string& prefix) {
        add_attn(prefix + ".attn", false);
        add_ln(prefix + ".ln1");
        add_ffn(prefix + ".ffn");
        add_ln(prefix + ".ln2");
    };

    params_.add("embed.tokens", Tensor::randn({config_.vocab.size(), d}, rng, 0.2));
    // Frozen random patch projection; the bias keeps an all-zero image from
    // collapsing to a zero embedding.
    params_.add("patch.weight", Tensor::randn({config_.patch_dim(), d}, rng,
                                              1.0 / std::sqrt(static_cast<double>(config_.patch_dim()))),
                false);
    params_.add("patch.bias", Tensor::randn({d}, rng, 0.02), false);

    for (std::int64_t i = 0; i < config_.text_layers; ++i)
        add_block("text_enc." + std::to_string(i));
    for (std::int64_t i = 0; i < config_.image_layers; ++i)
        add_block("img_enc." + std::to_string(i));

    for (std::int64_t l = 0; l < config_.l_fusion; ++l) {
        const std::string p = "fusion." + std::to_string(l);
        add_attn(p + ".img_self", false);
        add_attn(p + ".txt_self", false);
        add_attn(p + ".t_from_i", config_.tie_qk);
        add_attn(p + ".i_from_t", config_.tie_qk);
        add_ln(p + ".img.ln_self");
        add_ln(p + ".img.ln_cross");
        add_ln(p + ".img.ln_ffn");
        add_ln(p + ".txt.ln_self");
        add_ln(p + ".txt.ln_cross");
        add_ln(p + ".txt.ln_ffn");
        add_ffn(p + ".img_ffn");
        add_ffn(p + ".txt_ffn");
    }

    for (std::int64_t i = 0; i < config_.decoder_layers; ++i) {
        const std::string p = "dec." + std::to_string(i);
        add_attn(p + ".self", false);
        add_attn(p + ".cross", false);
        add_ln(p + ".ln_self");
        add_ln(p + ".ln_cross");
        add_ln(p + ".ln_ffn");
        add_ffn(p + ".ffn");
    }

    params_.add("queries", Tensor::randn({config_.n_queries, d}, rng, 0.2));
    params_.add("loc.wq", Tensor::randn({d, d}, rng, proj_std));
    params_.add("loc.wk", Tensor::randn({d, d}, rng, proj_std));
    params_.add("box_head.w1", Tensor::randn({d, d}, rng, proj_std));
    params_.add("box_head.w2", Tensor::randn({d, 4}, rng, proj_std));
    params_.add("logit_scale", Tensor::scalar(5.0));
    params_.add("logit_bias", Tensor::scalar(-2.0));
}

Detector::AttnRef Detector::attn_ref(const std::string& prefix) const {
    AttnRef ref;
    if (params_.contains(prefix + ".wqk")) {
        ref.wq = ref.wk = params_.get(prefix + ".wqk");
    } else {
        ref.wq = params_.get(prefix + ".wq");
        ref.wk = params_.get(prefix + ".wk");
    }
    ref.wv = params_.get(prefix + ".wv");
    ref.wo = params_.get(prefix + ".wo");
    return ref;
}

Tensor Detector::mha(const Tensor& queries_in, const Tensor& keys_in, const AttnRef& w,
                     const LoraPair* lora_q, const LoraPair* lora_k, const LoraPair* lora_v,
                     const Tensor* score_bias) const {
    Tensor q = matmul(queries_in, lora_effective_weight(w.wq, lora_q));
    Tensor k = matmul(keys_in, lora_effective_weight(w.wk, lora_k));
    Tensor v = matmul(keys_in, lora_effective_weight(w.wv, lora_v));

    const std::int64_t heads = config_.n_heads;
    const std::int64_t dh = config_.d_model / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (std::int64_t hd = 0; hd < heads; ++hd) {
        Tensor qh = slice(q, 1, hd * dh, (hd + 1) * dh);
        Tensor kh = slice(k, 1, hd * dh, (hd + 1) * dh);
        Tensor vh = slice(v, 1, hd * dh, (hd + 1) * dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), sc);
        if (score_bias) scores = add(scores, *score_bias);
        Tensor attn = softmax(scores);
        outs.push_back(matmul(attn, vh));
    }
    return matmul(concat(outs, 1), w.wo);
}

Tensor Detector::ln(const Tensor& x, const std::string& prefix) const {
    return layer_norm(x, params_.get(prefix + ".gamma"), params_.get(prefix + ".beta"));
}

Tensor Detector::ffn(const Tensor& x, const std::string& prefix) const {
    return matmul(gelu(matmul(x, params_.get(prefix + ".w1"))), params_.get(prefix + ".w2"));
}

Tensor Detector::encoder_block(const Tensor& x, const std::string& prefix) const {
    Tensor a = ln(add(x, mha(x, x, attn_ref(prefix + ".attn"), nullptr, nullptr, nullptr)),
                  prefix + ".ln1");
    return ln(add(a, ffn(a, prefix + ".ffn")), prefix + ".ln2");
}

EncodedImage Detector::encode_image(const ImageSample& image) const {
    if (image.height != config_.image_h || image.width != config_.image_w)
        throw InputError("image size " + std::to_string(image.width) + "x" +
                         std::to_string(image.height) + " does not match configured " +
                         std::to_string(config_.image_w) + "x" + std::to_string(config_.image_h));

    const std::int64_t ph = config_.image_h / config_.grid_h;
    const std::int64_t pw = config_.image_w / config_.grid_w;
    const std::int64_t tokens = config_.grid_h * config_.grid_w;
    const std::int64_t d = config_.d_model;
    const std::int64_t pdim = config_.patch_dim();

    // The patch projection and positional terms are frozen, so this stage is
    // computed outside the tape.
    const auto& wp = params_.get("patch.weight").values();
    const auto& bp = params_.get("patch.bias").values();
    std::vector<double> token_vals(static_cast<std::size_t>(tokens * d));
    std::vector<double> patch(static_cast<std::size_t>(pdim));
    std::vector<double> pos_row(static_cast<std::size_t>(d));
    for (std::int64_t gy = 0; gy < config_.grid_h; ++gy) {
        for (std::int64_t gx = 0; gx < config_.grid_w; ++gx) {
            const std::int64_t t = gy * config_.grid_w + gx;
            std::int64_t idx = 0;
            for (std::int64_t py = 0; py < ph; ++py)
                for (std::int64_t px = 0; px < pw; ++px)
                    for (std::int64_t c = 0; c < 3; ++c)
                        patch[static_cast<std::size_t>(idx++)] =
                            image.pixel(gy * ph + py, gx * pw + px, c);
            double* out = token_vals.data() + t * d;
            for (std::int64_t j = 0; j < d; ++j) out[j] = bp[static_cast<std::size_t>(j)];
            for (std::int64_t i = 0; i < pdim; ++i) {
                const double pv = patch[static_cast<std::size_t>(i)];
                if (pv == 0.0) continue;
                const double* wrow = wp.data() + i * d;
                for (std::int64_t j = 0; j < d; ++j) out[j] += pv * wrow[j];
            }
            if (config_.positional_encodings) {
                sincos_into(pos_row.data(), d / 2, static_cast<double>(gy));
                sincos_into(pos_row.data() + d / 2, d - d / 2, static_cast<double>(gx));
                for (std::int64_t j = 0; j < d; ++j) out[j] += pos_row[static_cast<std::size_t>(j)];
            }
        }
    }

    Tensor x = Tensor::from_values({tokens, d}, std::move(token_vals));
    for (std::int64_t i = 0; i < config_.image_layers; ++i)
        x = encoder_block(x, "img_enc." + std::to_string(i));

    EncodedImage out;
    out.features = x;
    out.global_embedding = l2_normalize(mean(x, 0));
    return out;
}

EncodedText Detector::encode_text(const ClassSentence& sentence, const ConceptMemory* concept_mem) const {
    const std::int64_t d = config_.d_model;
    Tensor table = params_.get("embed.tokens");

    std::vector<Tensor> rows;
    rows.reserve(sentence.token_ids.size());
    for (const int id : sentence.token_ids) {
        if (id < 0 || id >= config_.vocab.size())
            throw InputError("token id " + std::to_string(id) + " outside vocabulary");
        rows.push_back(slice(table, 0, id, id + 1));
    }
    Tensor embedded = rows.size() == 1 ? rows[0] : concat(rows, 0);

    if (config_.positional_encodings) {
        std::vector<double> pe(static_cast<std::size_t>(sentence.token_count() * d));
        for (std::int64_t t = 0; t < sentence.token_count(); ++t)
            sincos_into(pe.data() + t * d, d, static_cast<double>(t));
        embedded = add(embedded, Tensor::from_values({sentence.token_count(), d}, std::move(pe)));
    }

    std::int64_t prompt_len = 0;
    Tensor x = embedded;
    if (concept_mem && concept_mem->length() > 0) {
        prompt_len = concept_mem->length();
        x = concat({concept_mem->prompt, embedded}, 0);
    }
    for (std::int64_t i = 0; i < config_.text_layers; ++i)
        x = encoder_block(x, "text_enc." + std::to_string(i));
    return {x, prompt_len};
}

std::pair<Tensor, Tensor> Detector::fuse(const Tensor& image_feats, const Tensor& text_feats,
                                         const InteractionMemory* interaction) const {
    if (image_feats.extent(1) != config_.d_model || text_feats.extent(1) != config_.d_model)
        throw ShapeError("fuse: feature widths must equal d_model");

    Tensor fi = image_feats;
    Tensor ft = text_feats;
    for (std::int64_t l = 0; l < config_.l_fusion; ++l) {
        const std::string p = "fusion." + std::to_string(l);
        const InteractionMemoryLayer* mem = nullptr;
        if (interaction && static_cast<std::size_t>(l) < interaction->layers.size())
            mem = &interaction->layers[static_cast<std::size_t>(l)];

        Tensor fi_hat = ln(add(fi, mha(fi, fi, attn_ref(p + ".img_self"), nullptr, nullptr, nullptr)),
                           p + ".img.ln_self");
        Tensor ft_hat = ln(add(ft, mha(ft, ft, attn_ref(p + ".txt_self"), nullptr, nullptr, nullptr)),
                           p + ".txt.ln_self");

        const LoraPair* tq = nullptr;
        const LoraPair* tk = nullptr;
        const LoraPair* tv = nullptr;
        const LoraPair* iq = nullptr;
        const LoraPair* ik = nullptr;
        const LoraPair* iv = nullptr;
        if (mem) {
            tq = &mem->t_from_i_qk;
            tk = mem->tied ? &mem->t_from_i_qk : &mem->t_from_i_k;
            tv = &mem->t_from_i_v;
            iq = &mem->i_from_t_qk;
            ik = mem->tied ? &mem->i_from_t_qk : &mem->i_from_t_k;
            iv = &mem->i_from_t_v;
        }

        // text side aggregates image features, then the image side aggregates
        // the refreshed text features
        Tensor t_agg = mha(ft_hat, fi_hat, attn_ref(p + ".t_from_i"), tq, tk, tv);
        Tensor ft_tilde = ln(add(ft_hat, t_agg), p + ".txt.ln_cross");

        Tensor i_agg = mha(fi_hat, ft_tilde, attn_ref(p + ".i_from_t"), iq, ik, iv);
        Tensor fi_tilde = ln(add(fi_hat, i_agg), p + ".img.ln_cross");

        ft = ln(add(ft_tilde, ffn(ft_tilde, p + ".txt_ffn")), p + ".txt.ln_ffn");
        fi = ln(add(fi_tilde, ffn(fi_tilde, p + ".img_ffn")), p + ".img.ln_ffn");
    }
    return {fi, ft};
}

std::vector<std::pair<double, double>> Detector::query_anchors() const {
    const std::int64_t n = config_.n_queries;
    std::int64_t cols = 1;
    while (cols * cols < n) ++cols;
    const std::int64_t rows = (n + cols - 1) / cols;
    std::vector<std::pair<double, double>> anchors;
    anchors.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t r = i / cols, col = i % cols;
        anchors.emplace_back((static_cast<double>(col) + 0.5) / static_cast<double>(cols),
                             (static_cast<double>(r) + 0.5) / static_cast<double>(rows));
    }
    return anchors;
}

Tensor Detector::anchor_attention_bias(const std::vector<std::pair<double, double>>& anchors,
                                       std::int64_t n_tokens) const {
    const double sigma = 0.35;
    std::vector<double> bias(static_cast<std::size_t>(config_.n_queries * n_tokens));
    for (std::int64_t qi = 0; qi < config_.n_queries; ++qi) {
        for (std::int64_t t = 0; t < n_tokens; ++t) {
            const std::int64_t gy = t / config_.grid_w, gx = t % config_.grid_w;
            const double tx = (static_cast<double>(gx) + 0.5) / static_cast<double>(config_.grid_w);
            const double ty = (static_cast<double>(gy) + 0.5) / static_cast<double>(config_.grid_h);
            const double dx = tx - anchors[static_cast<std::size_t>(qi)].first;
            const double dy = ty - anchors[static_cast<std::size_t>(qi)].second;
            bias[static_cast<std::size_t>(qi * n_tokens + t)] =
                -(dx * dx + dy * dy) / (2.0 * sigma * sigma);
        }
    }
    return Tensor::from_values({config_.n_queries, n_tokens}, std::move(bias));
}


PipelineOutput Detector::decode(const Tensor& image_feats, const Tensor& text_feats,
                                const ClassSentence& sentence, std::int64_t prompt_len) const {
    // Fixed spatial anchors give every query a home region via an additive
    // locality prior on cross-attention scores.
    const std::vector<std::pair<double, double>> anchors = query_anchors();
    const Tensor locality_bias = anchor_attention_bias(anchors, image_feats.extent(0));

    Tensor q = params_.get("queries");
    for (std::int64_t i = 0; i < config_.decoder_layers; ++i) {
        const std::string p = "dec." + std::to_string(i);
        q = ln(add(q, mha(q, q, attn_ref(p + ".self"), nullptr, nullptr, nullptr)), p + ".ln_self");
        q = ln(add(q, mha(q, image_feats, attn_ref(p + ".cross"), nullptr, nullptr, nullptr,
                          &locality_bias)),
               p + ".ln_cross");
        q = ln(add(q, ffn(q, p + ".ffn")), p + ".ln_ffn");
    }

    // Box readout by attention moments: a localization attention over image
    // tokens pools the token coordinate grid, giving first and second
    // moments per query. Centers come from the centroid, widths from the
    // spread, and a small head refines both in logit space.
    Tensor loc_scores = scale(matmul(matmul(q, params_.get("loc.wq")),
                                     transpose(matmul(image_feats, params_.get("loc.wk")))),
                              1.0 / std::sqrt(static_cast<double>(config_.d_model)));
    Tensor loc_attn = softmax(add(loc_scores, locality_bias));

    const std::int64_t n_tokens = image_feats.extent(0);
    std::vector<double> coords(static_cast<std::size_t>(n_tokens * 4));
    for (std::int64_t t = 0; t < n_tokens; ++t) {
        const std::int64_t gy = t / config_.grid_w, gx = t % config_.grid_w;
        const double tx = (static_cast<double>(gx) + 0.5) / static_cast<double>(config_.grid_w);
        const double ty = (static_cast<double>(gy) + 0.5) / static_cast<double>(config_.grid_h);
        coords[static_cast<std::size_t>(t * 4 + 0)] = tx;
        coords[static_cast<std::size_t>(t * 4 + 1)] = ty;
        coords[static_cast<std::size_t>(t * 4 + 2)] = tx * tx;
        coords[static_cast<std::size_t>(t * 4 + 3)] = ty * ty;
    }
    Tensor moments = matmul(loc_attn, Tensor::from_values({n_tokens, 4}, std::move(coords)));
    Tensor mx = slice(moments, 1, 0, 1);
    Tensor my = slice(moments, 1, 1, 2);
    Tensor var_x = add(sub(slice(moments, 1, 2, 3), mul(mx, mx)), Tensor::scalar(1e-4));
    Tensor var_y = add(sub(slice(moments, 1, 3, 4), mul(my, my)), Tensor::scalar(1e-4));

    Tensor one = Tensor::scalar(1.0);
    Tensor cx_logit = sub(log(mx), log(sub(one, mx)));
    Tensor cy_logit = sub(log(my), log(sub(one, my)));
    // for a uniform blob of width W the positional variance is W^2/12
    Tensor w_logit = add(scale(log(var_x), 0.5), Tensor::scalar(1.2425));
    Tensor h_logit = add(scale(log(var_y), 0.5), Tensor::scalar(1.2425));
    Tensor base_logits = concat({cx_logit, cy_logit, w_logit, h_logit}, 1);

    Tensor deltas = matmul(relu(matmul(q, params_.get("box_head.w1"))), params_.get("box_head.w2"));
    Tensor boxes = sigmoid(add(base_logits, deltas));

    // Per-class text embedding: mean over the class token span, prompt rows
    // excluded via the offset.
    std::vector<Tensor> class_rows;
    class_rows.reserve(sentence.spans.size());
    for (const auto& span : sentence.spans) {
        Tensor rows = slice(text_feats, 0, prompt_len + span.begin, prompt_len + span.end);
        class_rows.push_back(mean(rows, 0));
    }
    Tensor class_emb = class_rows.size() == 1 ? class_rows[0] : concat(class_rows, 0);
    // temperature-scaled cosine keeps the alignment gradient well-conditioned
    Tensor logits = add(mul(matmul(l2_normalize(q), transpose(l2_normalize(class_emb))),
                            params_.get("logit_scale")),
                        params_.get("logit_bias"));

    PipelineOutput out;
    out.boxes = boxes;
    out.logits = logits;
    out.class_names = sentence.class_names;
    return out;
}

PipelineOutput Detector::run(const ImageSample& image, const ClassSentence& sentence,
                             const ConceptMemory* concept_mem,
                             const InteractionMemory* interaction) const {
    return run_encoded(encode_image(image), sentence, concept_mem, interaction);
}

PipelineOutput Detector::run_encoded(const EncodedImage& encoded, const ClassSentence& sentence,
                                     const ConceptMemory* concept_mem,
                                     const InteractionMemory* interaction) const {
    EncodedText text = encode_text(sentence, concept_mem);
    auto [fi, ft] = fuse(encoded.features, text.features, interaction);
    return decode(fi, ft, sentence, text.prompt_len);
}

std::vector<Detection> Detector::to_detections(const PipelineOutput& out) {
    const std::int64_t n = out.boxes.extent(0);
    const std::int64_t c = out.logits.extent(1);
    std::vector<Detection> dets;
    dets.reserve(static_cast<std::size_t>(n));
    for (std::int64_t q = 0; q < n; ++q) {
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < c; ++j)
            if (out.logits.at(q, j) > out.logits.at(q, best)) best = j;
        Detection det;
        det.box = Box{out.boxes.at(q, 0), out.boxes.at(q, 1), out.boxes.at(q, 2), out.boxes.at(q, 3)};
        det.class_name = out.class_names[static_cast<std::size_t>(best)];
        const double z = out.logits.at(q, best);
        det.score = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        dets.push_back(std::move(det));
    }
    return dets;
}

std::vector<Detection> Detector::detect(const ImageSample& image, const ClassSentence& sentence,
                                        const ConceptMemory* concept_mem,
                                        const InteractionMemory* interaction) const {
    NoGradGuard guard;
    return to_detections(run(image, sentence, concept_mem, interaction));
}

void Detector::save_checkpoint(const std::string& path) const {
    std::vector<TensorRecord> tensors;
    nlohmann::json trainable = nlohmann::json::object();
    for (const auto& [name, entry] : params_.entries()) {
        tensors.push_back({name, entry.tensor.shape(), entry.tensor.values()});
        trainable[name] = entry.trainable;
    }
    nlohmann::json header{{"kind", "detector-checkpoint"},
                          {"config", config_.to_json()},
                          {"trainable", trainable}};
    write_container(path, kCheckpointMagic, 1, header, tensors);
}

Detector Detector::load_checkpoint(const std::string& path) {
    Container c = read_container(path, kCheckpointMagic, 1);
    if (!c.header.contains("config")) throw DataError("checkpoint missing config: " + path);
    Detector det(DetectorConfig::from_json(c.header["config"]));
    const auto& trainable = c.header["trainable"];
    for (auto& rec : c.tensors) {
        const bool t = trainable.value(rec.name, false);
        det.params_.add(rec.name, Tensor::from_values(rec.shape, std::move(rec.values)), t);
    }
    return det;
}

}  // namespace owdet
