#include "owdet/memory.hpp"

#include <algorithm>
#include <cmath>

#include "owdet/container.hpp"
#include "owdet/detector.hpp"

namespace owdet {

namespace {

constexpr char kPoolMagic[4] = {'O', 'W', 'M', 'P'};

const char* pair_names_tied[] = {"t_from_i_qk", "t_from_i_v", "i_from_t_qk", "i_from_t_v"};
const char* pair_names_untied[] = {"t_from_i_qk", "t_from_i_k", "t_from_i_v",
                                   "i_from_t_qk", "i_from_t_k", "i_from_t_v"};

}  // namespace

InteractionMemoryLayer InteractionMemoryLayer::clone() const {
    InteractionMemoryLayer c;
    c.tied = tied;
    c.t_from_i_qk = t_from_i_qk.clone();
    c.t_from_i_v = t_from_i_v.clone();
    c.i_from_t_qk = i_from_t_qk.clone();
    c.i_from_t_v = i_from_t_v.clone();
    if (!tied) {
        c.t_from_i_k = t_from_i_k.clone();
        c.i_from_t_k = i_from_t_k.clone();
    }
    return c;
}

std::vector<const LoraPair*> InteractionMemoryLayer::active_pairs() const {
    if (tied) return {&t_from_i_qk, &t_from_i_v, &i_from_t_qk, &i_from_t_v};
    return {&t_from_i_qk, &t_from_i_k, &t_from_i_v, &i_from_t_qk, &i_from_t_k, &i_from_t_v};
}

std::vector<LoraPair*> InteractionMemoryLayer::active_pairs() {
    if (tied) return {&t_from_i_qk, &t_from_i_v, &i_from_t_qk, &i_from_t_v};
    return {&t_from_i_qk, &t_from_i_k, &t_from_i_v, &i_from_t_qk, &i_from_t_k, &i_from_t_v};
}

InteractionMemory InteractionMemory::clone() const {
    InteractionMemory c;
    c.layers.reserve(layers.size());
    for (const auto& l : layers) c.layers.push_back(l.clone());
    return c;
}

std::int64_t InteractionMemory::param_count() const {
    std::int64_t n = 0;
    for (const auto& layer : layers)
        for (const LoraPair* p : layer.active_pairs()) n += p->down.numel() + p->up.numel();
    return n;
}

void MemoryPool::memorize(MemoryTriplet triplet) {
    const std::int64_t expected = triplets_.empty() ? 1 : triplets_.back().step + 1;
    if (triplet.step != expected)
        throw InputError("memorize: expected step " + std::to_string(expected) + ", got " +
                         std::to_string(triplet.step));
    if (triplet.labels.empty()) throw InputError("memorize: empty label set");
    if (triplet.prototypes.size() != triplet.labels.size())
        throw InputError("memorize: prototype count does not match label set");
    for (const auto& proto : triplet.prototypes) {
        double sq = 0.0;
        for (const double v : proto) sq += v * v;
        if (std::abs(std::sqrt(sq) - 1.0) > 1e-9)
            throw ContractError("memorize: prototype is not unit-norm");
    }
    triplets_.push_back(std::move(triplet));
}

std::pair<ConceptMemory, InteractionMemory> init_step_memories(const MemoryPool& pool,
                                                               const MemoryInitConfig& config,
                                                               Rng& rng) {
    if (!pool.empty()) {
        const MemoryTriplet& last = pool.triplets().back();
        return {last.concept_memory.clone(), last.interaction_memory.clone()};
    }
    ConceptMemory con;
    if (config.prompt_length > 0)
        con.prompt = Tensor::randn({config.prompt_length, config.d_model}, rng,
                                   config.prompt_init_std);
    InteractionMemory inc;
    for (std::int64_t l = 0; l < config.lora_layers; ++l) {
        InteractionMemoryLayer layer;
        layer.tied = config.tie_qk;
        for (LoraPair* pair : layer.active_pairs()) {
            pair->down = Tensor::randn({config.lora_rank, config.d_model}, rng,
                                       1.0 / static_cast<double>(config.lora_rank));
            pair->up = Tensor::zeros({config.d_model, config.lora_rank});
        }
        inc.layers.push_back(std::move(layer));
    }
    return {std::move(con), std::move(inc)};
}

ParamStore memory_param_store(ConceptMemory& con, bool con_trainable, InteractionMemory& inc,
                              bool inc_trainable) {
    ParamStore store;
    if (con.prompt.defined()) store.add("theta_con.prompt", con.prompt, con_trainable);
    for (std::size_t l = 0; l < inc.layers.size(); ++l) {
        auto& layer = inc.layers[l];
        const auto names = layer.tied ? std::vector<const char*>(std::begin(pair_names_tied),
                                                                 std::end(pair_names_tied))
                                      : std::vector<const char*>(std::begin(pair_names_untied),
                                                                 std::end(pair_names_untied));
        auto pairs = layer.active_pairs();
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const std::string prefix = "theta_inc." + std::to_string(l) + "." + names[i];
            store.add(prefix + ".down", pairs[i]->down, inc_trainable);
            store.add(prefix + ".up", pairs[i]->up, inc_trainable);
        }
    }
    return store;
}

ImageSample crop_and_resize(const ImageSample& src, const Box& box, double margin,
                            std::int64_t out_h, std::int64_t out_w) {
    CornerBox c = to_corners(box);
    const double dx = margin * box.w, dy = margin * box.h;
    const double x0 = std::clamp(c.x0 - dx, 0.0, 1.0);
    const double x1 = std::clamp(c.x1 + dx, 0.0, 1.0);
    const double y0 = std::clamp(c.y0 - dy, 0.0, 1.0);
    const double y1 = std::clamp(c.y1 + dy, 0.0, 1.0);

    const double sx0 = x0 * static_cast<double>(src.width);
    const double sy0 = y0 * static_cast<double>(src.height);
    const double cw = std::max(1e-6, (x1 - x0) * static_cast<double>(src.width));
    const double ch = std::max(1e-6, (y1 - y0) * static_cast<double>(src.height));

    ImageSample out;
    out.height = out_h;
    out.width = out_w;
    out.pixels.assign(static_cast<std::size_t>(out_h * out_w * 3), 0.0);
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
        const double sy = sy0 + (static_cast<double>(oy) + 0.5) / static_cast<double>(out_h) * ch - 0.5;
        const double fy = std::clamp(sy, 0.0, static_cast<double>(src.height - 1));
        const std::int64_t y_lo = static_cast<std::int64_t>(fy);
        const std::int64_t y_hi = std::min(y_lo + 1, src.height - 1);
        const double wy = fy - static_cast<double>(y_lo);
        for (std::int64_t ox = 0; ox < out_w; ++ox) {
            const double sx =
                sx0 + (static_cast<double>(ox) + 0.5) / static_cast<double>(out_w) * cw - 0.5;
            const double fx = std::clamp(sx, 0.0, static_cast<double>(src.width - 1));
            const std::int64_t x_lo = static_cast<std::int64_t>(fx);
            const std::int64_t x_hi = std::min(x_lo + 1, src.width - 1);
            const double wx = fx - static_cast<double>(x_lo);
            for (std::int64_t ch_i = 0; ch_i < 3; ++ch_i) {
                const double top = (1.0 - wx) * src.pixel(y_lo, x_lo, ch_i) +
                                   wx * src.pixel(y_lo, x_hi, ch_i);
                const double bot = (1.0 - wx) * src.pixel(y_hi, x_lo, ch_i) +
                                   wx * src.pixel(y_hi, x_hi, ch_i);
                out.pixel(oy, ox, ch_i) = (1.0 - wy) * top + wy * bot;
            }
        }
    }
    return out;
}

std::map<std::string, std::vector<double>> build_prototypes(
    const std::vector<ImageSample>& train_images, const std::vector<std::string>& class_names,
    const Detector& detector, const PrototypeConfig& config, Rng& rng) {
    NoGradGuard guard;
    const auto& dc = detector.config();

    std::map<std::string, std::vector<double>> prototypes;
    for (const auto& name : class_names) {
        std::vector<std::pair<const ImageSample*, Box>> instances;
        for (const auto& image : train_images)
            for (std::size_t b = 0; b < image.boxes.size(); ++b)
                if (image.class_names[b] == name) instances.emplace_back(&image, image.boxes[b]);
        if (instances.empty())
            throw InputError("prototype construction: class '" + name +
                             "' has no ground-truth instances");

        std::vector<double> acc(static_cast<std::size_t>(dc.d_model), 0.0);
        std::int64_t crops = 0;
        std::size_t cursor = 0;
        bool first_pass = true;
        while (crops < config.crops_per_class) {
            const auto& [image, box] = instances[cursor];
            const double margin =
                first_pass ? config.margin
                           : config.margin + rng.uniform(-config.margin_jitter, config.margin_jitter);
            ImageSample crop = crop_and_resize(*image, box, margin, dc.image_h, dc.image_w);
            const Tensor g = detector.encode_image(crop).global_embedding;
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g.values()[i];
            ++crops;
            ++cursor;
            if (cursor == instances.size()) {
                cursor = 0;
                first_pass = false;
            }
        }
        double sq = 0.0;
        for (const double v : acc) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm == 0.0) throw NumericError("prototype collapsed to zero for class: " + name);
        for (auto& v : acc) v /= norm;
        prototypes[name] = std::move(acc);
    }
    return prototypes;
}

AddedParamCounts count_added_params(const MemoryInitConfig& config) {
    AddedParamCounts counts;
    counts.prompt = config.prompt_length * config.d_model;
    const std::int64_t pairs = config.tie_qk ? 4 : 6;
    counts.per_lora_layer = pairs * 2 * config.lora_rank * config.d_model;
    counts.lora_total = config.lora_layers * counts.per_lora_layer;
    counts.total = counts.prompt + counts.lora_total;
    return counts;
}

void save_pool(const MemoryPool& pool, const std::string& path) {
    std::vector<TensorRecord> tensors;
    nlohmann::json triplet_meta = nlohmann::json::array();
    for (const auto& t : pool.triplets()) {
        const std::string base = "step" + std::to_string(t.step) + "/";
        nlohmann::json meta{{"step", t.step}, {"labels", t.labels}};
        for (std::size_t j = 0; j < t.prototypes.size(); ++j)
            tensors.push_back({base + "proto" + std::to_string(j),
                               {static_cast<std::int64_t>(t.prototypes[j].size())},
                               t.prototypes[j]});
        meta["has_prompt"] = t.concept_memory.prompt.defined();
        if (t.concept_memory.prompt.defined())
            tensors.push_back({base + "theta_con", t.concept_memory.prompt.shape(),
                               t.concept_memory.prompt.values()});
        meta["lora_layers"] = t.interaction_memory.layers.size();
        meta["tied"] = t.interaction_memory.layers.empty() || t.interaction_memory.layers[0].tied;
        for (std::size_t l = 0; l < t.interaction_memory.layers.size(); ++l) {
            const auto& layer = t.interaction_memory.layers[l];
            const auto names = layer.tied
                                   ? std::vector<const char*>(std::begin(pair_names_tied),
                                                              std::end(pair_names_tied))
                                   : std::vector<const char*>(std::begin(pair_names_untied),
                                                              std::end(pair_names_untied));
            const auto pairs = layer.active_pairs();
            for (std::size_t i = 0; i < pairs.size(); ++i) {
                const std::string prefix = base + "lora" + std::to_string(l) + "/" + names[i];
                tensors.push_back({prefix + "/down", pairs[i]->down.shape(), pairs[i]->down.values()});
                tensors.push_back({prefix + "/up", pairs[i]->up.shape(), pairs[i]->up.values()});
            }
        }
        triplet_meta.push_back(std::move(meta));
    }
    nlohmann::json header{{"kind", "memory-pool"},
                          {"config", pool.config_snapshot()},
                          {"steps", pool.size()},
                          {"triplets", triplet_meta}};
    write_container(path, kPoolMagic, MemoryPool::kFormatVersion, header, tensors);
}

MemoryPool load_pool(const std::string& path) {
    Container c = read_container(path, kPoolMagic, MemoryPool::kFormatVersion);
    if (!c.header.contains("triplets") || !c.header["triplets"].is_array())
        throw DataError("pool header missing triplets: " + path);

    MemoryPool pool(c.header.value("config", nlohmann::json::object()));
    for (const auto& meta : c.header["triplets"]) {
        MemoryTriplet t;
        t.step = meta.at("step").get<std::int64_t>();
        t.labels = meta.at("labels").get<std::vector<std::string>>();
        const std::string base = "step" + std::to_string(t.step) + "/";
        for (std::size_t j = 0; j < t.labels.size(); ++j)
            t.prototypes.push_back(c.tensor(base + "proto" + std::to_string(j)).values);
        if (meta.value("has_prompt", false)) {
            const auto& rec = c.tensor(base + "theta_con");
            t.concept_memory.prompt = Tensor::from_values(rec.shape, rec.values);
        }
        const std::size_t lora_layers = meta.value("lora_layers", std::size_t{0});
        const bool tied = meta.value("tied", true);
        for (std::size_t l = 0; l < lora_layers; ++l) {
            InteractionMemoryLayer layer;
            layer.tied = tied;
            const auto names = tied ? std::vector<const char*>(std::begin(pair_names_tied),
                                                               std::end(pair_names_tied))
                                    : std::vector<const char*>(std::begin(pair_names_untied),
                                                               std::end(pair_names_untied));
            auto pairs = layer.active_pairs();
            for (std::size_t i = 0; i < pairs.size(); ++i) {
                const std::string prefix = base + "lora" + std::to_string(l) + "/" + names[i];
                const auto& down = c.tensor(prefix + "/down");
                const auto& up = c.tensor(prefix + "/up");
                pairs[i]->down = Tensor::from_values(down.shape, down.values);
                pairs[i]->up = Tensor::from_values(up.shape, up.values);
            }
            t.interaction_memory.layers.push_back(std::move(layer));
        }
        pool.memorize(std::move(t));
    }
    return pool;
}

}  // namespace owdet
