#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "mlsal/data.hpp"
#include "mlsal/errors.hpp"
#include "mlsal/losses.hpp"
#include "mlsal/model.hpp"

namespace mlsal {

using json = nlohmann::ordered_json;

enum class Preset { ALLSUP, ALLSUP_MLM, ALLSUP_ED_MLM };

inline const char* to_string(Preset p) {
    switch (p) {
        case Preset::ALLSUP: return "ALLSUP";
        case Preset::ALLSUP_MLM: return "ALLSUP_MLM";
        case Preset::ALLSUP_ED_MLM: return "ALLSUP_ED_MLM";
    }
    return "?";
}

inline Preset preset_from_string(const std::string& s) {
    if (s == "ALLSUP") return Preset::ALLSUP;
    if (s == "ALLSUP_MLM") return Preset::ALLSUP_MLM;
    if (s == "ALLSUP_ED_MLM") return Preset::ALLSUP_ED_MLM;
    throw ConfigError("unknown preset '" + s + "' (expected ALLSUP, ALLSUP_MLM or ALLSUP_ED_MLM)");
}

/// Students and edge modules as dictated by an ablation preset.
inline ModelConfig apply_preset(ModelConfig m, Preset p) {
    switch (p) {
        case Preset::ALLSUP:
            m.mlm.students = 1;
            m.edge.enabled = false;
            break;
        case Preset::ALLSUP_MLM:
            m.mlm.students = 3;
            m.edge.enabled = false;
            break;
        case Preset::ALLSUP_ED_MLM:
            m.mlm.students = 3;
            m.edge.enabled = true;
            break;
    }
    if (m.decoder_branch >= m.mlm.students) m.decoder_branch = 0;
    if (m.test_branch.kind == BranchPolicy::Kind::fixed && m.test_branch.index >= m.mlm.students) m.test_branch.index = 0;
    return m;
}

struct TrainConfig {
    double lr_encoder = 4e-4;
    double lr_decoder = 1e-4;
    double weight_decay = 0.005;
    long max_steps = 500;
    std::uint64_t seed = 0;
    Preset preset = Preset::ALLSUP_ED_MLM;
    ModelConfig model;
    LossWeights weights;
    /// 0 disables periodic checkpoints.
    long checkpoint_every = 0;

    /// The model actually built: `model` with the preset's overrides.
    ModelConfig effective_model() const { return apply_preset(model, preset); }

    void validate() const {
        if (!(lr_encoder > 0)) throw ConfigError("lr_encoder must be > 0");
        if (!(lr_decoder > 0)) throw ConfigError("lr_decoder must be > 0");
        if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
        if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
        if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
        weights.validate();
        effective_model().validate();
    }
};

/// Everything `train` needs beyond TrainConfig.
struct RunConfig {
    TrainConfig train;
    std::string saliency_dir;
    std::string edge_dir;
    std::string output_dir = "runs/train";
};

namespace detail {

/// Strict object reader: unknown keys and type mismatches name the key path.
class JsonReader {
public:
    JsonReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ParseError("'" + where() + "' must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).template get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("bad value for key '" + child(key) + "': " + e.what());
        }
    }

    template <class T, std::size_t N>
    void get_array(const char* key, std::array<T, N>& out) {
        std::vector<T> v(out.begin(), out.end());
        get(key, v);
        if (v.size() != N) {
            throw ParseError("key '" + child(key) + "' needs " + std::to_string(N) + " entries, got " +
                             std::to_string(v.size()));
        }
        std::copy(v.begin(), v.end(), out.begin());
    }

    bool has(const char* key) const { return j_.contains(key); }
    const json& at(const char* key) {
        seen_.insert(key);
        return j_.at(key);
    }
    std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) throw ParseError("unknown key '" + child(it.key().c_str()) + "'");
        }
    }

private:
    std::string where() const { return path_.empty() ? "<root>" : path_; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class F>
auto parse_enum(const std::string& key, const std::string& value, F&& f) {
    try {
        return f(value);
    } catch (const ConfigError& e) {
        throw ParseError("bad value for key '" + key + "': " + e.what());
    }
}

inline std::vector<int> as_vec(const std::array<int, 5>& a) { return {a.begin(), a.end()}; }

}  // namespace detail

inline json to_json(const ModelConfig& m) {
    json policy{{"policy", m.test_branch.kind == BranchPolicy::Kind::fixed ? "fixed" : "seeded_random"},
                {"index", m.test_branch.index},
                {"seed", m.test_branch.seed}};
    return json{
        {"backbone",
         {{"block_widths", m.backbone.block_widths},
          {"input_size", m.backbone.input_size},
          {"init_policy", m.backbone.init_policy == InitPolicy::random ? "random" : "external_weights"},
          {"weights_file", m.backbone.weights_file}}},
        {"mlm",
         {{"students", m.mlm.students},
          {"kernel_sizes", m.mlm.kernel_sizes},
          {"dilations", m.mlm.dilations},
          {"hidden_channels", m.mlm.hidden_channels}}},
        {"edge", {{"enabled", m.edge.enabled}, {"channels", m.edge.channels}}},
        {"schedule", to_string(m.schedule)},
        {"decoder_branch", m.decoder_branch},
        {"test_branch", policy},
    };
}

inline json to_json(const LossWeights& w) {
    return json{{"theta_s", w.theta_s}, {"theta_e", w.theta_e}, {"theta_m", w.theta_m}, {"r_s", w.r_s},
                {"r_e", w.r_e},         {"r_mlm", w.r_mlm},     {"r_dec", w.r_dec}};
}

inline json to_json(const TrainConfig& c) {
    return json{{"lr_encoder", c.lr_encoder},
                {"lr_decoder", c.lr_decoder},
                {"weight_decay", c.weight_decay},
                {"max_steps", c.max_steps},
                {"seed", c.seed},
                {"preset", to_string(c.preset)},
                {"checkpoint_every", c.checkpoint_every},
                {"model", to_json(c.model)},
                {"weights", to_json(c.weights)}};
}

inline json to_json(const RunConfig& r) {
    json j = to_json(r.train);
    j["data"] = {{"saliency_dir", r.saliency_dir}, {"edge_dir", r.edge_dir}};
    j["output_dir"] = r.output_dir;
    return j;
}

inline json to_json(const SyntheticSpec& s) {
    std::vector<std::string> shapes;
    for (auto k : s.shapes) shapes.emplace_back(to_string(k));
    return json{{"count", s.count},           {"canvas_size", s.canvas_size}, {"shapes", shapes},
                {"fg_range", s.fg_range},     {"bg_range", s.bg_range},       {"noise", s.noise},
                {"seed", s.seed},             {"clutter_lines", s.clutter_lines}};
}

/// `scale` ("tiny" | "full") picks the starting preset; other keys override it.
inline ModelConfig model_from_json(const json& j, const std::string& path = "model") {
    detail::JsonReader r(j, path);
    ModelConfig m;
    std::string scale = "tiny";
    r.get("scale", scale);
    if (scale == "full") {
        m = ModelConfig::full();
    } else if (scale != "tiny") {
        throw ParseError("bad value for key '" + r.child("scale") + "': expected tiny or full");
    }
    if (r.has("backbone")) {
        detail::JsonReader b(r.at("backbone"), r.child("backbone"));
        b.get_array("block_widths", m.backbone.block_widths);
        b.get("input_size", m.backbone.input_size);
        std::string policy = m.backbone.init_policy == InitPolicy::random ? "random" : "external_weights";
        b.get("init_policy", policy);
        if (policy == "random") {
            m.backbone.init_policy = InitPolicy::random;
        } else if (policy == "external_weights") {
            m.backbone.init_policy = InitPolicy::external_weights;
        } else {
            throw ParseError("bad value for key '" + b.child("init_policy") + "': expected random or external_weights");
        }
        b.get("weights_file", m.backbone.weights_file);
        b.finish();
    }
    if (r.has("mlm")) {
        detail::JsonReader b(r.at("mlm"), r.child("mlm"));
        b.get("students", m.mlm.students);
        b.get_array("kernel_sizes", m.mlm.kernel_sizes);
        b.get_array("dilations", m.mlm.dilations);
        b.get("hidden_channels", m.mlm.hidden_channels);
        b.finish();
    }
    if (r.has("edge")) {
        detail::JsonReader b(r.at("edge"), r.child("edge"));
        b.get("enabled", m.edge.enabled);
        b.get("channels", m.edge.channels);
        b.finish();
    }
    std::string sched = to_string(m.schedule);
    r.get("schedule", sched);
    m.schedule = detail::parse_enum(r.child("schedule"), sched, schedule_from_string);
    r.get("decoder_branch", m.decoder_branch);
    if (r.has("test_branch")) {
        detail::JsonReader b(r.at("test_branch"), r.child("test_branch"));
        std::string policy = "fixed";
        b.get("policy", policy);
        b.get("index", m.test_branch.index);
        b.get("seed", m.test_branch.seed);
        if (policy == "fixed") {
            m.test_branch.kind = BranchPolicy::Kind::fixed;
        } else if (policy == "seeded_random") {
            m.test_branch.kind = BranchPolicy::Kind::seeded_random;
        } else {
            throw ParseError("bad value for key '" + b.child("policy") + "': expected fixed or seeded_random");
        }
        b.finish();
    }
    r.finish();
    return m;
}

inline LossWeights weights_from_json(const json& j, const std::string& path = "weights") {
    detail::JsonReader r(j, path);
    LossWeights w;
    r.get("theta_s", w.theta_s);
    r.get("theta_e", w.theta_e);
    r.get("theta_m", w.theta_m);
    r.get_array("r_s", w.r_s);
    r.get_array("r_e", w.r_e);
    r.get_array("r_mlm", w.r_mlm);
    r.get_array("r_dec", w.r_dec);
    r.finish();
    return w;
}

namespace detail {

inline void read_train_fields(JsonReader& r, TrainConfig& c) {
    r.get("lr_encoder", c.lr_encoder);
    r.get("lr_decoder", c.lr_decoder);
    r.get("weight_decay", c.weight_decay);
    r.get("max_steps", c.max_steps);
    r.get("seed", c.seed);
    r.get("checkpoint_every", c.checkpoint_every);
    std::string preset = to_string(c.preset);
    r.get("preset", preset);
    c.preset = parse_enum(r.child("preset"), preset, preset_from_string);
    if (r.has("model")) c.model = model_from_json(r.at("model"), r.child("model"));
    if (r.has("weights")) c.weights = weights_from_json(r.at("weights"), r.child("weights"));
}

}  // namespace detail

inline TrainConfig train_config_from_json(const json& j) {
    detail::JsonReader r(j, "");
    TrainConfig c;
    detail::read_train_fields(r, c);
    r.finish();
    return c;
}

inline RunConfig run_config_from_json(const json& j) {
    detail::JsonReader r(j, "");
    RunConfig c;
    detail::read_train_fields(r, c.train);
    if (r.has("data")) {
        detail::JsonReader d(r.at("data"), "data");
        d.get("saliency_dir", c.saliency_dir);
        d.get("edge_dir", c.edge_dir);
        d.finish();
    }
    r.get("output_dir", c.output_dir);
    r.finish();
    return c;
}

inline SyntheticSpec synthetic_spec_from_json(const json& j) {
    detail::JsonReader r(j, "");
    SyntheticSpec s;
    r.get("count", s.count);
    r.get("canvas_size", s.canvas_size);
    if (r.has("shapes")) {
        std::vector<std::string> names;
        r.get("shapes", names);
        s.shapes.clear();
        for (const auto& n : names) s.shapes.push_back(detail::parse_enum("shapes", n, shape_from_string));
    }
    r.get_array("fg_range", s.fg_range);
    r.get_array("bg_range", s.bg_range);
    r.get("noise", s.noise);
    r.get("seed", s.seed);
    r.get("clutter_lines", s.clutter_lines);
    r.finish();
    return s;
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    try {
        return json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("'" + path + "': " + e.what());
    }
}

}  // namespace mlsal
