#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "dbf/errors.hpp"
#include "dbf/experiment.hpp"

namespace dbf {

using nlohmann::json;

namespace {

template <class T>
void read_field(const json& obj, const char* key, T& dst, const std::string& path) {
    if (!obj.contains(key)) return;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!obj.at(key).is_number_unsigned()) throw ConfigError(path + "." + key + ": expected a non-negative integer");
    }
    try {
        dst = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(path + "." + key + ": " + e.what());
    }
}

std::optional<std::uint64_t> read_end_epoch(const json& v, const std::string& path) {
    if (v.is_string()) {
        if (v.get<std::string>() == "inf") return std::nullopt;
    } else if (v.is_number_unsigned()) {
        return v.get<std::uint64_t>();
    }
    throw ConfigError(path + ": expected a positive integer or \"inf\"");
}

Rho read_rho(const json& v, const std::string& path) {
    if (v.is_string()) return Rho::parse(v.get<std::string>());
    if (v.is_number_unsigned()) return Rho(v.get<std::uint64_t>());
    throw ConfigError(path + ": expected a positive integer or \"inf\"");
}

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& path) {
    if (!obj.is_object()) throw ConfigError(path + ": expected an object");
    for (const auto& item : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
            throw ConfigError(path + ": unknown key \"" + item.key() + "\"");
        }
    }
}

json rho_json(const Rho& r) { return r.is_infinite() ? json("inf") : json(r.period()); }

LayerSpec read_layer(const json& j, const std::string& path) {
    if (!j.is_object() || !j.contains("type")) throw ConfigError(path + ": layer needs a \"type\"");
    LayerSpec s;
    check_keys(j, {"type", "in", "out", "kernel", "stride", "padding"}, path);
    s.kind = parse_layer_kind(j.at("type").get<std::string>());
    read_field(j, "in", s.in, path);
    read_field(j, "out", s.out, path);
    read_field(j, "kernel", s.kernel, path);
    read_field(j, "stride", s.stride, path);
    read_field(j, "padding", s.padding, path);
    return s;
}

json layer_json(const LayerSpec& s) {
    json j{{"type", std::string(layer_kind_name(s.kind))}};
    switch (s.kind) {
        case LayerKind::dense:
            j["in"] = s.in;
            j["out"] = s.out;
            break;
        case LayerKind::conv2d:
            j["in"] = s.in;
            j["out"] = s.out;
            j["kernel"] = s.kernel;
            j["stride"] = s.stride;
            j["padding"] = s.padding;
            break;
        case LayerKind::maxpool2d:
            j["kernel"] = s.kernel;
            j["stride"] = s.stride;
            break;
        case LayerKind::relu:
        case LayerKind::flatten: break;
    }
    return j;
}

std::vector<LayerSpec> read_layers(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path + ": expected an array of layers");
    std::vector<LayerSpec> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(read_layer(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

json layers_json(const std::vector<LayerSpec>& layers) {
    json arr = json::array();
    for (const LayerSpec& s : layers) arr.push_back(layer_json(s));
    return arr;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (total_epochs == 0) throw ConfigError("total_epochs must be >= 1");
    data.validate();
    lr.validate();
    sgd.validate();
    time_model.validate();
    if (arch.num_classes != data.num_classes) {
        throw ConfigError("arch.num_classes (" + std::to_string(arch.num_classes) + ") must equal data.num_classes (" +
                          std::to_string(data.num_classes) + ")");
    }
    if (arch.input_shape.size() != 3 || arch.input_shape[0] != 1 || arch.input_shape[1] != data.image_size ||
        arch.input_shape[2] != data.image_size) {
        throw ConfigError("arch.input must be [1, image_size, image_size]");
    }
    try {
        build_detector(arch, seed);  // shape chain
    } catch (const ShapeError& e) {
        throw ConfigError(std::string("arch: ") + e.what());
    }
}

ExperimentConfig ExperimentConfig::desk_default() {
    ExperimentConfig c;
    c.total_epochs = 16;
    c.eval_every = 4;
    c.switch_epoch = 4;
    c.data = SceneConfig{};
    c.arch = ArchConfig::desk_default(c.data.image_size, c.data.num_classes);
    c.n_train = 256;
    c.n_val = 64;
    c.lr.base_lr = 0.0125;
    c.lr.warmup_iters = 32;
    c.lr.warmup_end_fraction = 1.0;
    c.lr.decay_epoch = 12;
    c.lr.decay_factor = 0.25;
    return c;
}

ExperimentConfig parse_config(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    if (!doc.contains("schema") || doc.at("schema") != std::string(kConfigSchema)) {
        throw ConfigError("config must declare \"schema\": \"" + std::string(kConfigSchema) + "\"");
    }

    check_keys(doc,
               {"schema", "seed", "total_epochs", "eval_every", "switch_epoch", "output_dir", "data", "arch", "lr", "sgd",
                "time_model", "schedule"},
               "config");
    ExperimentConfig c = ExperimentConfig::desk_default();
    read_field(doc, "seed", c.seed, "config");
    read_field(doc, "total_epochs", c.total_epochs, "config");
    read_field(doc, "eval_every", c.eval_every, "config");
    read_field(doc, "switch_epoch", c.switch_epoch, "config");
    if (doc.contains("output_dir")) {
        std::string dir;
        read_field(doc, "output_dir", dir, "config");
        c.output_dir = dir;
    }

    if (doc.contains("data")) {
        const json& d = doc.at("data");
        check_keys(d,
                   {"image_size", "num_classes", "min_objects", "max_objects", "min_object_size", "max_object_size",
                    "noise_std", "n_train", "n_val"},
                   "data");
        read_field(d, "image_size", c.data.image_size, "data");
        read_field(d, "num_classes", c.data.num_classes, "data");
        read_field(d, "min_objects", c.data.min_objects, "data");
        read_field(d, "max_objects", c.data.max_objects, "data");
        read_field(d, "min_object_size", c.data.min_object_size, "data");
        read_field(d, "max_object_size", c.data.max_object_size, "data");
        read_field(d, "noise_std", c.data.noise_std, "data");
        read_field(d, "n_train", c.n_train, "data");
        read_field(d, "n_val", c.n_val, "data");
    }
    c.data.seed = c.seed;

    if (doc.contains("arch")) {
        const json& a = doc.at("arch");
        check_keys(a, {"grid_size", "backbone", "neck", "head"}, "arch");
        ArchConfig arch;
        arch.num_classes = c.data.num_classes;
        arch.input_shape = {1, c.data.image_size, c.data.image_size};
        read_field(a, "grid_size", arch.grid_size, "arch");
        if (!a.contains("backbone") || !a.contains("head")) throw ConfigError("arch needs \"backbone\" and \"head\"");
        arch.backbone = read_layers(a.at("backbone"), "arch.backbone");
        if (a.contains("neck") && !a.at("neck").is_null()) arch.neck = read_layers(a.at("neck"), "arch.neck");
        arch.head = read_layers(a.at("head"), "arch.head");
        c.arch = std::move(arch);
    } else {
        c.arch = ArchConfig::desk_default(c.data.image_size, c.data.num_classes);
    }

    if (doc.contains("lr")) {
        const json& l = doc.at("lr");
        check_keys(l, {"base_lr", "warmup_iters", "warmup_end_fraction", "decay_epoch", "decay_factor"}, "lr");
        read_field(l, "base_lr", c.lr.base_lr, "lr");
        read_field(l, "warmup_iters", c.lr.warmup_iters, "lr");
        read_field(l, "warmup_end_fraction", c.lr.warmup_end_fraction, "lr");
        read_field(l, "decay_epoch", c.lr.decay_epoch, "lr");
        read_field(l, "decay_factor", c.lr.decay_factor, "lr");
    }
    if (doc.contains("sgd")) {
        const json& s = doc.at("sgd");
        check_keys(s, {"momentum", "weight_decay", "clip_max_norm", "batch_size", "reset_velocity_on_unfreeze"}, "sgd");
        read_field(s, "momentum", c.sgd.momentum, "sgd");
        read_field(s, "weight_decay", c.sgd.weight_decay, "sgd");
        read_field(s, "clip_max_norm", c.sgd.clip_max_norm, "sgd");
        read_field(s, "batch_size", c.sgd.batch_size, "sgd");
        read_field(s, "reset_velocity_on_unfreeze", c.sgd.reset_velocity_on_unfreeze, "sgd");
    }
    if (doc.contains("time_model")) {
        const json& t = doc.at("time_model");
        check_keys(t, {"unfrozen_epoch_minutes", "frozen_epoch_minutes"}, "time_model");
        read_field(t, "unfrozen_epoch_minutes", c.time_model.unfrozen_epoch_minutes, "time_model");
        read_field(t, "frozen_epoch_minutes", c.time_model.frozen_epoch_minutes, "time_model");
    }
    if (doc.contains("schedule")) {
        const json& s = doc.at("schedule");
        if (!s.is_array()) throw ConfigError("schedule must be an array of {end_epoch, rho} phases");
        std::vector<Phase> phases;
        for (std::size_t i = 0; i < s.size(); ++i) {
            const std::string path = "schedule[" + std::to_string(i) + "]";
            check_keys(s[i], {"end_epoch", "rho"}, path);
            if (!s[i].contains("end_epoch") || !s[i].contains("rho")) {
                throw ConfigError(path + ": needs \"end_epoch\" and \"rho\"");
            }
            phases.push_back({read_end_epoch(s[i].at("end_epoch"), path + ".end_epoch"),
                              read_rho(s[i].at("rho"), path + ".rho")});
        }
        c.schedule = ScheduleSpec(std::move(phases));
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    std::ostringstream text;
    text << in.rdbuf();
    try {
        return parse_config(text.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string config_to_json(const ExperimentConfig& c) {
    json doc;
    doc["schema"] = std::string(kConfigSchema);
    doc["seed"] = c.seed;
    doc["total_epochs"] = c.total_epochs;
    doc["eval_every"] = c.eval_every;
    doc["switch_epoch"] = c.switch_epoch;
    doc["output_dir"] = c.output_dir.string();
    doc["data"] = {{"image_size", c.data.image_size},
                   {"num_classes", c.data.num_classes},
                   {"min_objects", c.data.min_objects},
                   {"max_objects", c.data.max_objects},
                   {"min_object_size", c.data.min_object_size},
                   {"max_object_size", c.data.max_object_size},
                   {"noise_std", c.data.noise_std},
                   {"n_train", c.n_train},
                   {"n_val", c.n_val}};
    json arch{{"grid_size", c.arch.grid_size},
              {"backbone", layers_json(c.arch.backbone)},
              {"head", layers_json(c.arch.head)}};
    arch["neck"] = c.arch.neck ? layers_json(*c.arch.neck) : json(nullptr);
    doc["arch"] = std::move(arch);
    doc["lr"] = {{"base_lr", c.lr.base_lr},
                 {"warmup_iters", c.lr.warmup_iters},
                 {"warmup_end_fraction", c.lr.warmup_end_fraction},
                 {"decay_epoch", c.lr.decay_epoch},
                 {"decay_factor", c.lr.decay_factor}};
    doc["sgd"] = {{"momentum", c.sgd.momentum},
                  {"weight_decay", c.sgd.weight_decay},
                  {"clip_max_norm", c.sgd.clip_max_norm},
                  {"batch_size", c.sgd.batch_size},
                  {"reset_velocity_on_unfreeze", c.sgd.reset_velocity_on_unfreeze}};
    doc["time_model"] = {{"unfrozen_epoch_minutes", c.time_model.unfrozen_epoch_minutes},
                         {"frozen_epoch_minutes", c.time_model.frozen_epoch_minutes}};
    json phases = json::array();
    for (const Phase& p : c.schedule.phases()) {
        phases.push_back({{"end_epoch", p.end_epoch ? json(*p.end_epoch) : json("inf")}, {"rho", rho_json(p.rho)}});
    }
    doc["schedule"] = std::move(phases);
    return doc.dump(2) + "\n";
}

std::string schedule_cell(const ScheduleSpec& spec) {
    std::string out;
    for (const Phase& p : spec.phases()) {
        if (!out.empty()) out += ';';
        out += (p.end_epoch ? std::to_string(*p.end_epoch) : "inf") + ":" + p.rho.to_string();
    }
    return out;
}

}  // namespace dbf
