// SPDX-License-Identifier: Apache-2.0
#include "brokenbind/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <openssl/sha.h>
#include <yaml-cpp/yaml.h>

#include "brokenbind/errors.hpp"

namespace bb::config {
namespace {

std::string where(const YAML::Node& n, const std::string& source) {
    const auto m = n.Mark();
    if (m.line < 0) return source;
    return source + ":" + std::to_string(m.line + 1);
}

class Walker {
  public:
    explicit Walker(std::string source) : source_(std::move(source)) {}

    [[noreturn]] void fail(const YAML::Node& n, const std::string& field, const std::string& msg) const {
        throw ConfigError(where(n, source_) + ": " + field + ": " + msg);
    }

    void only_keys(const YAML::Node& map, const std::string& field, std::initializer_list<const char*> keys) const {
        if (!map.IsMap()) fail(map, field, "expected a mapping");
        std::set<std::string> ok(keys.begin(), keys.end());
        for (const auto& kv : map) {
            const auto k = kv.first.as<std::string>();
            if (!ok.count(k)) fail(kv.first, field.empty() ? k : field + "." + k, "unknown key");
        }
    }

    template <class T>
    T get(const YAML::Node& n, const std::string& field) const {
        if (!n.IsScalar()) fail(n, field, "expected a scalar");
        try {
            return n.as<T>();
        } catch (const YAML::Exception&) {
            fail(n, field, "cannot parse '" + n.Scalar() + "'");
        }
    }

    template <class T>
    void opt(const YAML::Node& map, const char* key, const std::string& field, T& out) const {
        const YAML::Node n = map[key];
        if (n) out = get<T>(n, field + "." + key);
    }

    std::size_t count(const YAML::Node& n, const std::string& field) const {
        const auto v = get<long long>(n, field);
        if (v < 0) fail(n, field, "must be >= 0");
        return static_cast<std::size_t>(v);
    }

    void opt_count(const YAML::Node& map, const char* key, const std::string& field, std::size_t& out) const {
        const YAML::Node n = map[key];
        if (n) out = count(n, field + "." + key);
    }

    std::vector<std::string> strings(const YAML::Node& n, const std::string& field) const {
        if (!n.IsSequence()) fail(n, field, "expected a list");
        std::vector<std::string> out;
        for (std::size_t i = 0; i < n.size(); ++i) {
            out.push_back(get<std::string>(n[i], field + "[" + std::to_string(i) + "]"));
        }
        return out;
    }

    const std::string& source() const { return source_; }

  private:
    std::string source_;
};

void check_modality_ref(const Walker& w, const ExperimentConfig& c, const YAML::Node& n,
                        const std::string& field, const std::string& name) {
    for (const auto& m : c.modalities) {
        if (m.name == name) return;
    }
    w.fail(n, field, "modality '" + name + "' has no entry in data.modalities");
}

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return splitmix(splitmix(splitmix(seed) ^ a) ^ b);
}

} // namespace

void ExperimentConfig::validate() const {
    if (latent_dim == 0) throw ConfigError("data.latent_dim must be > 0");
    if (num_classes < 2) throw ConfigError("data.num_classes must be >= 2");
    if (!(within_class_std > 0)) throw ConfigError("data.within_class_std must be > 0");
    if (!(center_scale > 0)) throw ConfigError("data.center_scale must be > 0");
    if (modalities.empty()) throw ConfigError("data.modalities: at least one modality required");
    std::set<std::string> names;
    for (const auto& m : modalities) {
        if (!names.insert(m.name).second) throw ConfigError("data.modalities: duplicate '" + m.name + "'");
        if (m.raw_dim < latent_dim) {
            throw ConfigError("data.modalities." + m.name + ".raw_dim must be >= latent_dim");
        }
        if (!(m.temperature_scale > 0)) {
            throw ConfigError("data.modalities." + m.name + ".temperature_scale must be > 0");
        }
        if (m.noise_std < 0) throw ConfigError("data.modalities." + m.name + ".noise_std must be >= 0");
    }
    if (datasets.size() != 2 && datasets.size() != 3) {
        throw ConfigError("data.datasets: expected 2 or 3 datasets, got " + std::to_string(datasets.size()));
    }
    std::set<std::string> ids;
    for (const auto& d : datasets) {
        if (!ids.insert(d.id).second) throw ConfigError("data.datasets: duplicate id '" + d.id + "'");
        for (const auto& m : d.observable) {
            if (!names.count(m)) throw ConfigError("data.datasets." + d.id + ".observable: unknown modality '" + m + "'");
        }
        if (d.hidden_target && !names.count(*d.hidden_target)) {
            throw ConfigError("data.datasets." + d.id + ".hidden_target: unknown modality '" + *d.hidden_target + "'");
        }
        if (d.num_samples == 0) throw ConfigError("data.datasets." + d.id + ".num_samples must be > 0");
    }
    if (embed_dim == 0) throw ConfigError("encoder.embed_dim must be > 0");
    if (epochs == 0) throw ConfigError("training.epochs must be > 0");
    if (pretrain_epochs > epochs) throw ConfigError("training.pretrain_epochs must be <= training.epochs");
    if (stage1_epochs > epochs) throw ConfigError("training.stage1_epochs must be <= training.epochs");
    if (batch_size == 0 || batch_size % datasets.size() != 0) {
        throw ConfigError("training.batch_size must be a positive multiple of the dataset count (" +
                          std::to_string(datasets.size()) + ")");
    }
    if (!(lr > 0)) throw ConfigError("training.lr must be > 0");
    if (weight_decay < 0) throw ConfigError("training.weight_decay must be >= 0");
    if (!(tau > 0)) throw ConfigError("training.tau must be > 0");
    weights.validate();
    if (seeds.empty()) throw ConfigError("seeds: at least one seed required");
}

const ModalityConfig& ExperimentConfig::modality(const std::string& name) const {
    for (const auto& m : modalities) {
        if (m.name == name) return m;
    }
    throw ConfigError("unknown modality '" + name + "'");
}

const DatasetConfig& ExperimentConfig::dataset(const std::string& id) const {
    for (const auto& d : datasets) {
        if (d.id == id) return d;
    }
    throw ConfigError("unknown dataset '" + id + "'");
}

double ExperimentConfig::temperature_scale(const std::string& m) const {
    return modality(m).temperature_scale;
}

std::vector<diffnet::EncoderSpec> ExperimentConfig::encoder_specs() const {
    std::vector<diffnet::EncoderSpec> out;
    for (const auto& m : modalities) {
        diffnet::EncoderSpec s;
        s.modality = m.name;
        s.layer_dims.push_back(m.raw_dim);
        for (auto h : hidden) s.layer_dims.push_back(h);
        s.layer_dims.push_back(embed_dim);
        s.nonlinearity = nonlinearity;
        s.temperature_scale = m.temperature_scale;
        out.push_back(std::move(s));
    }
    return out;
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
    }
    Walker w(source);
    if (!root || root.IsNull()) throw ConfigError(source + ": empty config");
    w.only_keys(root, "", {"seed", "seeds", "data", "encoder", "training", "eval"});

    ExperimentConfig c;
    if (root["seed"]) c.seed = w.get<std::uint64_t>(root["seed"], "seed");
    if (root["seeds"]) {
        const YAML::Node s = root["seeds"];
        if (!s.IsSequence() || s.size() == 0) w.fail(s, "seeds", "expected a non-empty list");
        c.seeds.clear();
        for (std::size_t i = 0; i < s.size(); ++i) {
            c.seeds.push_back(w.get<std::uint64_t>(s[i], "seeds[" + std::to_string(i) + "]"));
        }
    }

    const YAML::Node data = root["data"];
    if (!data) w.fail(root, "data", "missing required section");
    w.only_keys(data, "data", {"latent_dim", "num_classes", "center_scale", "within_class_std", "modalities", "datasets"});
    w.opt_count(data, "latent_dim", "data", c.latent_dim);
    w.opt_count(data, "num_classes", "data", c.num_classes);
    w.opt(data, "center_scale", "data", c.center_scale);
    w.opt(data, "within_class_std", "data", c.within_class_std);

    const YAML::Node mods = data["modalities"];
    if (!mods) w.fail(data, "data.modalities", "missing required field");
    if (!mods.IsSequence()) w.fail(mods, "data.modalities", "expected a list");
    for (std::size_t i = 0; i < mods.size(); ++i) {
        const std::string f = "data.modalities[" + std::to_string(i) + "]";
        const YAML::Node m = mods[i];
        w.only_keys(m, f, {"name", "raw_dim", "squash", "noise_std", "temperature_scale"});
        ModalityConfig mc;
        if (!m["name"]) w.fail(m, f + ".name", "missing required field");
        if (!m["raw_dim"]) w.fail(m, f + ".raw_dim", "missing required field");
        mc.name = w.get<std::string>(m["name"], f + ".name");
        mc.raw_dim = w.count(m["raw_dim"], f + ".raw_dim");
        w.opt(m, "squash", f, mc.squash);
        w.opt(m, "noise_std", f, mc.noise_std);
        w.opt(m, "temperature_scale", f, mc.temperature_scale);
        for (const auto& prev : c.modalities) {
            if (prev.name == mc.name) w.fail(m["name"], f + ".name", "duplicate modality '" + mc.name + "'");
        }
        c.modalities.push_back(std::move(mc));
    }

    const YAML::Node ds = data["datasets"];
    if (!ds) w.fail(data, "data.datasets", "missing required field");
    if (!ds.IsSequence()) w.fail(ds, "data.datasets", "expected a list");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const std::string f = "data.datasets[" + std::to_string(i) + "]";
        const YAML::Node d = ds[i];
        w.only_keys(d, f, {"id", "observable", "hidden_target", "shift", "extra_noise_std", "num_samples", "num_test_samples"});
        DatasetConfig dc;
        if (!d["id"]) w.fail(d, f + ".id", "missing required field");
        if (!d["observable"]) w.fail(d, f + ".observable", "missing required field");
        dc.id = w.get<std::string>(d["id"], f + ".id");
        dc.observable = w.strings(d["observable"], f + ".observable");
        for (std::size_t k = 0; k < dc.observable.size(); ++k) {
            check_modality_ref(w, c, d["observable"][k], f + ".observable[" + std::to_string(k) + "]", dc.observable[k]);
        }
        if (d["hidden_target"]) {
            dc.hidden_target = w.get<std::string>(d["hidden_target"], f + ".hidden_target");
            check_modality_ref(w, c, d["hidden_target"], f + ".hidden_target", *dc.hidden_target);
        }
        w.opt(d, "shift", f, dc.shift);
        w.opt(d, "extra_noise_std", f, dc.extra_noise_std);
        w.opt_count(d, "num_samples", f, dc.num_samples);
        w.opt_count(d, "num_test_samples", f, dc.num_test_samples);
        c.datasets.push_back(std::move(dc));
    }

    if (const YAML::Node e = root["encoder"]) {
        w.only_keys(e, "encoder", {"hidden", "embed_dim", "nonlinearity"});
        if (e["hidden"]) {
            const YAML::Node h = e["hidden"];
            if (!h.IsSequence()) w.fail(h, "encoder.hidden", "expected a list");
            c.hidden.clear();
            for (std::size_t i = 0; i < h.size(); ++i) {
                c.hidden.push_back(w.count(h[i], "encoder.hidden[" + std::to_string(i) + "]"));
            }
        }
        w.opt_count(e, "embed_dim", "encoder", c.embed_dim);
        if (e["nonlinearity"]) {
            const auto s = w.get<std::string>(e["nonlinearity"], "encoder.nonlinearity");
            try {
                c.nonlinearity = diffnet::parse_nonlinearity(s);
            } catch (const std::exception& ex) {
                w.fail(e["nonlinearity"], "encoder.nonlinearity", ex.what());
            }
        }
    }

    if (const YAML::Node t = root["training"]) {
        w.only_keys(t, "training", {"epochs", "pretrain_epochs", "stage1_epochs", "batch_size", "lr", "weight_decay",
                                    "tau", "pinv_grad", "weights", "eval_every"});
        w.opt_count(t, "epochs", "training", c.epochs);
        w.opt_count(t, "pretrain_epochs", "training", c.pretrain_epochs);
        w.opt_count(t, "stage1_epochs", "training", c.stage1_epochs);
        w.opt_count(t, "batch_size", "training", c.batch_size);
        w.opt(t, "lr", "training", c.lr);
        w.opt(t, "weight_decay", "training", c.weight_decay);
        w.opt(t, "tau", "training", c.tau);
        w.opt_count(t, "eval_every", "training", c.eval_every);
        if (t["pinv_grad"]) {
            const auto s = w.get<std::string>(t["pinv_grad"], "training.pinv_grad");
            if (s == "frozen") {
                c.pinv_grad = xtrap::PinvGrad::frozen;
            } else if (s == "differentiable") {
                c.pinv_grad = xtrap::PinvGrad::differentiable;
            } else {
                w.fail(t["pinv_grad"], "training.pinv_grad", "expected 'frozen' or 'differentiable'");
            }
        }
        if (const YAML::Node lw = t["weights"]) {
            w.only_keys(lw, "training.weights", {"clip", "sym", "mox", "fro"});
            w.opt(lw, "clip", "training.weights", c.weights.clip);
            w.opt(lw, "sym", "training.weights", c.weights.sym);
            w.opt(lw, "mox", "training.weights", c.weights.mox);
            w.opt(lw, "fro", "training.weights", c.weights.fro);
        }
    }

    if (const YAML::Node ev = root["eval"]) {
        w.only_keys(ev, "eval", {"flows"});
        if (ev["flows"]) c.flows = w.strings(ev["flows"], "eval.flows");
    }

    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

nlohmann::json to_json(const ExperimentConfig& c) {
    using nlohmann::json;
    json mods = json::array();
    for (const auto& m : c.modalities) {
        mods.push_back({{"name", m.name},
                        {"raw_dim", m.raw_dim},
                        {"squash", m.squash},
                        {"noise_std", m.noise_std},
                        {"temperature_scale", m.temperature_scale}});
    }
    json ds = json::array();
    for (const auto& d : c.datasets) {
        json j = {{"id", d.id},
                  {"observable", d.observable},
                  {"shift", d.shift},
                  {"extra_noise_std", d.extra_noise_std},
                  {"num_samples", d.num_samples},
                  {"num_test_samples", d.num_test_samples}};
        j["hidden_target"] = d.hidden_target ? json(*d.hidden_target) : json(nullptr);
        ds.push_back(std::move(j));
    }
    return {{"seed", c.seed},
            {"seeds", c.seeds},
            {"data",
             {{"latent_dim", c.latent_dim},
              {"num_classes", c.num_classes},
              {"center_scale", c.center_scale},
              {"within_class_std", c.within_class_std},
              {"modalities", mods},
              {"datasets", ds}}},
            {"encoder", {{"hidden", c.hidden}, {"embed_dim", c.embed_dim}, {"nonlinearity", diffnet::to_string(c.nonlinearity)}}},
            {"training",
             {{"epochs", c.epochs},
              {"pretrain_epochs", c.pretrain_epochs},
              {"stage1_epochs", c.stage1_epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"tau", c.tau},
              {"pinv_grad", c.pinv_grad == xtrap::PinvGrad::frozen ? "frozen" : "differentiable"},
              {"weights", {{"clip", c.weights.clip}, {"sym", c.weights.sym}, {"mox", c.weights.mox}, {"fro", c.weights.fro}}},
              {"eval_every", c.eval_every}}},
            {"eval", {{"flows", c.flows}}}};
}

std::string sha256_hex(const void* data, std::size_t n) {
    unsigned char md[SHA256_DIGEST_LENGTH];
    SHA256(static_cast<const unsigned char*>(data), n, md);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned char b : md) {
        out.push_back(hex[b >> 4]);
        out.push_back(hex[b & 15]);
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string s = ss.str();
    return sha256_hex(s.data(), s.size());
}

std::string config_hash(const ExperimentConfig& c) {
    const std::string s = to_json(c).dump();
    return sha256_hex(s.data(), s.size());
}

synthgen::LatentSpec latent_spec(const ExperimentConfig& c, std::uint64_t seed) {
    return synthgen::make_latent_spec(c.latent_dim, c.num_classes, c.center_scale, c.within_class_std,
                                      derive(seed, 1));
}

std::vector<synthgen::ModalityViewSpec> view_specs(const ExperimentConfig& c, std::uint64_t seed) {
    std::vector<synthgen::ModalityViewSpec> out;
    for (std::size_t i = 0; i < c.modalities.size(); ++i) {
        const auto& m = c.modalities[i];
        out.push_back(synthgen::make_view_spec(m.name, m.raw_dim, c.latent_dim, m.squash, m.noise_std,
                                               derive(seed, 2, i)));
    }
    return out;
}

synthgen::DatasetSpec dataset_spec(const ExperimentConfig& c, std::size_t index, std::uint64_t seed) {
    const auto& d = c.datasets.at(index);
    synthgen::DatasetSpec s;
    s.id = d.id;
    s.num_samples = d.num_samples;
    s.num_test_samples = d.num_test_samples;
    s.latent_shift = synthgen::shift_vector(c.latent_dim, d.shift * c.within_class_std, derive(seed, 3, index));
    s.extra_noise_std = d.extra_noise_std;
    s.observable = d.observable;
    s.hidden_target = d.hidden_target;
    return s;
}

std::vector<synthgen::MultiModalDataset> generate_all(const ExperimentConfig& c, std::uint64_t seed) {
    const auto latent = latent_spec(c, seed);
    const auto views = view_specs(c, seed);
    std::vector<synthgen::MultiModalDataset> out;
    for (std::size_t i = 0; i < c.datasets.size(); ++i) {
        out.push_back(synthgen::generate_dataset(latent, views, dataset_spec(c, i, seed), derive(seed, 4, i)));
    }
    return out;
}

} // namespace bb::config
