#include "rpgssm/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "rpgssm/errors.hpp"

namespace rpgssm::config {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& key, const std::string& why) {
    throw UsageError("config: '" + key + "' " + why);
}

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key)) bad(where + key, "is not a recognised key");
    }
}

long long get_int(const json& obj, const std::string& key, long long min_value) {
    const json& v = obj.at(key);
    if (!v.is_number_integer()) bad(key, "must be an integer");
    const auto x = v.get<long long>();
    if (x < min_value) bad(key, "must be >= " + std::to_string(min_value));
    return x;
}

std::string get_string(const json& obj, const std::string& key) {
    const json& v = obj.at(key);
    if (!v.is_string()) bad(key, "must be a string");
    return v.get<std::string>();
}

}  // namespace

RunConfig parse(const json& doc) {
    if (!doc.is_object()) throw UsageError("config: top level must be a JSON object");
    reject_unknown(doc,
                   {"task", "latent_dim", "arch", "cov", "batch_size", "learning_rate", "iterations", "seed",
                    "mixture_scope", "m_steps", "posterior_gradient"},
                   "");
    for (const char* key : {"task", "latent_dim", "iterations"}) {
        if (!doc.contains(key)) bad(key, "is required");
    }

    RunConfig rc;
    rc.task = get_string(doc, "task");
    if (rc.task != "linear" && rc.task != "pendulum") bad("task", "must be linear or pendulum");

    auto& tc = rc.train;
    auto& spec = tc.recognition;
    spec.latent_dim = get_int(doc, "latent_dim", 1);
    tc.iterations = static_cast<long>(get_int(doc, "iterations", 0));
    if (doc.contains("batch_size")) tc.batch_size = get_int(doc, "batch_size", 2);
    if (doc.contains("seed")) tc.seed = static_cast<std::uint64_t>(get_int(doc, "seed", 0));
    if (doc.contains("m_steps")) tc.m_steps = static_cast<int>(get_int(doc, "m_steps", 1));
    if (doc.contains("posterior_gradient")) {
        const json& v = doc.at("posterior_gradient");
        if (!v.is_boolean()) bad("posterior_gradient", "must be true or false");
        tc.posterior_gradient = v.get<bool>();
    }
    if (doc.contains("learning_rate")) {
        const json& v = doc.at("learning_rate");
        if (!v.is_number()) bad("learning_rate", "must be a number");
        tc.learning_rate = v.get<double>();
        if (!(tc.learning_rate > 0.0) || !std::isfinite(tc.learning_rate)) bad("learning_rate", "must be positive");
    }
    if (doc.contains("mixture_scope")) {
        const std::string s = get_string(doc, "mixture_scope");
        if (s == "batch") {
            tc.mixture_scope = trainer::MixtureScope::batch;
        } else if (s == "full") {
            tc.mixture_scope = trainer::MixtureScope::full;
        } else {
            bad("mixture_scope", "must be batch or full");
        }
    }
    try {
        if (doc.contains("cov")) spec.covariance = recognition::parse_covariance(get_string(doc, "cov"));
        if (doc.contains("arch")) {
            const json& arch = doc.at("arch");
            if (!arch.is_object()) bad("arch", "must be an object");
            reject_unknown(arch, {"type", "hidden", "activation"}, "arch.");
            if (!arch.contains("type")) bad("arch.type", "is required");
            spec.architecture = recognition::parse_architecture(get_string(arch, "type"));
            if (arch.contains("activation")) spec.activation = recognition::parse_activation(get_string(arch, "activation"));
            if (arch.contains("hidden")) {
                const json& h = arch.at("hidden");
                if (!h.is_array()) bad("arch.hidden", "must be an array of positive integers");
                for (const auto& w : h) {
                    if (!w.is_number_integer() || w.get<long long>() < 1) {
                        bad("arch.hidden", "must be an array of positive integers");
                    }
                    spec.hidden.push_back(w.get<Eigen::Index>());
                }
            }
            if (spec.architecture == recognition::Architecture::mlp && spec.hidden.empty()) {
                bad("arch.hidden", "needs at least one layer for an mlp");
            }
            if (spec.architecture == recognition::Architecture::linear && !spec.hidden.empty()) {
                bad("arch.hidden", "must be empty for a linear architecture");
            }
        }
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    return rc;
}

RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw UsageError("config " + path.string() + ": invalid JSON: " + e.what());
    }
    return parse(doc);
}

}  // namespace rpgssm::config
