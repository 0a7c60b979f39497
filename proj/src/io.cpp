#include "bdray/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace bdray {

namespace {

using nlohmann::json;

json parse_json(const std::string& text, const char* what) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) fail(errc::input_error, std::string(what) + ": malformed JSON");
    return j;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::input_error, "cannot read file: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

double number_field(const json& j, const char* key, double fallback, bool required,
                    const char* what) {
    if (!j.contains(key)) {
        if (required) fail(errc::input_error, std::string(what) + ": missing field '" + key + "'");
        return fallback;
    }
    if (!j[key].is_number())
        fail(errc::input_error, std::string(what) + ": field '" + key + "' must be a number");
    return j[key].get<double>();
}

std::map<index_t, double> pair_list(const json& j, const char* what) {
    std::map<index_t, double> out;
    if (!j.is_array()) fail(errc::input_error, std::string(what) + ": expected [[index, value], ...]");
    for (const auto& e : j) {
        if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number())
            fail(errc::input_error, std::string(what) + ": entries must be [index, value] pairs");
        auto k = e[0].get<index_t>();
        if (k < 0) fail(errc::input_error, std::string(what) + ": negative index");
        out[k] += e[1].get<double>();
    }
    return out;
}

}  // namespace

RateModel parse_model(const std::string& text) {
    json j = parse_json(text, "model file");
    if (j.contains("a") || j.contains("b")) {
        if (!j.contains("a") || !j.contains("b") || !j["a"].is_array() || !j["b"].is_array())
            fail(errc::input_error, "model file: explicit form needs arrays 'a' and 'b'");
        return RateModel::from_sequences(j["a"].get<std::vector<double>>(),
                                         j["b"].get<std::vector<double>>());
    }
    if (!j.contains("family") || !j["family"].is_string())
        fail(errc::input_error, "model file: need either arrays a/b or a 'family' name");
    std::string fam = j["family"].get<std::string>();
    json params = j.value("params", json::object());
    if (fam == "constant") {
        return RateModel::constant(number_field(params, "a", 1.0, true, "constant family"),
                                   number_field(params, "b", 1.0, true, "constant family"));
    }
    if (fam == "geometric") {
        double ratio = number_field(params, "ratio", 2.0, true, "geometric family");
        // coeff_a/coeff_b, with "r" accepted as shorthand for coeff_b (coeff_a = 1)
        double ca = number_field(params, "coeff_a", 1.0, false, "geometric family");
        double cb = number_field(params, "coeff_b",
                                 number_field(params, "r", 1.0, false, "geometric family"), false,
                                 "geometric family");
        return RateModel::geometric(ca, cb, ratio);
    }
    if (fam == "power") {
        return RateModel::power(number_field(params, "p", 1.0, true, "power family"));
    }
    fail(errc::input_error, "model file: unknown family '" + fam +
                                "' (known: constant, geometric, power)");
}

RateModel load_model(const std::string& path) { return parse_model(slurp(path)); }

BoundaryTriple parse_triple(const std::string& text) {
    json j = parse_json(text, "triple file");
    BoundaryTriple t;
    if (j.contains("nu")) t.nu = pair_list(j["nu"], "triple file nu");
    t.gamma = number_field(j, "gamma", 0.0, false, "triple file");
    t.beta = number_field(j, "beta", 0.0, false, "triple file");
    for (const auto& [k, w] : t.nu)
        if (w < 0) fail(errc::input_error, "triple file: negative nu weight");
    if (t.gamma < 0 || t.beta < 0)
        fail(errc::input_error, "triple file: gamma and beta must be >= 0");
    return t;
}

BoundaryTriple load_triple(const std::string& path) { return parse_triple(slurp(path)); }

ReturnDistribution parse_return_distribution(const std::string& text) {
    json j = parse_json(text, "distribution file");
    ReturnDistribution pi;
    if (j.contains("atoms")) pi.atoms = pair_list(j["atoms"], "distribution file atoms");
    pi.dead = number_field(j, "dead", 0.0, false, "distribution file");
    pi.validate();
    return pi;
}

ReturnDistribution load_return_distribution(const std::string& path) {
    return parse_return_distribution(slurp(path));
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64_file(const std::string& path) { return fnv1a64(slurp(path)); }

std::string RunManifest::to_json() const {
    json j;
    j["command"] = command;
    j["version"] = version.empty() ? kToolVersion : version;
    j["wall_ms"] = wall_ms;
    j["config"] = config_echo;
    j["inputs"] = json::array();
    for (const auto& [p, d] : inputs) {
        char hex[20];
        std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(d));
        j["inputs"].push_back({{"path", p}, {"fnv1a64", hex}});
    }
    j["outputs"] = outputs;
    return j.dump(2);
}

void RunManifest::write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(errc::input_error, "cannot write manifest: " + path);
    out << to_json() << "\n";
}

}  // namespace bdray
