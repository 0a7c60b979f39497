#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bdray/resolvent.hpp"

namespace bdray {

// File formats are documented in FORMATS.md at the repository root.

RateModel load_model(const std::string& path);
RateModel parse_model(const std::string& json_text);

BoundaryTriple load_triple(const std::string& path);
BoundaryTriple parse_triple(const std::string& json_text);

ReturnDistribution load_return_distribution(const std::string& path);
ReturnDistribution parse_return_distribution(const std::string& json_text);

// Deterministic number formatting used for every CSV cell (round-trip exact,
// locale-free), so identical runs produce byte-identical files.
std::string format_double(double v);

std::uint64_t fnv1a64(const std::string& bytes);
std::uint64_t fnv1a64_file(const std::string& path);

// Sidecar manifest written next to each CLI output file.
struct RunManifest {
    std::string command;
    std::vector<std::pair<std::string, std::uint64_t>> inputs;  // path, digest
    std::string config_echo;
    std::string version;
    double wall_ms = 0.0;
    std::vector<std::string> outputs;

    std::string to_json() const;
    void write(const std::string& path) const;
};

constexpr const char* kToolVersion = "bdray 0.1.0";

}  // namespace bdray
