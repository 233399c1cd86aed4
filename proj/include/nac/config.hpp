#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "nac/graph_prior.hpp"
#include "nac/model.hpp"
#include "nac/tasks.hpp"
#include "nac/training.hpp"

namespace nac {

/// Invalid or unknown configuration entries; `keys` names each offender.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& what, std::vector<std::string> keys)
        : std::runtime_error(what), keys(std::move(keys)) {}
    std::vector<std::string> keys;
};

struct TaskSpec {
    std::string name = "parity";  // parity | listops | text | rules
    std::size_t length = 16;      // parity and rules sequence length
    std::size_t max_len = 256;    // listops and text truncation
    std::size_t listops_depth = 4;
    std::size_t listops_args = 5;
    std::string data_file;        // optional TSV for the text task
};

struct PriorSpec {
    GraphonFamily family = GraphonFamily::ErdosRenyi;
    double p = 0.1;
    double beta = 0.5;
    std::size_t blocks = 8;
    double p_in = 0.9;
    double p_out = 0.05;
    double p_bridge = 0.3;

    Graphon graphon(std::size_t nodes) const;
};

struct RunConfig {
    std::uint64_t seed = 0;
    DesignMode mode = DesignMode::Unconditional;
    std::string output_dir = "nac_run";
    TaskSpec task;
    PriorSpec prior;
    ModelConfig model;  // vocab, max_len and classes are filled from the task
    TrainConfig train;
};

/// Parses sectioned key=value text. Every field has a default; unknown
/// sections or keys and unparsable values are collected and reported
/// together.
RunConfig parse_config(std::istream& is);
RunConfig load_config(const std::string& path);
/// Effective configuration with every field, re-parsable bit-identically.
std::string format_config(const RunConfig& cfg);

std::unique_ptr<Task> make_task(const TaskSpec& spec);
/// Model configuration with the task-dependent sizes applied.
ModelConfig resolve_model_config(const RunConfig& cfg, const Task& task);

}  // namespace nac
