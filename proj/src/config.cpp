#include "nac/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace nac {

Graphon PriorSpec::graphon(std::size_t nodes) const {
    switch (family) {
        case GraphonFamily::ErdosRenyi: return Graphon::erdos_renyi(p);
        case GraphonFamily::ScaleFree: return Graphon::scale_free(nodes, beta);
        case GraphonFamily::PlantedPartition: return Graphon::planted_partition(blocks, p_in, p_out);
        case GraphonFamily::RingOfCliques: return Graphon::ring_of_cliques(blocks, p_in, p_bridge);
    }
    return Graphon::erdos_renyi(p);
}

namespace {

struct Field {
    std::string section;
    std::string key;
    std::function<bool(const std::string&)> set;  // false on a bad value
    std::function<std::string()> get;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

Field size_field(std::string section, std::string key, std::size_t& ref) {
    return {std::move(section), std::move(key), [&ref](const std::string& s) { return parse_number(s, ref); },
            [&ref] { return std::to_string(ref); }};
}

Field u64_field(std::string section, std::string key, std::uint64_t& ref) {
    return {std::move(section), std::move(key), [&ref](const std::string& s) { return parse_number(s, ref); },
            [&ref] { return std::to_string(ref); }};
}

Field real_field(std::string section, std::string key, double& ref) {
    return {std::move(section), std::move(key), [&ref](const std::string& s) { return parse_number(s, ref); },
            [&ref] { return format_double(ref); }};
}

Field bool_field(std::string section, std::string key, bool& ref) {
    return {std::move(section), std::move(key),
            [&ref](const std::string& s) {
                if (s == "true" || s == "1") ref = true;
                else if (s == "false" || s == "0") ref = false;
                else return false;
                return true;
            },
            [&ref] { return std::string(ref ? "true" : "false"); }};
}

Field string_field(std::string section, std::string key, std::string& ref) {
    return {std::move(section), std::move(key), [&ref](const std::string& s) { ref = s; return true; },
            [&ref] { return ref; }};
}

std::vector<Field> fields(RunConfig& c) {
    ExecutorConfig& ex = c.model.executor;
    TrainConfig& tr = c.train;
    std::vector<Field> f = {
        u64_field("", "seed", c.seed),
        {"", "mode",
         [&c](const std::string& s) {
             if (s == "unconditional") c.mode = DesignMode::Unconditional;
             else if (s == "conditional") c.mode = DesignMode::Conditional;
             else return false;
             return true;
         },
         [&c] { return std::string(c.mode == DesignMode::Conditional ? "conditional" : "unconditional"); }},
        string_field("", "output_dir", c.output_dir),

        {"task", "name",
         [&c](const std::string& s) {
             if (s != "parity" && s != "listops" && s != "text" && s != "rules") return false;
             c.task.name = s;
             return true;
         },
         [&c] { return c.task.name; }},
        size_field("task", "length", c.task.length),
        size_field("task", "max_len", c.task.max_len),
        size_field("task", "listops_depth", c.task.listops_depth),
        size_field("task", "listops_args", c.task.listops_args),
        string_field("task", "data_file", c.task.data_file),

        {"prior", "family",
         [&c](const std::string& s) {
             auto fam = parse_graphon_family(s);
             if (!fam) return false;
             c.prior.family = *fam;
             return true;
         },
         [&c] { return to_string(c.prior.family); }},
        real_field("prior", "p", c.prior.p),
        real_field("prior", "beta", c.prior.beta),
        size_field("prior", "blocks", c.prior.blocks),
        real_field("prior", "p_in", c.prior.p_in),
        real_field("prior", "p_out", c.prior.p_out),
        real_field("prior", "p_bridge", c.prior.p_bridge),

        size_field("executor", "layers", ex.layers),
        size_field("executor", "processors", ex.processors),
        size_field("executor", "readouts", ex.readouts),
        size_field("executor", "d_model", ex.d_model),
        size_field("executor", "d_sig", ex.d_sig),
        size_field("executor", "d_code", ex.d_code),
        size_field("executor", "d_tok", ex.d_tok),
        size_field("executor", "d_pos", c.model.d_pos),
        size_field("executor", "heads", ex.heads),
        size_field("executor", "readin_heads", ex.readin_heads),
        size_field("executor", "ffn_hidden", ex.ffn_hidden),
        size_field("executor", "mlp_hidden", ex.mlp_hidden),
        bool_field("executor", "share_weights", ex.share_weights),
        real_field("executor", "epsilon", ex.kernel.epsilon),
        real_field("executor", "tau", ex.kernel.tau),
        real_field("executor", "delta", ex.kernel.delta),
        {"executor", "eval_kernel",
         [&ex](const std::string& s) {
             if (s == "sample") ex.kernel.eval_mode = KernelEvalMode::Sample;
             else if (s == "threshold") ex.kernel.eval_mode = KernelEvalMode::HardThreshold;
             else return false;
             return true;
         },
         [&ex] { return std::string(ex.kernel.eval_mode == KernelEvalMode::Sample ? "sample" : "threshold"); }},
        size_field("executor", "d_ctx", c.model.d_ctx),
        size_field("executor", "generator_hidden", c.model.generator_hidden),

        size_field("train", "batch_size", tr.batch_size),
        size_field("train", "steps", tr.steps),
        real_field("train", "peak_lr", tr.peak_lr),
        real_field("train", "min_lr", tr.min_lr),
        size_field("train", "warmup_steps", tr.warmup_steps),
        real_field("train", "warmup_from", tr.warmup_from),
        real_field("train", "weight_decay", tr.weight_decay),
        real_field("train", "lambda_graph", tr.lambda_graph),
        real_field("train", "grad_clip", tr.grad_clip),
        size_field("train", "eval_every", tr.eval_every),
        size_field("train", "eval_samples", tr.eval_samples),
        size_field("train", "eval_batch", tr.eval_batch),
        real_field("train", "stop_at_accuracy", tr.stop_at_accuracy),
        size_field("train", "matching_every", tr.matching_every),
        real_field("train", "max_seconds", tr.max_seconds),
    };
    return f;
}

std::string qualified(const std::string& section, const std::string& key) {
    return section.empty() ? key : section + "." + key;
}

}  // namespace

RunConfig parse_config(std::istream& is) {
    RunConfig cfg;
    auto table = fields(cfg);
    std::vector<std::string> bad;
    std::string section, line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                bad.push_back("line " + std::to_string(lineno) + ": " + line);
                continue;
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            bad.push_back("line " + std::to_string(lineno) + ": " + line);
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        bool known = false;
        for (auto& f : table) {
            if (f.section == section && f.key == key) {
                known = true;
                if (!f.set(value)) bad.push_back(qualified(section, key) + " (invalid value '" + value + "')");
                break;
            }
        }
        if (!known) bad.push_back(qualified(section, key) + " (unknown key)");
    }
    if (bad.empty()) {
        try {
            cfg.model.executor.validate();
        } catch (const std::exception& e) {
            bad.push_back(std::string("executor (") + e.what() + ")");
        }
    }
    if (!bad.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& b : bad) msg += "\n  " + b;
        throw ConfigError(msg, bad);
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config " + path);
    return parse_config(is);
}

std::string format_config(const RunConfig& cfg) {
    RunConfig copy = cfg;
    std::ostringstream os;
    std::string section;
    for (const auto& f : fields(copy)) {
        if (f.section != section) {
            section = f.section;
            os << "\n[" << section << "]\n";
        }
        os << f.key << " = " << f.get() << '\n';
    }
    return os.str();
}

std::unique_ptr<Task> make_task(const TaskSpec& spec) {
    if (spec.name == "parity") return std::make_unique<ParityTask>(spec.length);
    if (spec.name == "listops") return std::make_unique<ListOpsTask>(spec.listops_depth, spec.listops_args, spec.max_len);
    if (spec.name == "rules") return std::make_unique<RuleContextTask>(spec.length);
    if (spec.name == "text") {
        std::vector<LabeledText> rows;
        if (!spec.data_file.empty()) {
            std::ifstream is(spec.data_file);
            if (!is) throw std::runtime_error("cannot open data file " + spec.data_file);
            rows = read_dataset_tsv(is);
        }
        return std::make_unique<TextTask>(spec.max_len, std::move(rows));
    }
    throw ContractError("unknown task '" + spec.name + "'");
}

ModelConfig resolve_model_config(const RunConfig& cfg, const Task& task) {
    ModelConfig m = cfg.model;
    m.mode = cfg.mode;
    m.vocab = task.vocab();
    m.max_len = task.max_len();
    m.executor.classes = task.classes();
    if (task.context_vocab() > 0) {
        m.context_vocab = task.context_vocab();
        if (cfg.mode == DesignMode::Unconditional) {
            m.context_as_tokens = true;
            m.vocab += task.context_vocab();
            m.max_len += task.context_len();
        }
    }
    return m;
}

}  // namespace nac
