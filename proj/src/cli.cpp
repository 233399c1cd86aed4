#include "nac/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "nac/config.hpp"
#include "nac/pruning.hpp"

namespace fs = std::filesystem;

namespace nac {

namespace {

struct MissingFile : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const char* what) {
    if (path.empty()) throw MissingFile(std::string("no ") + what + " given");
    if (!fs::is_regular_file(path)) throw MissingFile(std::string(what) + " not found: " + path);
}

struct Session {
    RunConfig cfg;
    std::unique_ptr<Task> task;
    std::unique_ptr<NacModel> model;
    std::optional<PriorMatrix> prior;
};

Session open_session(const std::string& config_path, std::optional<std::uint64_t> seed) {
    Session s;
    if (!config_path.empty()) {
        require_file(config_path, "config file");
        s.cfg = load_config(config_path);
    }
    if (seed) s.cfg.seed = *seed;
    s.cfg.train.seed = s.cfg.seed;
    if (!s.cfg.task.data_file.empty()) require_file(s.cfg.task.data_file, "data file");
    s.task = make_task(s.cfg.task);
    if (s.cfg.mode == DesignMode::Conditional && s.task->context_vocab() == 0) {
        throw ConfigError("invalid configuration:\n  mode (conditional mode needs a task with context)", {"mode"});
    }
    s.model = std::make_unique<NacModel>(resolve_model_config(s.cfg, *s.task), s.cfg.seed);
    if (s.cfg.mode == DesignMode::Unconditional) {
        const std::size_t u = s.cfg.model.executor.processors;
        s.prior = sample_prior(s.cfg.prior.graphon(u), u);
    }
    return s;
}

void load_weights(Session& s, const std::string& checkpoint) {
    require_file(checkpoint, "checkpoint");
    load_checkpoint(s.model->params(), checkpoint);
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    return os;
}

std::vector<Batch> eval_set(const Session& s) {
    return make_eval_set(*s.task, s.cfg.train.eval_samples, s.cfg.train.eval_batch, s.cfg.train.seed + 0x5EED);
}

EvalOptions eval_options(const Session& s) {
    EvalOptions eo;
    eo.seed = s.cfg.train.seed + 17;
    return eo;
}

// One link-probability matrix per context value for conditional models.
std::vector<std::pair<std::string, Tensor>> link_matrices(const Session& s) {
    NoGradGuard guard;
    std::vector<std::pair<std::string, Tensor>> out;
    if (s.cfg.mode == DesignMode::Unconditional) {
        out.emplace_back("", s.model->link_probs(s.model->design({})));
        return out;
    }
    for (std::size_t c = 0; c < s.task->context_vocab(); ++c) {
        Batch b;
        b.tokens = {{0}};
        b.labels = {0};
        b.contexts = {{c}};
        const Tensor p = s.model->link_probs(s.model->design(b));
        const std::size_t u = p.dim(1);
        out.emplace_back("_ctx" + std::to_string(c), reshape(p, {u, u}));
    }
    return out;
}

void write_design_csv(std::ostream& os, const CircuitDesign& d) {
    os << std::setprecision(17) << "kind,module,field,index,value\n";
    auto dump = [&](const char* kind, const Tensor& t, const char* field) {
        const std::size_t rows = t.dim(t.rank() - 2), cols = t.dim(t.rank() - 1);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
                os << kind << ',' << r << ',' << field << ',' << c << ',' << t.data()[r * cols + c] << '\n';
    };
    dump("processor", d.proc_signatures, "signature");
    dump("processor", d.proc_codes, "code");
    dump("readout", d.readout_signatures, "signature");
    dump("readout", d.readout_codes, "code");
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed) {
    Session s = open_session(config_path, seed);
    const fs::path out(s.cfg.output_dir);
    fs::create_directories(out);
    open_out(out / "config.ini") << format_config(s.cfg);

    auto metrics = open_out(out / "metrics.jsonl");
    TrainHooks hooks;
    hooks.metrics = &metrics;
    const std::string checkpoint = (out / "checkpoint.nacc").string();
    hooks.on_eval = [&](std::size_t step, const EvalResult& r) {
        save_checkpoint(s.model->params(), checkpoint);
        std::cout << "step " << step << " accuracy " << std::setprecision(6) << r.accuracy << " loss " << r.loss
                  << std::endl;
    };
    const TrainResult res = train(*s.model, *s.task, s.cfg.train, s.prior ? &*s.prior : nullptr, hooks);
    save_checkpoint(s.model->params(), checkpoint);

    NoGradGuard guard;
    if (s.cfg.mode == DesignMode::Unconditional) {
        const CircuitDesign design = s.model->design({});
        const Tensor probs = s.model->link_probs(design);
        auto d = open_out(out / "design.csv");
        write_design_csv(d, design);
        auto p = open_out(out / "link_probs.csv");
        write_matrix_csv(p, probs);
        auto p0 = open_out(out / "prior.csv");
        write_matrix_csv(p0, s.prior->p0);
        auto a = open_out(out / "assignment.csv");
        write_assignment_csv(a, graph_regularizer(probs, *s.prior).matching);
    } else {
        for (const auto& [suffix, probs] : link_matrices(s)) {
            auto p = open_out(out / ("link_probs" + suffix + ".csv"));
            write_matrix_csv(p, probs);
        }
    }
    std::cout << std::setprecision(17) << "final_accuracy " << res.final_accuracy << "\nsteps " << res.steps << '\n';
    return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint, std::optional<std::uint64_t> seed) {
    Session s = open_session(config_path, seed);
    load_weights(s, checkpoint);
    const EvalResult r = evaluate(*s.model, eval_set(s), eval_options(s));
    std::cout << std::setprecision(17) << "accuracy " << r.accuracy << "\nloss " << r.loss << '\n';
    if (s.prior) {
        NoGradGuard guard;
        const Tensor probs = s.model->link_probs(s.model->design({}));
        std::cout << "l_graph " << graph_regularizer(probs, *s.prior).loss.item() << '\n';
    }
    return kExitOk;
}

std::vector<std::size_t> parse_schedule(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const long v = std::stol(item, &used);
            if (v < 0 || used != item.size()) throw std::invalid_argument(item);
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ConfigError("invalid --schedule entry '" + item + "'", {"schedule"});
        }
    }
    return out;
}

int cmd_prune(const std::string& config_path, const std::string& checkpoint, const std::string& schedule,
              std::optional<std::uint64_t> seed) {
    Session s = open_session(config_path, seed);
    if (s.cfg.mode != DesignMode::Unconditional) {
        throw ConfigError("invalid configuration:\n  mode (pruning needs an unconditional model)", {"mode"});
    }
    load_weights(s, checkpoint);
    std::vector<std::size_t> ks;
    if (schedule.empty()) {
        for (std::size_t k = 0; k < s.cfg.model.executor.processors; k += std::max<std::size_t>(1, s.cfg.model.executor.processors / 8)) ks.push_back(k);
    } else {
        ks = parse_schedule(schedule);
    }
    SweepOptions so;
    so.seed = s.cfg.train.seed + 17;
    const auto reports = prune_sweep(*s.model, eval_set(s), ks, so);
    const fs::path out(s.cfg.output_dir);
    fs::create_directories(out);
    auto os = open_out(out / "prune_report.csv");
    write_prune_csv(os, reports);
    write_prune_csv(std::cout, reports);
    return kExitOk;
}

int cmd_export_graph(const std::string& config_path, const std::string& checkpoint, double threshold,
                     std::optional<std::uint64_t> seed) {
    Session s = open_session(config_path, seed);
    load_weights(s, checkpoint);
    const fs::path out(s.cfg.output_dir);
    fs::create_directories(out);
    for (const auto& [suffix, probs] : link_matrices(s)) {
        const std::size_t n = probs.dim(0);
        std::vector<std::size_t> degree(n, 0);
        auto edges = open_out(out / ("graph_edges" + suffix + ".csv"));
        edges << std::setprecision(17) << "i,j,p\n";
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                const double p = probs.at({i, j});
                if (p > threshold) {
                    edges << i << ',' << j << ',' << p << '\n';
                    ++degree[i];
                    ++degree[j];
                    ++count;
                }
            }
        double mean = 0.0;
        for (auto d : degree) mean += static_cast<double>(d);
        mean /= static_cast<double>(n);
        const nlohmann::json stats = {{"threshold", threshold},
                                      {"edges", count},
                                      {"min_degree", *std::min_element(degree.begin(), degree.end())},
                                      {"max_degree", *std::max_element(degree.begin(), degree.end())},
                                      {"mean_degree", mean},
                                      {"degrees", degree}};
        open_out(out / ("graph_stats" + suffix + ".json")) << stats.dump(2) << '\n';
        auto p = open_out(out / ("link_probs" + suffix + ".csv"));
        write_matrix_csv(p, probs);
        std::cout << "graph" << suffix << ": " << count << " edges, degree min " << stats["min_degree"] << " max "
                  << stats["max_degree"] << " mean " << mean << '\n';
    }
    return kExitOk;
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"Neural attentive circuits: train, evaluate, prune and export circuit graphs"};
    app.require_subcommand(1);
    std::string config, checkpoint, schedule;
    double threshold = 0.5;
    std::optional<std::uint64_t> seed;

    auto add_common = [&](CLI::App* sub, bool needs_checkpoint) {
        sub->add_option("--config", config, "Run configuration (sectioned key = value)");
        sub->add_option("--seed", seed, "Overrides the configured seed");
        if (needs_checkpoint) sub->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
    };
    auto* train_cmd = app.add_subcommand("train", "Train a model and write metrics, checkpoint and graph artifacts");
    add_common(train_cmd, false);
    auto* eval_cmd = app.add_subcommand("eval", "Report validation accuracy and L_graph of a checkpoint");
    add_common(eval_cmd, true);
    auto* prune_cmd = app.add_subcommand("prune", "Drop modules by importance and write prune_report.csv");
    add_common(prune_cmd, true);
    prune_cmd->add_option("--schedule", schedule, "Comma-separated numbers of modules to drop");
    auto* export_cmd = app.add_subcommand("export-graph", "Write the thresholded module graph");
    add_common(export_cmd, true);
    export_cmd->add_option("--threshold", threshold, "Keep edges with P above this value");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*train_cmd) return cmd_train(config, seed);
        if (*eval_cmd) return cmd_eval(config, checkpoint, seed);
        if (*prune_cmd) return cmd_prune(config, checkpoint, schedule, seed);
        if (*export_cmd) return cmd_export_graph(config, checkpoint, threshold, seed);
    } catch (const MissingFile& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitMissingFile;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitBadConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitFailure;
}

}  // namespace nac
