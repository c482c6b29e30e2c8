#include "ftnn/experiment.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "ftnn/error.hpp"
#include "ftnn/mnist.hpp"
#include "ftnn/model_io.hpp"

namespace ftnn {

namespace {

using nlohmann::json;

namespace cfgstreams {
// seed-derivation stream ids for config resolution
constexpr std::uint64_t stage_base = 0x57A6E;
constexpr std::uint64_t head = 0xF17A1;
constexpr std::uint64_t augment = 0xA06;
constexpr std::uint64_t val_split = 0x5B117;
constexpr std::uint64_t synth = 0xDA7A;
constexpr std::uint64_t deep_init = 0xB0;
}  // namespace cfgstreams

void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) {
            if (key == a) {
                ok = true;
                break;
            }
        }
        if (!ok) throw ConfigError("unknown key '" + (path.empty() ? key : path + "." + key) + "'");
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("field '") + key + "' has the wrong type");
    }
}

template <typename T>
T require(const json& obj, const std::string& path, const char* key) {
    if (!obj.contains(key)) {
        throw ConfigError("missing required field '" + (path.empty() ? key : path + "." + key) + "'");
    }
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("field '" + (path.empty() ? key : path + "." + key) + "' has the wrong type");
    }
}

TrainConfig parse_train(const json& obj, const std::string& path, std::uint64_t default_seed) {
    check_keys(obj, path, {"learning_rate", "momentum", "batch_size", "epochs", "l2", "seed"});
    TrainConfig cfg;
    cfg.learning_rate = get_or(obj, "learning_rate", cfg.learning_rate);
    cfg.momentum = get_or(obj, "momentum", cfg.momentum);
    cfg.batch_size = get_or(obj, "batch_size", cfg.batch_size);
    cfg.epochs = require<std::size_t>(obj, path, "epochs");
    cfg.l2_coefficient = get_or(obj, "l2", cfg.l2_coefficient);
    cfg.seed = get_or<std::uint64_t>(obj, "seed", 0);
    if (cfg.seed == 0) cfg.seed = default_seed;
    try {
        validate(cfg);
    } catch (const DomainError& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return cfg;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string find_mnist_file(const std::string& dir, const std::string& base) {
    namespace fs = std::filesystem;
    const fs::path plain = fs::path(dir) / base;
    if (fs::exists(plain)) return plain.string();
    const fs::path gz = fs::path(dir) / (base + ".gz");
    if (fs::exists(gz)) return gz.string();
    throw IoError("MNIST file not found: " + plain.string() + " (also tried .gz)");
}

Dataset take_first(const Dataset& data, std::size_t n) {
    std::vector<std::size_t> idx(std::min(n, data.size()));
    std::iota(idx.begin(), idx.end(), 0);
    Tensor feats = data.gather(idx);
    std::vector<int> labels(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = data.labels()[idx[i]];
    return Dataset(std::move(feats), std::move(labels), data.n_classes());
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(root, "", {"mode", "seed", "output_dir", "threads", "data", "stages", "head", "stopping",
                          "spill_dir", "evaluate_test"});

    ExperimentConfig cfg;
    cfg.mode = require<std::string>(root, "", "mode");
    if (cfg.mode != "ft_dense" && cfg.mode != "ft_conv" && cfg.mode != "backprop") {
        throw ConfigError("mode must be one of ft_dense | ft_conv | backprop, got '" + cfg.mode + "'");
    }
    cfg.seed = get_or<std::uint64_t>(root, "seed", 1);
    cfg.output_dir = require<std::string>(root, "", "output_dir");
    cfg.threads = get_or(root, "threads", 0);
    cfg.spill_dir = get_or<std::string>(root, "spill_dir", "");
    cfg.evaluate_test = get_or(root, "evaluate_test", true);

    if (!root.contains("data")) throw ConfigError("missing required field 'data'");
    const json& data = root.at("data");
    check_keys(data, "data", {"source", "mnist_dir", "val_fraction", "limit_train", "augment", "xor"});
    cfg.source = require<std::string>(data, "data", "source");
    if (cfg.source != "mnist" && cfg.source != "xor") {
        throw ConfigError("data.source must be 'mnist' or 'xor', got '" + cfg.source + "'");
    }
    cfg.val_fraction = get_or(data, "val_fraction", 0.1);
    if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0)) {
        throw ConfigError("data.val_fraction must lie in (0, 1)");
    }
    cfg.limit_train = get_or<std::size_t>(data, "limit_train", 0);
    if (cfg.source == "mnist") {
        cfg.mnist_dir = require<std::string>(data, "data", "mnist_dir");
    } else {
        if (data.contains("augment")) throw ConfigError("data.augment requires an image source");
        cfg.evaluate_test = false;
    }
    if (data.contains("augment")) {
        const json& aug = data.at("augment");
        check_keys(aug, "data.augment",
                   {"copies_per_image", "max_shift_px", "max_rotation_deg", "scale_range", "seed"});
        cfg.has_augment = true;
        cfg.aug.copies_per_image = get_or<std::size_t>(aug, "copies_per_image", 1);
        cfg.aug.max_shift_px = get_or(aug, "max_shift_px", 2);
        cfg.aug.max_rotation_deg = get_or(aug, "max_rotation_deg", 15.0);
        if (aug.contains("scale_range")) {
            const auto range = aug.at("scale_range").get<std::vector<double>>();
            if (range.size() != 2) throw ConfigError("data.augment.scale_range must be [lo, hi]");
            cfg.aug.scale_lo = range[0];
            cfg.aug.scale_hi = range[1];
        }
        if (!(cfg.aug.scale_lo <= 1.0 && 1.0 <= cfg.aug.scale_hi)) {
            throw ConfigError("data.augment.scale_range must contain 1.0");
        }
        cfg.aug.seed = get_or<std::uint64_t>(aug, "seed", 0);
        if (cfg.aug.seed == 0) cfg.aug.seed = SeededRng::derive(cfg.seed, cfgstreams::augment);
    }
    if (data.contains("xor")) {
        const json& x = data.at("xor");
        check_keys(x, "data.xor", {"n", "noise"});
        cfg.xor_n = get_or<std::size_t>(x, "n", 2000);
        cfg.xor_noise = get_or(x, "noise", 0.2);
    }

    if (!root.contains("stages")) throw ConfigError("missing required field 'stages'");
    const json& stages = root.at("stages");
    if (!stages.is_array() || stages.empty()) throw ConfigError("'stages' must be a nonempty array");
    std::size_t stage_index = 0;
    for (const json& s : stages) {
        const std::string path = "stages[" + std::to_string(stage_index) + "]";
        check_keys(s, path, {"kind", "width", "filters", "pool", "fc_width", "dropout", "fc_dropout", "train"});
        StageSpec spec;
        const auto kind = require<std::string>(s, path, "kind");
        if (kind == "dense") {
            StageSpec::Dense dense{};
            dense.width = require<std::size_t>(s, path, "width");
            if (dense.width == 0) throw ConfigError(path + ".width must be positive");
            if (s.contains("filters") || s.contains("pool")) {
                throw ConfigError(path + ": 'filters'/'pool' are conv-only keys");
            }
            spec.kind = dense;
        } else if (kind == "conv") {
            StageSpec::Conv conv{};
            conv.filters = require<std::size_t>(s, path, "filters");
            if (conv.filters == 0) throw ConfigError(path + ".filters must be positive");
            conv.with_pool = get_or(s, "pool", true);
            if (s.contains("width")) throw ConfigError(path + ": 'width' is a dense-only key");
            spec.kind = conv;
        } else {
            throw ConfigError(path + ".kind must be 'dense' or 'conv'");
        }
        spec.head_hidden_width = get_or<std::size_t>(s, "fc_width", 0);
        spec.stage_dropout = get_or(s, "dropout", 0.0);
        spec.fc_dropout = get_or(s, "fc_dropout", 0.0);
        if (spec.stage_dropout < 0.0 || spec.stage_dropout >= 1.0 || spec.fc_dropout < 0.0 ||
            spec.fc_dropout >= 1.0) {
            throw ConfigError(path + ": dropout rates must lie in [0, 1)");
        }
        if (!s.contains("train")) throw ConfigError("missing required field '" + path + ".train'");
        spec.train = parse_train(s.at("train"), path + ".train",
                                 SeededRng::derive(cfg.seed, cfgstreams::stage_base + stage_index));
        cfg.schedule.push_back(std::move(spec));
        ++stage_index;
    }

    const bool needs_head = cfg.mode == "ft_dense" || cfg.mode == "backprop";
    if (root.contains("head")) {
        const json& head = root.at("head");
        check_keys(head, "head", {"train"});
        if (!head.contains("train")) throw ConfigError("missing required field 'head.train'");
        cfg.head_train = parse_train(head.at("train"), "head.train", SeededRng::derive(cfg.seed, cfgstreams::head));
    } else if (needs_head) {
        throw ConfigError("missing required field 'head' (train config for mode " + cfg.mode + ")");
    }

    if (root.contains("stopping")) {
        const json& stop = root.at("stopping");
        check_keys(stop, "stopping", {"min_improvement", "patience", "max_stages"});
        cfg.stopping.min_improvement = get_or(stop, "min_improvement", 0.001);
        cfg.stopping.patience = get_or<std::size_t>(stop, "patience", 1);
        const auto max_stages = get_or<std::size_t>(stop, "max_stages", 0);
        cfg.stopping.max_stages = max_stages == 0 ? cfg.schedule.size() : max_stages;
        if (cfg.stopping.patience < 1) throw ConfigError("stopping.patience must be at least 1");
    } else {
        cfg.stopping.max_stages = cfg.schedule.size();
    }

    // mode/schedule agreement
    for (std::size_t k = 0; k < cfg.schedule.size(); ++k) {
        const bool is_conv = std::holds_alternative<StageSpec::Conv>(cfg.schedule[k].kind);
        if (cfg.mode == "ft_dense" && is_conv) {
            throw ConfigError("ft_dense schedule cannot contain conv stages (stages[" + std::to_string(k) + "])");
        }
        if (cfg.mode == "ft_conv" && !is_conv) {
            throw ConfigError("ft_conv schedule cannot contain dense stages (stages[" + std::to_string(k) + "])");
        }
        if (cfg.mode == "ft_conv" && cfg.schedule[k].head_hidden_width == 0) {
            throw ConfigError("ft_conv stages need fc_width (stages[" + std::to_string(k) + "])");
        }
    }
    if (cfg.mode == "ft_conv" || (cfg.mode == "backprop" &&
                                  std::holds_alternative<StageSpec::Conv>(cfg.schedule.front().kind))) {
        if (cfg.source == "xor") throw ConfigError("conv pipelines need an image source");
    }
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_experiment_config(ss.str());
}

std::string resolved_config_json(const ExperimentConfig& cfg) {
    json root;
    root["mode"] = cfg.mode;
    root["seed"] = cfg.seed;
    root["output_dir"] = cfg.output_dir;
    root["threads"] = cfg.threads;
    root["spill_dir"] = cfg.spill_dir;
    root["evaluate_test"] = cfg.evaluate_test;
    json data;
    data["source"] = cfg.source;
    data["val_fraction"] = cfg.val_fraction;
    data["limit_train"] = cfg.limit_train;
    if (cfg.source == "mnist") data["mnist_dir"] = cfg.mnist_dir;
    if (cfg.has_augment) {
        data["augment"] = {{"copies_per_image", cfg.aug.copies_per_image},
                           {"max_shift_px", cfg.aug.max_shift_px},
                           {"max_rotation_deg", cfg.aug.max_rotation_deg},
                           {"scale_range", {cfg.aug.scale_lo, cfg.aug.scale_hi}},
                           {"seed", cfg.aug.seed}};
    }
    if (cfg.source == "xor") data["xor"] = {{"n", cfg.xor_n}, {"noise", cfg.xor_noise}};
    root["data"] = std::move(data);
    json stages = json::array();
    for (const StageSpec& spec : cfg.schedule) {
        json s;
        if (const auto* dense = std::get_if<StageSpec::Dense>(&spec.kind)) {
            s["kind"] = "dense";
            s["width"] = dense->width;
        } else {
            const auto& conv = std::get<StageSpec::Conv>(spec.kind);
            s["kind"] = "conv";
            s["filters"] = conv.filters;
            s["pool"] = conv.with_pool;
        }
        if (spec.head_hidden_width > 0) s["fc_width"] = spec.head_hidden_width;
        s["dropout"] = spec.stage_dropout;
        s["fc_dropout"] = spec.fc_dropout;
        s["train"] = {{"learning_rate", spec.train.learning_rate}, {"momentum", spec.train.momentum},
                      {"batch_size", spec.train.batch_size},      {"epochs", spec.train.epochs},
                      {"l2", spec.train.l2_coefficient},          {"seed", spec.train.seed}};
        stages.push_back(std::move(s));
    }
    root["stages"] = std::move(stages);
    if (cfg.mode != "ft_conv") {
        root["head"] = {{"train",
                         {{"learning_rate", cfg.head_train.learning_rate},
                          {"momentum", cfg.head_train.momentum},
                          {"batch_size", cfg.head_train.batch_size},
                          {"epochs", cfg.head_train.epochs},
                          {"l2", cfg.head_train.l2_coefficient},
                          {"seed", cfg.head_train.seed}}}};
    }
    root["stopping"] = {{"min_improvement", cfg.stopping.min_improvement},
                        {"patience", cfg.stopping.patience},
                        {"max_stages", cfg.stopping.max_stages}};
    return root.dump(2) + "\n";
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << "phase,stage,epoch,train_loss,train_acc,val_acc,test_acc,wall_seconds\n";
    for (const MetricsRow& row : rows) {
        f << row.phase << ',' << row.stage << ',' << row.epoch.epoch << ',' << fmt_double(row.epoch.train_loss)
          << ',' << fmt_double(row.epoch.train_accuracy) << ',' << fmt_double(row.epoch.val_accuracy) << ',';
        if (row.epoch.test_accuracy >= 0.0) f << fmt_double(row.epoch.test_accuracy);
        f << ',' << fmt_double(row.epoch.wall_seconds) << '\n';
    }
    if (!f) throw IoError("short write to " + path);
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw ParseError(path + ": empty metrics file");
    if (line != "phase,stage,epoch,train_loss,train_acc,val_acc,test_acc,wall_seconds") {
        throw ParseError(path + ": unexpected metrics header");
    }
    std::vector<MetricsRow> rows;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.push_back("");
        if (cells.size() != 8) {
            throw ParseError(path + ": line " + std::to_string(lineno) + " has " +
                             std::to_string(cells.size()) + " cells, expected 8");
        }
        MetricsRow row;
        row.phase = cells[0];
        row.stage = std::stoul(cells[1]);
        row.epoch.epoch = std::stoul(cells[2]);
        row.epoch.train_loss = std::stod(cells[3]);
        row.epoch.train_accuracy = std::stod(cells[4]);
        row.epoch.val_accuracy = std::stod(cells[5]);
        row.epoch.test_accuracy = cells[6].empty() ? -1.0 : std::stod(cells[6]);
        row.epoch.wall_seconds = std::stod(cells[7]);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string metrics_csv_without_timing(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::string out, line;
    while (std::getline(f, line)) {
        const auto cut = line.rfind(',');
        out += line.substr(0, cut);
        out += '\n';
    }
    return out;
}

namespace {

struct PreparedData {
    Dataset train, val, test;
    bool has_test = false;
};

PreparedData prepare_data(const ExperimentConfig& cfg) {
    PreparedData out;
    if (cfg.source == "xor") {
        const Dataset all = synth_xor(cfg.xor_n, cfg.xor_noise, SeededRng::derive(cfg.seed, cfgstreams::synth));
        auto [train, val] = split(all, cfg.val_fraction, SeededRng::derive(cfg.seed, cfgstreams::val_split));
        out.train = std::move(train);
        out.val = std::move(val);
        return out;
    }
    const RawDataset raw_train = load_idx(find_mnist_file(cfg.mnist_dir, "train-images-idx3-ubyte"),
                                          find_mnist_file(cfg.mnist_dir, "train-labels-idx1-ubyte"));
    Dataset full = normalize(raw_train, Layout::image, 10);
    if (cfg.limit_train > 0) full = take_first(full, cfg.limit_train);
    auto [train, val] = split(full, cfg.val_fraction, SeededRng::derive(cfg.seed, cfgstreams::val_split));
    if (cfg.has_augment) train = augment(train, cfg.aug);
    out.train = std::move(train);
    out.val = std::move(val);
    if (cfg.evaluate_test) {
        const RawDataset raw_test = load_idx(find_mnist_file(cfg.mnist_dir, "t10k-images-idx3-ubyte"),
                                             find_mnist_file(cfg.mnist_dir, "t10k-labels-idx1-ubyte"));
        out.test = normalize(raw_test, Layout::image, 10);
        out.has_test = true;
    }

    const bool wants_flat = cfg.mode == "ft_dense" ||
                            (cfg.mode == "backprop" &&
                             std::holds_alternative<StageSpec::Dense>(cfg.schedule.front().kind));
    if (wants_flat) {
        out.train = out.train.flattened();
        out.val = out.val.flattened();
        if (out.has_test) out.test = out.test.flattened();
    }
    return out;
}

void append_rows(std::vector<MetricsRow>& rows, const std::string& phase, std::size_t stage,
                 const std::vector<EpochMetrics>& epochs) {
    for (const EpochMetrics& em : epochs) rows.push_back({phase, stage, em});
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    std::string output_dir = cfg.output_dir;
    if (const char* env = std::getenv("FTNN_OUTPUT_DIR")) output_dir = env;
    if (const char* env = std::getenv("FTNN_THREADS")) {
        set_thread_count(std::atoi(env));
    } else if (cfg.threads > 0) {
        set_thread_count(cfg.threads);
    }
    fs::create_directories(output_dir);
    if (!cfg.spill_dir.empty()) fs::create_directories(cfg.spill_dir);

    ExperimentResult result;
    result.config_echo_path = (fs::path(output_dir) / "config_resolved.json").string();
    {
        std::ofstream echo(result.config_echo_path, std::ios::trunc);
        if (!echo) throw IoError("cannot write " + result.config_echo_path);
        echo << resolved_config_json(cfg);
    }
    // hash the experiment definition, not artifact placement
    ExperimentConfig hashable = cfg;
    hashable.output_dir.clear();
    hashable.spill_dir.clear();
    hashable.threads = 0;
    const std::string resolved = resolved_config_json(hashable);
    ModelProvenance prov;
    prov.config_hash = fnv1a_bytes(resolved.data(), resolved.size());
    prov.seed = cfg.seed;

    PreparedData data = prepare_data(cfg);
    const Dataset* test = data.has_test ? &data.test : nullptr;

    result.metrics_path = (fs::path(output_dir) / "metrics.csv").string();
    result.model_path = (fs::path(output_dir) / "model.ftm").string();

    if (cfg.mode == "ft_dense" || cfg.mode == "ft_conv") {
        ForwardThinkingResult ft =
            cfg.mode == "ft_dense"
                ? train_forward_thinking(data.train, data.val, cfg.schedule, cfg.stopping, cfg.head_train,
                                         test, cfg.spill_dir)
                : train_forward_thinking_conv(data.train, data.val, cfg.schedule, cfg.stopping, test,
                                              cfg.spill_dir);
        if (!ft.frozen_contract_ok) {
            throw ContractError("frozen-stage contract violated: parameters changed after freezing");
        }
        ft.model.seed = cfg.seed;
        for (const PhaseMetrics& pm : ft.phases) append_rows(result.rows, pm.phase, pm.stage, pm.epochs);
        save_model(ft.model, result.model_path, prov);
        result.final_val_accuracy = evaluate(ft.model, data.val);
        if (test != nullptr) result.final_test_accuracy = evaluate(ft.model, *test);
    } else {
        std::size_t final_fc_width = 0;
        double final_fc_dropout = 0.0;
        if (std::holds_alternative<StageSpec::Conv>(cfg.schedule.back().kind)) {
            final_fc_width = cfg.schedule.back().head_hidden_width;
            final_fc_dropout = cfg.schedule.back().fc_dropout;
        }
        DeepNet net = make_deep_net(cfg.schedule, final_fc_width, final_fc_dropout, data.train.sample_shape(),
                                    data.train.n_classes(), SeededRng::derive(cfg.seed, cfgstreams::deep_init));
        const std::vector<EpochMetrics> epochs = train_backprop(net, data.train, data.val, cfg.head_train, test);
        append_rows(result.rows, "backprop", 0, epochs);
        save_model(net, result.model_path, prov);
        result.final_val_accuracy = deep_accuracy(net, data.val);
        if (test != nullptr) result.final_test_accuracy = deep_accuracy(net, *test);
    }

    write_metrics_csv(result.metrics_path, result.rows);
    return result;
}

ComparisonReport compare_run_dirs(const std::string& dir_a, const std::string& dir_b,
                                  const std::string& report_path) {
    namespace fs = std::filesystem;
    auto metrics_of = [](const std::string& dir) {
        const std::string path = (fs::path(dir) / "metrics.csv").string();
        if (!fs::exists(path)) throw IoError("missing metrics: " + path);
        std::vector<EpochMetrics> epochs;
        for (const MetricsRow& row : read_metrics_csv(path)) epochs.push_back(row.epoch);
        return epochs;
    };
    const ComparisonReport report = compare_runs(metrics_of(dir_a), metrics_of(dir_b));
    std::ofstream f(report_path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + report_path);
    f << "time_seconds,acc_a,acc_b\n";
    for (const ComparisonRow& row : report.timeline) {
        f << fmt_double(row.time) << ',' << fmt_double(row.acc_a) << ',' << fmt_double(row.acc_b) << '\n';
    }
    return report;
}

std::string comparison_summary_text(const ComparisonReport& report) {
    std::ostringstream os;
    auto line = [&](const char* name, const RunSummary& s) {
        os << name << ": final_accuracy=" << s.final_accuracy << " epochs=" << s.epochs
           << " total_wall_seconds=" << s.total_wall_seconds << " seconds_per_epoch=" << s.seconds_per_epoch
           << "\n";
    };
    line("run_a", report.a);
    line("run_b", report.b);
    os << "speed_ratio (b/a): " << report.speed_ratio << "\n";
    return os.str();
}

}  // namespace ftnn
