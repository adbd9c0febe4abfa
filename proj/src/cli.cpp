#include "fitq/cli.hpp"

#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "fitq/serialize.hpp"

namespace fitq {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ValidationError(where + ": expected an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw ValidationError(where + ": unknown key '" + key + "'");
}

template <typename T>
T get_field(const json& j, const std::string& where, const std::string& key, std::optional<T> fallback = std::nullopt) {
    if (!j.contains(key)) {
        if (fallback) return *fallback;
        throw ValidationError(where + ": missing required key '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(where + ": bad value for '" + key + "'");
    }
}

struct DatasetSpec {
    std::string kind;  // synthetic | idx
    // synthetic
    int64_t num_classes = 10, image_size = 8, train_samples = 640, test_samples = 640;
    double noise = 0.2;
    uint64_t seed = 1;
    // idx
    std::string train_images, train_labels, test_images, test_labels;
    int64_t limit = -1;

    static DatasetSpec parse(const json& j) {
        DatasetSpec d;
        d.kind = get_field<std::string>(j, "dataset", "kind");
        if (d.kind == "synthetic") {
            check_keys(j, "dataset",
                       {"kind", "num_classes", "image_size", "train_samples", "test_samples", "noise", "seed"});
            d.num_classes = get_field<int64_t>(j, "dataset", "num_classes", {10});
            d.image_size = get_field<int64_t>(j, "dataset", "image_size", {8});
            d.train_samples = get_field<int64_t>(j, "dataset", "train_samples", {640});
            d.test_samples = get_field<int64_t>(j, "dataset", "test_samples", {640});
            d.noise = get_field<double>(j, "dataset", "noise", {0.2});
            d.seed = get_field<uint64_t>(j, "dataset", "seed", {1});
        } else if (d.kind == "idx") {
            check_keys(j, "dataset", {"kind", "train_images", "train_labels", "test_images", "test_labels", "limit"});
            d.train_images = get_field<std::string>(j, "dataset", "train_images");
            d.train_labels = get_field<std::string>(j, "dataset", "train_labels");
            d.test_images = get_field<std::string>(j, "dataset", "test_images");
            d.test_labels = get_field<std::string>(j, "dataset", "test_labels");
            d.limit = get_field<int64_t>(j, "dataset", "limit", {-1});
        } else {
            throw ValidationError("dataset: unknown kind '" + d.kind + "'");
        }
        return d;
    }

    std::pair<Dataset, Dataset> load() const {
        if (kind == "synthetic")
            return make_synthetic_split(train_samples, test_samples, num_classes, image_size, seed, noise);
        Dataset train = load_idx(train_images, train_labels, "train", limit);
        Dataset test = load_idx(test_images, test_labels, "test", limit);
        const int64_t classes = std::max(train.num_classes, test.num_classes);
        train.num_classes = test.num_classes = classes;
        return {std::move(train), std::move(test)};
    }
};

TrainConfig parse_train(const json& j, const std::string& where) {
    check_keys(j, where, {"epochs", "lr", "schedule", "batch_size", "seed", "optimizer"});
    TrainConfig cfg;
    cfg.epochs = get_field<int64_t>(j, where, "epochs", {50});
    cfg.lr = get_field<double>(j, where, "lr", {0.01});
    cfg.batch_size = get_field<int64_t>(j, where, "batch_size", {32});
    cfg.seed = get_field<uint64_t>(j, where, "seed", {0});
    const std::string sched = get_field<std::string>(j, where, "schedule", {std::string("cosine")});
    if (sched == "cosine")
        cfg.schedule = ScheduleKind::cosine;
    else if (sched == "constant")
        cfg.schedule = ScheduleKind::constant;
    else
        throw ValidationError(where + ": unknown schedule '" + sched + "'");
    const std::string opt = get_field<std::string>(j, where, "optimizer", {std::string("adam")});
    if (opt == "adam")
        cfg.optimizer = OptimizerKind::adam;
    else if (opt == "sgd")
        cfg.optimizer = OptimizerKind::sgd;
    else
        throw ValidationError(where + ": unknown optimizer '" + opt + "'");
    cfg.validate();
    return cfg;
}

struct RunConfig {
    DatasetSpec dataset;
    std::vector<int64_t> conv_channels{8, 16, 32};
    int64_t kernel = 3;
    bool batchnorm = false;
    TrainConfig train_cfg;
    TrainConfig qat_cfg;
    TraceOptions trace_opt;
    std::vector<int> bits{8, 6, 4, 3};
    int64_t sweep_configs = 24;
    uint64_t sweep_seed = 11;
    int64_t jobs = 1;
    int64_t bench_iters = 200;
    int64_t bench_repeats = 3;
    int64_t bench_batch = 32;
    uint64_t bench_seed = 5;
    fs::path out = "runs/out";

    static RunConfig parse_file(const fs::path& path) {
        json j;
        try {
            j = json::parse(read_file(path));
        } catch (const json::parse_error& e) {
            throw ValidationError(path.string() + ": " + e.what());
        }
        check_keys(j, "config",
                   {"schema_version", "dataset", "model", "train", "qat", "trace", "bits", "sweep", "bench", "out"});
        if (get_field<int>(j, "config", "schema_version") != kSchemaVersion)
            throw ValidationError(path.string() + ": schema_version mismatch");

        RunConfig c;
        c.dataset = DatasetSpec::parse(j.at("dataset"));
        if (j.contains("model")) {
            check_keys(j.at("model"), "model", {"conv_channels", "kernel", "batchnorm"});
            c.conv_channels = get_field<std::vector<int64_t>>(j.at("model"), "model", "conv_channels", {c.conv_channels});
            c.kernel = get_field<int64_t>(j.at("model"), "model", "kernel", {3});
            c.batchnorm = get_field<bool>(j.at("model"), "model", "batchnorm", {false});
        }
        c.train_cfg = j.contains("train") ? parse_train(j.at("train"), "train") : TrainConfig{};
        if (j.contains("qat")) {
            c.qat_cfg = parse_train(j.at("qat"), "qat");
        } else {
            c.qat_cfg = c.train_cfg;
            c.qat_cfg.epochs = std::max<int64_t>(1, c.train_cfg.epochs / 3);
            c.qat_cfg.lr = c.train_cfg.lr * 0.1;
        }
        if (j.contains("trace")) {
            const json& t = j.at("trace");
            check_keys(t, "trace", {"tolerance", "max_iters", "batch_size", "window", "seed"});
            c.trace_opt.tolerance = get_field<double>(t, "trace", "tolerance", {0.01});
            c.trace_opt.max_iters = get_field<int64_t>(t, "trace", "max_iters", {200});
            c.trace_opt.batch_size = get_field<int64_t>(t, "trace", "batch_size", {32});
            c.trace_opt.window = get_field<int64_t>(t, "trace", "window", {20});
            c.trace_opt.seed = get_field<uint64_t>(t, "trace", "seed", {3});
        }
        if (j.contains("bits")) c.bits = j.at("bits").get<std::vector<int>>();
        if (c.bits.empty()) throw ValidationError("config: bits must be nonempty");
        if (j.contains("sweep")) {
            const json& s = j.at("sweep");
            check_keys(s, "sweep", {"n_configs", "seed", "jobs"});
            c.sweep_configs = get_field<int64_t>(s, "sweep", "n_configs", {24});
            c.sweep_seed = get_field<uint64_t>(s, "sweep", "seed", {11});
            c.jobs = get_field<int64_t>(s, "sweep", "jobs", {1});
        }
        if (j.contains("bench")) {
            const json& b = j.at("bench");
            check_keys(b, "bench", {"iters", "repeats", "batch_size", "seed"});
            c.bench_iters = get_field<int64_t>(b, "bench", "iters", {200});
            c.bench_repeats = get_field<int64_t>(b, "bench", "repeats", {3});
            c.bench_batch = get_field<int64_t>(b, "bench", "batch_size", {32});
            c.bench_seed = get_field<uint64_t>(b, "bench", "seed", {5});
        }
        if (j.contains("out")) c.out = get_field<std::string>(j, "config", "out");
        return c;
    }

    Model build_model(const Dataset& train) const {
        const Shape in{train.inputs.dim(1), train.inputs.dim(2), train.inputs.dim(3)};
        return make_desk_cnn(in, train.num_classes, conv_channels, batchnorm, derive_seed(train_cfg.seed, "init"),
                             kernel);
    }
};

struct CommonFlags {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<double> tolerance;
    std::optional<int64_t> max_iters;
    std::optional<std::vector<int>> bits;
    std::optional<int64_t> jobs;
    std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool config_required = true) {
    auto* opt = cmd->add_option("--config", f.config_path, "JSON run configuration");
    if (config_required) opt->required();
    cmd->add_option("--seed", f.seed, "override the command's primary seed");
    cmd->add_option("--tolerance", f.tolerance, "trace convergence tolerance (0 disables early stop)");
    cmd->add_option("--max-iters", f.max_iters, "trace iteration cap");
    cmd->add_option("--bits", f.bits, "bit set, e.g. 8,6,4,3")->delimiter(',');
    cmd->add_option("--jobs", f.jobs, "sweep worker threads");
    cmd->add_option("--out", f.out, "output directory");
}

RunConfig load_config(const CommonFlags& f) {
    RunConfig c = RunConfig::parse_file(f.config_path);
    if (f.tolerance) c.trace_opt.tolerance = *f.tolerance;
    if (f.max_iters) c.trace_opt.max_iters = *f.max_iters;
    if (f.bits) c.bits = *f.bits;
    if (f.jobs) c.jobs = *f.jobs;
    if (f.out) c.out = *f.out;
    return c;
}

int cmd_train(const CommonFlags& flags) {
    RunConfig cfg = load_config(flags);
    if (flags.seed) cfg.train_cfg.seed = *flags.seed;
    auto [train_data, test_data] = cfg.dataset.load();
    Model model = cfg.build_model(train_data);
    TrainResult hist = train(model, train_data, cfg.train_cfg);
    save_checkpoint(model, cfg.out / "checkpoint.json");
    save_train_history_csv(hist.epoch_loss, cfg.out / "train_history.csv");
    EvalResult tr = evaluate(model, train_data);
    EvalResult te = evaluate(model, test_data);
    std::cout << "trained " << cfg.train_cfg.epochs << " epochs; final loss " << hist.epoch_loss.back()
              << "; train acc " << tr.accuracy << "; test acc " << te.accuracy << "\n"
              << "checkpoint: " << (cfg.out / "checkpoint.json").string() << "\n";
    return 0;
}

int cmd_calibrate(const CommonFlags& flags, const std::string& model_path) {
    RunConfig cfg = load_config(flags);
    const fs::path ckpt = model_path.empty() ? cfg.out / "checkpoint.json" : fs::path(model_path);
    Model model = load_checkpoint(ckpt);
    auto [train_data, test_data] = cfg.dataset.load();
    Ranges r = track_ranges(model, train_data, cfg.trace_opt.batch_size);
    Provenance prov;
    prov.inputs.push_back({"checkpoint", ckpt});
    save_ranges(r, cfg.out / "ranges.json", prov);
    std::cout << "ranges: " << (cfg.out / "ranges.json").string() << "\n";
    return 0;
}

int cmd_trace(const CommonFlags& flags, const std::string& model_path, const std::string& mode) {
    RunConfig cfg = load_config(flags);
    if (flags.seed) cfg.trace_opt.seed = *flags.seed;
    const fs::path ckpt = model_path.empty() ? cfg.out / "checkpoint.json" : fs::path(model_path);
    Model model = load_checkpoint(ckpt);
    auto [train_data, test_data] = cfg.dataset.load();

    TraceReport rep;
    if (mode == "ef-weight")
        rep = ef_weight_trace(model, train_data, cfg.trace_opt);
    else if (mode == "ef-activation")
        rep = ef_activation_trace(model, train_data, cfg.trace_opt);
    else if (mode == "hutchinson")
        rep = hutchinson_trace(model, train_data, cfg.trace_opt);
    else
        throw ValidationError("trace: unsupported mode '" + mode + "' (ef-weight | ef-activation | hutchinson)");

    Provenance prov;
    prov.inputs.push_back({"checkpoint", ckpt});
    const fs::path out = cfg.out / ("trace_" + mode + ".json");
    save_trace_report(rep, out, prov);
    std::cout << "estimator " << rep.estimator << (rep.converged ? " converged" : " hit max-iters") << " after "
              << rep.iterations << " iterations\n";
    for (const auto& b : rep.blocks)
        std::cout << "  " << b.name << ": trace " << b.mean_trace << " (iters " << b.iterations << ")\n";
    std::cout << "report: " << out.string() << "\n";
    return 0;
}

int cmd_fit(const CommonFlags& flags, const std::string& wtrace_path, const std::string& atrace_path,
            const std::string& ranges_path, const std::string& bits_path) {
    RunConfig cfg = load_config(flags);
    TraceReport wt = load_trace_report(wtrace_path);
    TraceReport at = load_trace_report(atrace_path);
    Ranges ranges = load_ranges(ranges_path);
    BitConfig bits = load_bitconfig(bits_path);
    FITReport rep = fit_metric(wt.block_means(), at.block_means(), bits, ranges);
    Provenance prov;
    prov.inputs.push_back({"weight_traces", wtrace_path});
    prov.inputs.push_back({"activation_traces", atrace_path});
    prov.inputs.push_back({"ranges", ranges_path});
    prov.inputs.push_back({"bitconfig", bits_path});
    save_fit_report(rep, cfg.out / "fit_report.json", prov);
    std::cout << "omega " << rep.omega << "\n" << "report: " << (cfg.out / "fit_report.json").string() << "\n";
    return 0;
}

int cmd_sweep(const CommonFlags& flags, const std::string& model_path) {
    RunConfig cfg = load_config(flags);
    if (flags.seed) cfg.sweep_seed = *flags.seed;
    auto [train_data, test_data] = cfg.dataset.load();

    Model model = [&]() {
        if (!model_path.empty()) return load_checkpoint(model_path);
        Model m = cfg.build_model(train_data);
        std::cout << "training full-precision checkpoint (" << cfg.train_cfg.epochs << " epochs)\n";
        train(m, train_data, cfg.train_cfg);
        return m;
    }();
    const fs::path ckpt = cfg.out / "checkpoint_fp.json";
    save_checkpoint(model, ckpt);

    SweepOptions sopt;
    sopt.n_configs = cfg.sweep_configs;
    sopt.bit_set = cfg.bits;
    sopt.seed = cfg.sweep_seed;
    sopt.qat_cfg = cfg.qat_cfg;
    sopt.trace_opt = cfg.trace_opt;
    sopt.jobs = cfg.jobs;
    SweepOutput sweep = run_sweep(model, train_data, test_data, sopt);

    Provenance prov;
    prov.inputs.push_back({"checkpoint", ckpt});
    save_sweep_csv(sweep, cfg.out / "sweep.csv");
    save_trace_report(sweep.weight_traces, cfg.out / "sweep_traces_weight.json", prov);
    save_trace_report(sweep.act_traces, cfg.out / "sweep_traces_activation.json", prov);
    save_ranges(sweep.ranges, cfg.out / "sweep_ranges.json", prov);
    std::cout << "sweep rows: " << sweep.rows.size() << " (" << sweep.failed_count << " failed)\n"
              << "csv: " << (cfg.out / "sweep.csv").string() << "\n";
    return 0;
}

int cmd_correlate(const CommonFlags& flags, const std::string& sweep_path) {
    RunConfig cfg = load_config(flags);
    const fs::path sp = sweep_path.empty() ? cfg.out / "sweep.csv" : fs::path(sweep_path);
    std::vector<SweepRow> rows = load_sweep_csv(sp);
    std::vector<CorrelationRow> cor = correlate(rows);
    Provenance prov;
    prov.inputs.push_back({"sweep", sp});
    save_correlations(cor, cfg.out / "correlations.json", prov);
    for (const auto& r : cor) {
        std::cout << r.heuristic << ": rho_test ";
        if (r.rho_test)
            std::cout << *r.rho_test;
        else
            std::cout << "indeterminate";
        std::cout << ", rho_train ";
        if (r.rho_train)
            std::cout << *r.rho_train;
        else
            std::cout << "indeterminate";
        std::cout << " (n=" << r.samples << ")\n";
    }
    std::cout << "report: " << (cfg.out / "correlations.json").string() << "\n";
    return 0;
}

int cmd_bench(const CommonFlags& flags, const std::string& model_path) {
    RunConfig cfg = load_config(flags);
    if (flags.seed) cfg.bench_seed = *flags.seed;
    auto [train_data, test_data] = cfg.dataset.load();
    Model model = [&]() {
        if (!model_path.empty()) return load_checkpoint(model_path);
        Model m = cfg.build_model(train_data);
        std::cout << "training full-precision checkpoint (" << cfg.train_cfg.epochs << " epochs)\n";
        train(m, train_data, cfg.train_cfg);
        return m;
    }();
    EstimatorBenchmark bench =
        benchmark_estimators(model, train_data, cfg.bench_batch, cfg.bench_iters, cfg.bench_repeats, cfg.bench_seed);
    save_benchmark(bench, cfg.out / "benchmark.json");
    std::cout << "EF variance " << bench.ef_variance << ", Hutchinson variance " << bench.hutchinson_variance << "\n"
              << "EF iter " << bench.ef_iter_seconds * 1e3 << " ms, Hutchinson iter "
              << bench.hutchinson_iter_seconds * 1e3 << " ms\n"
              << "speedup s = " << bench.speedup << "\n"
              << "report: " << (cfg.out / "benchmark.json").string() << "\n";
    return 0;
}

int cmd_sample_bits(const CommonFlags& flags, const std::vector<std::string>& layers, uint64_t seed) {
    RunConfig cfg = load_config(flags);
    if (layers.empty()) throw ValidationError("sample-bits: --layers required");
    BitConfig bits = sample_bitconfig(layers, cfg.bits, flags.seed.value_or(seed));
    save_bitconfig(bits, cfg.out / "bitconfig.json");
    std::cout << "bitconfig: " << (cfg.out / "bitconfig.json").string() << "\n";
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"Fisher-information-trace quantization sensitivity toolkit"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string model_path, mode, sweep_path;
    std::string wtrace_path, atrace_path, ranges_path, bits_path;
    std::vector<std::string> layers;
    uint64_t bits_seed = 0;

    auto* train_cmd = app.add_subcommand("train", "train the full-precision model");
    add_common(train_cmd, flags);

    auto* cal_cmd = app.add_subcommand("calibrate", "track weight and activation quantization ranges");
    add_common(cal_cmd, flags);
    cal_cmd->add_option("--model", model_path, "checkpoint path (defaults to <out>/checkpoint.json)");

    auto* trace_cmd = app.add_subcommand("trace", "estimate per-block sensitivity traces");
    add_common(trace_cmd, flags);
    trace_cmd->add_option("--model", model_path, "checkpoint path");
    trace_cmd->add_option("--mode", mode, "ef-weight | ef-activation | hutchinson")->required();

    auto* fit_cmd = app.add_subcommand("fit", "combine traces, ranges and a bit config into the FIT score");
    add_common(fit_cmd, flags);
    fit_cmd->add_option("--wtraces", wtrace_path, "weight trace report")->required();
    fit_cmd->add_option("--atraces", atrace_path, "activation trace report")->required();
    fit_cmd->add_option("--ranges", ranges_path, "ranges report")->required();
    fit_cmd->add_option("--bitconfig", bits_path, "bit configuration")->required();

    auto* sweep_cmd = app.add_subcommand("sweep", "score and QAT-fine-tune sampled bit configurations");
    add_common(sweep_cmd, flags);
    sweep_cmd->add_option("--model", model_path, "optional FP checkpoint; trained from config when absent");

    auto* cor_cmd = app.add_subcommand("correlate", "rank-correlate heuristic scores against accuracy");
    add_common(cor_cmd, flags);
    cor_cmd->add_option("--sweep", sweep_path, "sweep csv (defaults to <out>/sweep.csv)");

    auto* bench_cmd = app.add_subcommand("bench", "EF vs Hutchinson estimator benchmark");
    add_common(bench_cmd, flags);
    bench_cmd->add_option("--model", model_path, "optional FP checkpoint; trained from config when absent");

    auto* bits_cmd = app.add_subcommand("sample-bits", "sample a random per-layer bit configuration");
    add_common(bits_cmd, flags);
    bits_cmd->add_option("--layers", layers, "quantizable layer names")->delimiter(',')->required();
    bits_cmd->add_option("--bits-seed", bits_seed, "sampling seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(flags);
        if (cal_cmd->parsed()) return cmd_calibrate(flags, model_path);
        if (trace_cmd->parsed()) return cmd_trace(flags, model_path, mode);
        if (fit_cmd->parsed()) return cmd_fit(flags, wtrace_path, atrace_path, ranges_path, bits_path);
        if (sweep_cmd->parsed()) return cmd_sweep(flags, model_path);
        if (cor_cmd->parsed()) return cmd_correlate(flags, sweep_path);
        if (bench_cmd->parsed()) return cmd_bench(flags, model_path);
        if (bits_cmd->parsed()) return cmd_sample_bits(flags, layers, bits_seed);
        throw ValidationError("no subcommand");
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace fitq
