// pemal: extract PE feature vectors, train and evaluate detectors, run
// feature-set ablations.
//
// Exit codes: 0 ok, 64 usage, 2 I/O, 3 data.

#include <pemal/pemal.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pemal;

namespace {

constexpr int kExitUsage = 64;
constexpr int kExitIo = 2;
constexpr int kExitData = 3;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string hex32(std::uint32_t v) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", v);
    return buf;
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw UsageError("split must be train or test");
}

// ---------------------------------------------------------------------------
// Manifest: everything needed to rerun the command. No timestamps, so reruns
// reproduce it byte for byte.

class Manifest {
public:
    explicit Manifest(std::string command) { doc_ = {{"command", std::move(command)}, {"version", PEMAL_VERSION}}; }

    json& config() { return doc_["config"]; }

    void add_input(const fs::path& path) {
        const auto bytes = binio::read_file(path);
        doc_["inputs"].push_back({{"path", path.generic_string()},
                                  {"bytes", bytes.size()},
                                  {"crc32", hex32(binio::crc32(bytes))}});
    }

    void add_output(const fs::path& path) { doc_["outputs"].push_back(path.generic_string()); }

    void write(const fs::path& artifact) const {
        write_text(fs::path(artifact.string() + ".manifest.json"), doc_.dump(2) + "\n");
    }

private:
    json doc_;
};

json train_config_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"optimizer", c.optimizer == Optimizer::Adam ? "adam" : "gd"},
            {"init", c.init == InitScheme::XavierUniform ? "xavier" : "lecun"},
            {"l2", c.l2},
            {"knn_k", c.knn_k}};
}

void add_train_options(CLI::App* cmd, TrainConfig& c, std::string& optimizer, std::string& init) {
    cmd->add_option("--lr", c.learning_rate, "Learning rate")->capture_default_str();
    cmd->add_option("--batch", c.batch_size, "Minibatch size")->capture_default_str();
    cmd->add_option("--epochs", c.epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--seed", c.seed, "RNG seed for initialization, shuffling and --take")->capture_default_str();
    cmd->add_option("--optimizer", optimizer, "adam or gd")->check(CLI::IsMember({"adam", "gd"}))->capture_default_str();
    cmd->add_option("--init", init, "xavier or lecun")->check(CLI::IsMember({"xavier", "lecun"}))->capture_default_str();
    cmd->add_option("--l2", c.l2, "L2 penalty (logistic only)")->capture_default_str();
    cmd->add_option("--k", c.knn_k, "Neighbours (knn only)")->capture_default_str();
}

void finish_train_config(TrainConfig& c, const std::string& optimizer, const std::string& init) {
    c.optimizer = optimizer == "gd" ? Optimizer::GradientDescent : Optimizer::Adam;
    c.init = init == "lecun" ? InitScheme::LecunUniform : InitScheme::XavierUniform;
    c.validate();
}

/// Loads, drops unlabeled rows, then applies --take.
LabeledDataset load_labeled(const fs::path& path, Split default_split, std::size_t take, std::uint64_t seed,
                            std::size_t threads) {
    auto ds = filter_labeled(load_dataset(path, default_split, threads));
    if (take > 0) ds = subsample(ds, take, seed);
    return ds;
}

// ---------------------------------------------------------------------------
// extract

std::vector<fs::path> collect_files(const std::vector<std::string>& inputs) {
    std::vector<fs::path> files;
    for (const auto& in : inputs) {
        const fs::path p(in);
        std::error_code ec;
        if (fs::is_directory(p, ec)) {
            for (const auto& e : fs::recursive_directory_iterator(p))
                if (e.is_regular_file()) files.push_back(e.path());
        } else if (fs::is_regular_file(p, ec)) {
            files.push_back(p);
        } else {
            throw IoError("cannot read " + p.string() + ": no such file or directory");
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

struct ExtractOptions {
    std::vector<std::string> inputs;
    std::string output;
    std::string format;
    int label = -1;
    std::string split = "train";
};

int cmd_extract(const ExtractOptions& o, std::size_t threads) {
    const auto files = collect_files(o.inputs);
    const Split split = parse_split(o.split);
    std::string format = o.format;
    if (format.empty()) format = fs::path(o.output).extension() == ".pefv" ? "cache" : "jsonl";

    struct Row {
        RawFeatures raw;
        std::string diagnostic;
    };
    const auto rows = parallel_map(files.size(), threads, [&](std::size_t i) {
        const auto bytes = binio::read_file(files[i]);
        Row r;
        r.raw = extract_raw(ByteSpan(bytes.data(), bytes.size()), &r.diagnostic);
        return r;
    });

    for (std::size_t i = 0; i < files.size(); ++i)
        if (!rows[i].raw.parsed)
            std::cerr << "warning: " << files[i].generic_string() << ": " << rows[i].diagnostic
                      << "; header-derived features zero-filled\n";

    Manifest m("extract");
    m.config() = {{"format", format}, {"label", o.label}, {"split", o.split}, {"threads", threads}};
    for (const auto& f : files) m.add_input(f);

    if (format == "cache") {
        LabeledDataset ds;
        ds.X.resize(static_cast<Eigen::Index>(files.size()), kFeatureDim);
        for (std::size_t i = 0; i < files.size(); ++i) {
            const auto fv = vectorize_raw(rows[i].raw);
            for (std::size_t c = 0; c < kFeatureDim; ++c)
                ds.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = static_cast<float>(fv.values[c]);
            ds.y.push_back(static_cast<std::int8_t>(o.label));
            ds.split.push_back(split);
            ds.ids.push_back(files[i].generic_string());
        }
        write_cache(ds, o.output);
    } else {
        std::string text;
        for (std::size_t i = 0; i < files.size(); ++i) {
            json j;
            if (format == "raw") {
                j = raw_to_json(rows[i].raw);
            } else {
                j["features"] = vectorize_raw(rows[i].raw).values;
            }
            j["id"] = files[i].generic_string();
            j["label"] = o.label;
            j["split"] = o.split;
            text += j.dump() + "\n";
        }
        write_text(o.output, text);
    }
    m.add_output(o.output);
    m.write(o.output);
    std::cerr << "extracted " << files.size() << " file(s) to " << o.output << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// vectorize

struct VectorizeOptions {
    std::string input, output, mode = "raw", split = "train";
    std::size_t take = 0;
    std::uint64_t seed = 42;
};

int cmd_vectorize(const VectorizeOptions& o, std::size_t threads) {
    const auto mode = o.mode == "raw" ? JsonlMode::RawFeatures : JsonlMode::Prevectorized;
    auto ds = load_jsonl(fs::path(o.input), mode, parse_split(o.split), threads);
    if (o.take > 0) ds = subsample(ds, o.take, o.seed);
    write_cache(ds, o.output);
    Manifest m("vectorize");
    m.config() = {{"mode", o.mode}, {"split", o.split}, {"take", o.take}, {"seed", o.seed}};
    m.add_input(o.input);
    m.add_output(o.output);
    m.write(o.output);
    std::cerr << "wrote " << ds.rows() << " row(s) to " << o.output << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train / eval

struct TrainOptions {
    std::string input, output, model = "mlp", mask = "ALL";
    std::size_t take = 0;
    TrainConfig config;
    std::string optimizer = "adam", init = "xavier";
};

int cmd_train(TrainOptions o, std::size_t threads) {
    finish_train_config(o.config, o.optimizer, o.init);
    const auto kind = parse_model_kind(o.model);
    const auto mask = FeatureMask::parse(o.mask);
    const auto ds = load_labeled(o.input, Split::Train, o.take, o.config.seed, threads);
    const auto train = ds.subset(Split::Train);
    if (train.rows() == 0) throw EmptyDataset("no labeled training rows in " + o.input);
    const auto model = train_pipeline(train, mask, kind, o.config);
    save_model(model, o.output);

    Manifest m("train");
    m.config() = {{"model", std::string(to_string(kind))},
                  {"mask", mask.name()},
                  {"take", o.take},
                  {"train_rows", train.rows()},
                  {"train", train_config_json(o.config)}};
    m.add_input(o.input);
    m.add_output(o.output);
    m.write(o.output);
    std::cerr << "trained " << to_string(kind) << " on " << train.rows() << " row(s), mask " << mask.name() << "\n";
    return 0;
}

struct EvalOptions {
    std::string model, input, output, split = "test";
    std::size_t take = 0;
    std::uint64_t seed = 42;
    double threshold = kDefaultThreshold;
};

int cmd_eval(const EvalOptions& o, std::size_t threads) {
    const auto model = load_model(o.model);
    auto ds = load_labeled(o.input, Split::Test, o.take, o.seed, threads);
    if (o.split != "all") ds = ds.subset(parse_split(o.split));
    if (ds.rows() == 0) throw EmptyDataset("no labeled rows to evaluate in " + o.input);
    const Vector scores = model.predict_proba(ds.X);
    const auto report = evaluate(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), ds.y,
                                 o.threshold);
    json out = to_json(report);
    out["rows"] = ds.rows();
    out["mask"] = model.mask.name();
    out["model"] = std::string(to_string(model.classifier->kind()));
    const auto text = out.dump(2) + "\n";
    if (o.output.empty()) {
        std::cout << text;
    } else {
        write_text(o.output, text);
        Manifest m("eval");
        m.config() = {{"split", o.split}, {"take", o.take}, {"seed", o.seed}, {"threshold", o.threshold}};
        m.add_input(o.model);
        m.add_input(o.input);
        m.add_output(o.output);
        m.write(o.output);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// ablate / report

struct AblateOptions {
    std::string input, output, json_output, text_output;
    std::vector<std::string> levels{"1"};
    std::vector<std::string> models{"mlp"};
    std::size_t take = 0;
    bool no_timing = false;
    TrainConfig config;
    std::string optimizer = "adam", init = "xavier";
};

int cmd_ablate(AblateOptions o, std::size_t threads) {
    finish_train_config(o.config, o.optimizer, o.init);
    std::vector<AblationLevel> levels;
    for (const auto& l : o.levels) levels.push_back(parse_level(l));
    std::vector<ModelKind> models;
    for (const auto& k : o.models) models.push_back(parse_model_kind(k));
    const auto ds = load_labeled(o.input, Split::Train, o.take, o.config.seed, threads);
    const auto report = run_ablation(ds, levels, models, o.config, {threads, !o.no_timing});

    write_text(o.output, to_csv(report));
    Manifest m("ablate");
    json names = json::array();
    for (auto k : models) names.push_back(std::string(to_string(k)));
    m.config() = {{"levels", o.levels},     {"models", names},          {"take", o.take},
                  {"threads", threads},     {"timing", !o.no_timing},  {"train", train_config_json(o.config)}};
    m.add_input(o.input);
    m.add_output(o.output);
    if (!o.json_output.empty()) {
        write_text(o.json_output, to_json(report).dump(2) + "\n");
        m.add_output(o.json_output);
    }
    if (!o.text_output.empty()) {
        write_text(o.text_output, to_text(report));
        m.add_output(o.text_output);
    }
    m.write(o.output);

    std::size_t failed = 0;
    for (const auto& r : report.rows)
        if (!r.metrics) {
            ++failed;
            std::cerr << "warning: " << r.mask.name() << "/" << to_string(r.model) << " failed: " << r.error << "\n";
        }
    std::cout << to_text(report);
    return failed == report.rows.size() && failed > 0 ? kExitData : 0;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream s(line);
    while (std::getline(s, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

/// Ablation CSV -> markdown table.
std::string csv_to_markdown(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(split_csv_line(line));
    if (rows.empty() || rows[0].empty() || rows[0][0] != "mask") throw ParseError(1, "not an ablation report CSV");
    std::string out;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size())
            throw ParseError(r + 1, "expected " + std::to_string(rows[0].size()) + " cells");
        out += "|";
        for (const auto& c : rows[r]) out += " " + (c.empty() ? std::string("-") : c) + " |";
        out += "\n";
        if (r == 0) {
            out += "|";
            for (std::size_t c = 0; c < rows[0].size(); ++c) out += c < 2 ? " --- |" : " ---: |";
            out += "\n";
        }
    }
    return out;
}

int cmd_report(const std::string& input, const std::string& output) {
    const auto md = csv_to_markdown(read_text(input));
    if (output.empty()) std::cout << md;
    else write_text(output, md);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PE malware feature extraction, detection and ablation"};
    app.set_version_flag("--version", PEMAL_VERSION);
    app.require_subcommand(1);
    std::size_t threads = 1;
    app.add_option("--threads", threads, "Worker threads (1 keeps runs reproducible)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    ExtractOptions ex;
    auto* extract = app.add_subcommand("extract", "Vectorize PE files (or directories of them)");
    extract->add_option("paths", ex.inputs, "Files or directories")->required();
    extract->add_option("-o,--output", ex.output, "Output file (.jsonl or .pefv)")->required();
    extract->add_option("--format", ex.format, "jsonl, raw or cache (default: by extension)")
        ->check(CLI::IsMember({"jsonl", "raw", "cache"}));
    extract->add_option("--label", ex.label, "Label for every row (-1, 0, 1)")->check(CLI::Range(-1, 1));
    extract->add_option("--split", ex.split, "train or test")->check(CLI::IsMember({"train", "test"}));

    VectorizeOptions vec;
    auto* vectorize_cmd = app.add_subcommand("vectorize", "Convert JSONL records to the binary cache");
    vectorize_cmd->add_option("-i,--input", vec.input, "JSONL input")->required();
    vectorize_cmd->add_option("-o,--output", vec.output, "Cache output")->required();
    vectorize_cmd->add_option("--mode", vec.mode, "raw or prevectorized")->check(CLI::IsMember({"raw", "prevectorized"}));
    vectorize_cmd->add_option("--split", vec.split, "Split for lines without one")->check(CLI::IsMember({"train", "test"}));
    vectorize_cmd->add_option("--take", vec.take, "Keep a seeded random subset of N rows");
    vectorize_cmd->add_option("--seed", vec.seed, "Seed for --take");

    TrainOptions tr;
    auto* train = app.add_subcommand("train", "Train a model on the training split");
    train->add_option("-i,--input", tr.input, "Cache or prevectorized JSONL")->required();
    train->add_option("-o,--output", tr.output, "Model file")->required();
    train->add_option("--model", tr.model, "mlp, logistic or knn")->capture_default_str();
    train->add_option("--mask", tr.mask, "Feature sets, e.g. BH_SE_IM or ALL")->capture_default_str();
    train->add_option("--take", tr.take, "Keep a seeded random subset of N labeled rows");
    add_train_options(train, tr.config, tr.optimizer, tr.init);

    EvalOptions ev;
    auto* eval = app.add_subcommand("eval", "Score a model and write metrics JSON");
    eval->add_option("-m,--model", ev.model, "Model file")->required();
    eval->add_option("-i,--input", ev.input, "Cache or prevectorized JSONL")->required();
    eval->add_option("-o,--output", ev.output, "Metrics JSON (default: stdout)");
    eval->add_option("--split", ev.split, "test, train or all")->check(CLI::IsMember({"train", "test", "all"}));
    eval->add_option("--threshold", ev.threshold, "Decision threshold")->capture_default_str();
    eval->add_option("--take", ev.take, "Keep a seeded random subset of N labeled rows");
    eval->add_option("--seed", ev.seed, "Seed for --take");

    AblateOptions ab;
    auto* ablate = app.add_subcommand("ablate", "Feature-set ablation sweep");
    ablate->add_option("-i,--input", ab.input, "Cache or prevectorized JSONL with train and test rows")->required();
    ablate->add_option("-o,--output", ab.output, "Report CSV")->required();
    ablate->add_option("--json", ab.json_output, "Also write the report as JSON");
    ablate->add_option("--text", ab.text_output, "Also write the rendered table");
    ablate->add_option("--levels", ab.levels, "Subset levels: 1-5 or all")->delimiter(',')->capture_default_str();
    ablate->add_option("--models", ab.models, "mlp, logistic, knn")->delimiter(',')->capture_default_str();
    ablate->add_option("--take", ab.take, "Keep a seeded random subset of N labeled rows");
    ablate->add_flag("--no-timing", ab.no_timing, "Write 0 for train_seconds so reruns are byte-identical");
    add_train_options(ablate, ab.config, ab.optimizer, ab.init);

    std::string report_in, report_out;
    auto* report = app.add_subcommand("report", "Render an ablation CSV as a markdown table");
    report->add_option("-i,--input", report_in, "Report CSV")->required();
    report->add_option("-o,--output", report_out, "Markdown output (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*extract) return cmd_extract(ex, threads);
        if (*vectorize_cmd) return cmd_vectorize(vec, threads);
        if (*train) return cmd_train(tr, threads);
        if (*eval) return cmd_eval(ev, threads);
        if (*ablate) return cmd_ablate(ab, threads);
        if (*report) return cmd_report(report_in, report_out);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitUsage;
}
