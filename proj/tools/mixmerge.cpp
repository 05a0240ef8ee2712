// mixmerge: merge, sweep, and inspect f32 checkpoint files.
//
// Exit codes: 0 success, 2 usage error, 1 data/validation error. Usage errors
// are detected before any output file is opened.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mixmerge/checkpoint_io.hpp"
#include "mixmerge/lab.hpp"
#include "mixmerge/merge.hpp"
#include "mixmerge/sampler.hpp"
#include "mixmerge/sha256.hpp"
#include "mixmerge/tensor_map.hpp"
#include "mixmerge/version.hpp"

namespace fs = std::filesystem;
using namespace mixmerge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitData = 1;
constexpr int kExitUsage = 2;

/// Flag combinations that CLI11 cannot express are reported through this and
/// mapped to exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::uint64_t default_seed() {
    if (const char* env = std::getenv("MIXMERGE_SEED")) {
        return std::strtoull(env, nullptr, 10);
    }
    return 0;
}

std::string format_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

struct MergeArgs {
    std::string method;
    std::vector<std::string> inputs;
    std::string base_path;
    double lambda_m = -1.0;
    double alpha = -1.0;
    std::uint64_t seed = default_seed();
    bool seed_given = false;
    double scaling = -1.0;
    double retain_ratio = -1.0;
    double dare_p = -1.0;
    std::uint64_t dare_seed = 0;
    std::string out_path;
    std::string manifest_path;
    std::string identity;
};

/// Builds the recipe from flags; throws UsageError on inconsistent flags so
/// nothing is written for bad invocations.
MergeRecipe build_recipe(const MergeArgs& args, std::optional<SamplingRecord>& sampling_out) {
    const auto method = method_from_name(args.method);
    if (!method) throw UsageError("unknown method '" + args.method + "'");

    MergeRecipe recipe;
    recipe.method = *method;

    if (is_m3_method(*method)) {
        const bool has_lambda = args.lambda_m >= 0.0;
        const bool alpha_given = args.alpha != -1.0;
        if (alpha_given && !(args.alpha > 0.0)) {
            throw UsageError("--alpha must be positive");
        }
        if (has_lambda && alpha_given) {
            throw UsageError("--lambda-m and --alpha are mutually exclusive");
        }
        if (!has_lambda && !alpha_given) {
            throw UsageError(args.method + " needs either --lambda-m or --alpha");
        }
        if (has_lambda) {
            recipe.lambda_m = args.lambda_m;
        } else {
            const SamplingRecord rec = sample_lambda(BetaShape{args.alpha}, args.seed);
            recipe.lambda_m = rec.lambda_m;
            recipe.sampling = rec;
            sampling_out = rec;
        }
    } else {
        if (args.lambda_m >= 0.0) throw UsageError(args.method + " does not take --lambda-m");
        if (args.alpha != -1.0) throw UsageError(args.method + " does not take --alpha");
    }

    const bool needs_scaling = *method == MergeMethod::task_arithmetic ||
                               *method == MergeMethod::ties ||
                               *method == MergeMethod::m3_ties;
    if (needs_scaling) {
        if (args.scaling < 0.0) throw UsageError(args.method + " needs --scaling");
        recipe.scaling_term = args.scaling;
    } else if (args.scaling >= 0.0) {
        throw UsageError(args.method + " does not take --scaling");
    }

    const bool needs_retain =
        *method == MergeMethod::ties || *method == MergeMethod::m3_ties;
    if (needs_retain) {
        if (args.retain_ratio < 0.0) throw UsageError(args.method + " needs --retain-ratio");
        recipe.retain_ratio = args.retain_ratio;
    } else if (args.retain_ratio >= 0.0) {
        throw UsageError(args.method + " does not take --retain-ratio");
    }

    if (args.dare_p >= 0.0) {
        if (args.dare_p >= 1.0) throw UsageError("--dare-p must lie in [0,1)");
        recipe.dare = SparsifyConfig{args.dare_p, args.dare_seed};
    }

    const bool needs_base = is_delta_space_method(*method) || recipe.dare.has_value();
    if (needs_base && args.base_path.empty()) {
        throw UsageError(args.method + (recipe.dare ? " with --dare-p" : "") +
                         " needs --base");
    }
    if (!needs_base && !args.base_path.empty()) {
        throw UsageError(args.method + " does not take --base");
    }
    return recipe;
}

int run_merge(const MergeArgs& args) {
    std::optional<SamplingRecord> sampling;
    const MergeRecipe recipe = build_recipe(args, sampling);  // usage-validated first

    std::optional<TensorMap> base;
    if (!args.base_path.empty()) base = read_checkpoint(args.base_path);
    std::vector<TensorMap> models;
    std::vector<std::string> model_digests;
    models.reserve(args.inputs.size());
    for (const auto& path : args.inputs) {
        models.push_back(read_checkpoint(path));
        model_digests.push_back(checkpoint_digest(models.back()));
    }

    MergeResult result = merge(recipe, base ? &*base : nullptr, models);
    if (args.identity.empty()) {
        // method-independent so equivalent recipes produce equal digests
        std::string joined = "merged(";
        for (std::size_t i = 0; i < models.size(); ++i) {
            if (i) joined += ",";
            joined += models[i].identity();
        }
        joined += ")";
        result.merged.set_identity(joined);
    } else {
        result.merged.set_identity(args.identity);
    }

    // fill digests: base first (if present), then the models in order
    std::size_t model_index = 0;
    for (auto& input : result.manifest.inputs) {
        if (input.role == "base") {
            input.digest = checkpoint_digest(*base);
        } else {
            input.digest = model_digests[model_index++];
        }
    }
    result.manifest.created_at = manifest_timestamp();

    const std::string out_digest = write_checkpoint(result.merged, args.out_path);
    result.manifest.output = ManifestOutput{result.merged.identity(), out_digest};
    const std::string manifest_path =
        args.manifest_path.empty() ? args.out_path + ".manifest.json" : args.manifest_path;
    write_manifest(result.manifest, manifest_path);

    std::cout << "merged " << args.inputs.size() << " checkpoints with "
              << method_name(recipe.method);
    if (recipe.lambda_m) std::cout << " (lambda_m=" << *recipe.lambda_m << ")";
    std::cout << "\n  output:   " << args.out_path << "\n  manifest: " << manifest_path
              << "\n  digest:   " << out_digest << "\n";
    return kExitOk;
}

struct SweepArgs {
    std::vector<double> alphas = SweepSchedule::default_alphas();
    std::uint64_t seed = default_seed();
    std::string method = "m3_average";
    std::vector<std::string> inputs;
    std::string base_path;
    double scaling = -1.0;
    double retain_ratio = -1.0;
    double dare_p = -1.0;
    std::uint64_t dare_seed = 0;
    std::string evaluator;
    std::string out_dir;
};

struct EvaluatorScores {
    double task1 = 0.0;
    double task2 = 0.0;
    bool ok = false;
    std::string error;
};

/// External evaluator protocol: `command <checkpoint-path> <task-id>` printing
/// one score (0-100) on stdout. Task ids are 1 and 2.
EvaluatorScores run_external_evaluator(const std::string& command, const fs::path& ckpt) {
    EvaluatorScores scores;
    double values[2] = {0.0, 0.0};
    for (int task = 1; task <= 2; ++task) {
        const std::string cmd = command + " '" + ckpt.string() + "' " + std::to_string(task);
        FILE* pipe = popen(cmd.c_str(), "r");
        if (!pipe) {
            scores.error = "failed to spawn evaluator";
            return scores;
        }
        char buf[256] = {0};
        std::string output;
        while (fgets(buf, sizeof buf, pipe)) output += buf;
        const int status = pclose(pipe);
        if (status != 0) {
            scores.error = "evaluator exited with status " + std::to_string(status);
            return scores;
        }
        try {
            values[task - 1] = std::stod(output);
        } catch (const std::exception&) {
            scores.error = "evaluator printed unparsable score: '" + output + "'";
            return scores;
        }
    }
    scores.task1 = values[0];
    scores.task2 = values[1];
    scores.ok = true;
    return scores;
}

int run_sweep_cmd(const SweepArgs& args) {
    MergeArgs margs;
    margs.method = args.method;
    margs.base_path = args.base_path;
    margs.scaling = args.scaling;
    margs.retain_ratio = args.retain_ratio;
    margs.dare_p = args.dare_p;
    margs.dare_seed = args.dare_seed;
    margs.lambda_m = 0.5;  // placeholder; replaced by the per-alpha draw below
    margs.alpha = -1.0;
    std::optional<SamplingRecord> ignored;
    const MergeRecipe template_recipe = build_recipe(margs, ignored);
    if (!is_m3_method(template_recipe.method)) {
        throw UsageError("sweep needs an m3 method, got '" + args.method + "'");
    }
    for (double a : args.alphas) {
        if (!(a > 0.0)) throw UsageError("--alphas must all be positive");
    }
    if (args.evaluator.empty()) throw UsageError("sweep needs --evaluator");

    std::optional<std::uint64_t> lab_seed;
    if (args.evaluator.rfind("lab:", 0) == 0) {
        lab_seed = std::strtoull(args.evaluator.c_str() + 4, nullptr, 10);
    }

    std::optional<TensorMap> base;
    if (!args.base_path.empty()) base = read_checkpoint(args.base_path);
    std::vector<TensorMap> models;
    for (const auto& path : args.inputs) models.push_back(read_checkpoint(path));

    std::optional<lab::ToyTaskPair> pair;
    if (lab_seed) pair = lab::build_toy_pair(*lab_seed);

    fs::create_directories(args.out_dir);
    SweepSchedule schedule{args.alphas, args.seed};
    const std::vector<SamplingRecord> records = make_sweep(schedule);

    nlohmann::json sweep_records = nlohmann::json::array();
    std::printf("%8s %10s %12s %12s %12s\n", "alpha", "lambda_m", "task1", "task2", "avg");
    std::size_t failures = 0;
    std::optional<std::size_t> selected;
    double best = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const SamplingRecord& rec = records[i];
        MergeRecipe recipe = template_recipe;
        recipe.lambda_m = rec.lambda_m;
        recipe.sampling = rec;
        MergeResult result = merge(recipe, base ? &*base : nullptr, models);
        result.merged.set_identity(std::string(method_name(recipe.method)) + "-alpha" +
                                   format_g(rec.alpha));
        const fs::path ckpt_path =
            fs::path(args.out_dir) / ("merge_alpha" + format_g(rec.alpha) + ".ckpt");
        const std::string digest = write_checkpoint(result.merged, ckpt_path);
        result.manifest.created_at = manifest_timestamp();
        result.manifest.output = ManifestOutput{result.merged.identity(), digest};
        for (auto& input : result.manifest.inputs) {
            if (input.role == "base") input.digest = checkpoint_digest(*base);
        }
        std::size_t model_index = 0;
        for (auto& input : result.manifest.inputs) {
            if (input.role == "model") input.digest = checkpoint_digest(models[model_index++]);
        }
        write_manifest(result.manifest, ckpt_path.string() + ".manifest.json");

        nlohmann::json node;
        node["alpha"] = rec.alpha;
        node["seed"] = rec.seed;
        node["lambda_m"] = rec.lambda_m;
        node["checkpoint"] = ckpt_path.filename().string();
        node["digest"] = digest;

        EvaluatorScores scores;
        if (lab_seed) {
            scores.task1 = lab::toy_score(lab::toy_loss(result.merged, pair->task1.holdout));
            scores.task2 = lab::toy_score(lab::toy_loss(result.merged, pair->task2.holdout));
            scores.ok = true;
        } else {
            scores = run_external_evaluator(args.evaluator, ckpt_path);
        }
        if (scores.ok) {
            const double avg = 0.5 * (scores.task1 + scores.task2);
            node["score_task1"] = scores.task1;
            node["score_task2"] = scores.task2;
            node["avg"] = avg;
            std::printf("%8s %10.6f %12.6f %12.6f %12.6f\n", format_g(rec.alpha).c_str(),
                        rec.lambda_m, scores.task1, scores.task2, avg);
            if (!selected.has_value() || avg > best) {
                selected = i;
                best = avg;
            }
        } else {
            ++failures;
            node["error"] = scores.error;
            std::printf("%8s %10.6f %12s %12s %12s\n", format_g(rec.alpha).c_str(),
                        rec.lambda_m, "failed", "failed", "failed");
            std::cerr << "evaluator failed for alpha " << format_g(rec.alpha) << ": "
                      << scores.error << "\n";
        }
        sweep_records.push_back(node);
    }

    nlohmann::json doc;
    doc["records"] = sweep_records;
    if (selected) doc["selected"] = *selected;
    std::ofstream out(fs::path(args.out_dir) / "sweep.json", std::ios::trunc);
    out << doc.dump(2) << "\n";

    if (failures == records.size()) {
        std::cerr << "every evaluation failed\n";
        return kExitData;
    }
    if (selected) {
        std::printf("selected: alpha=%s lambda_m=%.6f avg=%.6f\n",
                    format_g(records[*selected].alpha).c_str(),
                    records[*selected].lambda_m, best);
    }
    return kExitOk;
}

int run_inspect(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "' for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    const TensorMap map = parse_checkpoint(bytes);
    std::cout << "identity: " << map.identity() << "\n";
    std::cout << "tensors:  " << map.size() << "  (" << map.total_elements()
              << " elements)\n";
    for (const auto& [name, tensor] : map) {
        std::cout << "  " << name << "  [";
        for (std::size_t i = 0; i < tensor.shape.size(); ++i) {
            if (i) std::cout << ",";
            std::cout << tensor.shape[i];
        }
        std::cout << "]\n";
    }
    std::cout << "digest:   " << Sha256::hex(bytes.data(), bytes.size()) << "\n";
    return kExitOk;
}

/// Provenance sidecar for the non-merge mutating commands; same file naming as
/// merge manifests, distinguished by the format tag.
void write_op_manifest(const std::string& op, const nlohmann::json& inputs,
                       const nlohmann::json& params, const std::string& out_identity,
                       const std::string& out_digest, const std::string& out_path) {
    nlohmann::json doc;
    doc["format"] = "mixmerge-op/1";
    doc["op"] = op;
    doc["toolkit_version"] = kVersion;
    doc["created_at"] = manifest_timestamp();
    doc["inputs"] = inputs;
    doc["params"] = params;
    doc["output"] = {{"identity", out_identity}, {"digest", out_digest}};
    std::ofstream out(out_path + ".manifest.json", std::ios::trunc);
    out << doc.dump(2) << "\n";
}

int run_delta(const std::string& fine_path, const std::string& base_path,
              const std::string& out_path) {
    const TensorMap fine = read_checkpoint(fine_path);
    const TensorMap base = read_checkpoint(base_path);
    const DeltaSet deltas = delta(fine, base);
    const std::string digest = write_delta(deltas, out_path);
    write_op_manifest("delta",
                      {{{"role", "fine"},
                        {"identity", fine.identity()},
                        {"digest", checkpoint_digest(fine)}},
                       {{"role", "base"},
                        {"identity", base.identity()},
                        {"digest", checkpoint_digest(base)}}},
                      nlohmann::json::object(), deltas.tensors.identity(), digest,
                      out_path);
    std::cout << "delta of '" << fine.identity() << "' against '" << base.identity()
              << "'\n  output: " << out_path << "\n  digest: " << digest << "\n";
    return kExitOk;
}

int run_sparsify(const std::string& delta_path, double drop_rate, std::uint64_t seed,
                 const std::string& out_path) {
    std::string input_digest;
    {
        std::ifstream in(delta_path, std::ios::binary);
        if (in) {
            const std::vector<std::uint8_t> bytes(
                (std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
            input_digest = Sha256::hex(bytes.data(), bytes.size());
        }
    }
    const DeltaSet deltas = read_delta(delta_path);
    const DeltaSet sparse = dare_sparsify(deltas, SparsifyConfig{drop_rate, seed});
    const std::string digest = write_delta(sparse, out_path);
    write_op_manifest("sparsify",
                      {{{"role", "delta"},
                        {"identity", deltas.tensors.identity()},
                        {"digest", input_digest}}},
                      {{"drop_rate", drop_rate}, {"seed", seed}},
                      sparse.tensors.identity(), digest, out_path);
    std::cout << "sparsified with drop_rate=" << drop_rate << " seed=" << seed
              << "\n  output: " << out_path << "\n  digest: " << digest << "\n";
    return kExitOk;
}

int run_scan(const std::string& t1_path, const std::string& t2_path, int grid,
             std::uint64_t lab_seed, const std::string& out_path) {
    const TensorMap t1 = read_checkpoint(t1_path);
    const TensorMap t2 = read_checkpoint(t2_path);
    lab::ToyTaskPair pair = lab::build_toy_pair(lab_seed);
    pair.model_t1 = t1;
    pair.model_t2 = t2;
    const lab::PathScan scan = lab::scan_path(pair, grid);
    const std::string csv = lab::path_scan_csv(scan);
    if (out_path.empty()) {
        std::cout << csv;
    } else {
        std::ofstream out(out_path, std::ios::trunc);
        if (!out) throw Error("cannot open '" + out_path + "' for writing");
        out << csv;
        std::cout << "wrote " << scan.points.size() << "-point scan to " << out_path
                  << " (barrier statistic " << lab::barrier_statistic(scan) << ")\n";
    }
    return kExitOk;
}

int run_pdr(double no_attack, double attack) {
    const lab::RobustnessReport report = lab::compute_pdr(no_attack, attack);
    std::printf("metric_no_attack: %.2f%%\nmetric_attack:    %.2f%%\nPDR:              %.2f%%\n",
                report.metric_no_attack, report.metric_attack, report.pdr);
    return kExitOk;
}

int run_pdr_csv(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw Error("cannot open '" + csv_path + "' for reading");
    std::string line;
    bool first = true;
    std::printf("%16s %14s %10s\n", "metric_no_attack", "metric_attack", "pdr");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first && line.find_first_not_of("0123456789.,- \t") != std::string::npos) {
            first = false;  // header row
            continue;
        }
        first = false;
        std::istringstream row(line);
        std::string no_s, atk_s;
        if (!std::getline(row, no_s, ',') || !std::getline(row, atk_s, ',')) {
            throw Error("csv row needs 'no_attack,attack': '" + line + "'");
        }
        const lab::RobustnessReport report =
            lab::compute_pdr(std::stod(no_s), std::stod(atk_s));
        std::printf("%16.2f %14.2f %9.2f%%\n", report.metric_no_attack,
                    report.metric_attack, report.pdr);
    }
    return kExitOk;
}

int run_lab(std::uint64_t seed, const std::string& out_dir, int grid) {
    const lab::ToyTaskPair pair = lab::build_toy_pair(seed);
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    const std::string d0 = write_checkpoint(pair.pretrained, dir / "pretrained.ckpt");
    const std::string d1 = write_checkpoint(pair.model_t1, dir / "task1.ckpt");
    const std::string d2 = write_checkpoint(pair.model_t2, dir / "task2.ckpt");
    const lab::PathScan scan = lab::scan_path(pair, grid);
    {
        std::ofstream out(dir / "path_scan.csv", std::ios::trunc);
        out << lab::path_scan_csv(scan);
    }
    nlohmann::json doc;
    doc["seed"] = seed;
    doc["checkpoints"] = {{"pretrained", d0}, {"task1", d1}, {"task2", d2}};
    doc["holdout_loss"] = {
        {"pretrained_task1", lab::toy_loss(pair.pretrained, pair.task1.holdout)},
        {"pretrained_task2", lab::toy_loss(pair.pretrained, pair.task2.holdout)},
        {"task1_model_task1", lab::toy_loss(pair.model_t1, pair.task1.holdout)},
        {"task2_model_task2", lab::toy_loss(pair.model_t2, pair.task2.holdout)},
    };
    doc["barrier_statistic"] = lab::barrier_statistic(scan);
    {
        std::ofstream out(dir / "lab.json", std::ios::trunc);
        out << doc.dump(2) << "\n";
    }
    std::cout << "wrote toy pair (seed " << seed << ") to " << out_dir
              << "\n  barrier statistic: " << lab::barrier_statistic(scan) << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"model-parameter merging toolkit"};
    app.set_version_flag("--version", std::string("mixmerge ") + kVersion);
    app.require_subcommand(1);

    // merge
    MergeArgs margs;
    auto* merge_cmd = app.add_subcommand("merge", "merge two or more checkpoints");
    merge_cmd->add_option("--method", margs.method, "merging method")->required();
    merge_cmd->add_option("inputs", margs.inputs, "input checkpoints")->required()->expected(1, -1);
    merge_cmd->add_option("--base", margs.base_path, "shared base checkpoint");
    merge_cmd->add_option("--lambda-m", margs.lambda_m, "explicit interpolation coefficient");
    merge_cmd->add_option("--alpha", margs.alpha, "Beta shape parameter for sampling lambda_m");
    merge_cmd->add_option("--seed", margs.seed, "sampling seed (default: MIXMERGE_SEED or 0)");
    merge_cmd->add_option("--scaling", margs.scaling, "scaling term");
    merge_cmd->add_option("--retain-ratio", margs.retain_ratio, "top-magnitude retain ratio");
    merge_cmd->add_option("--dare-p", margs.dare_p, "drop rate; sparsifies deltas before merging");
    merge_cmd->add_option("--dare-seed", margs.dare_seed, "drop mask seed");
    merge_cmd->add_option("-o,--out", margs.out_path, "output checkpoint")->required();
    merge_cmd->add_option("--manifest-out", margs.manifest_path,
                          "manifest path (default: <out>.manifest.json)");
    merge_cmd->add_option("--identity", margs.identity, "identity for the merged checkpoint");

    // sweep
    SweepArgs sargs;
    auto* sweep_cmd = app.add_subcommand("sweep", "alpha sweep over an m3 method");
    sweep_cmd->add_option("--alphas", sargs.alphas, "alpha values (one draw each)");
    sweep_cmd->add_option("--seed", sargs.seed, "base seed for the sweep");
    sweep_cmd->add_option("--method", sargs.method, "m3 method to sweep");
    sweep_cmd->add_option("inputs", sargs.inputs, "two input checkpoints")->required()->expected(2);
    sweep_cmd->add_option("--base", sargs.base_path, "shared base checkpoint");
    sweep_cmd->add_option("--scaling", sargs.scaling, "scaling term");
    sweep_cmd->add_option("--retain-ratio", sargs.retain_ratio, "retain ratio");
    sweep_cmd->add_option("--dare-p", sargs.dare_p, "drop rate");
    sweep_cmd->add_option("--dare-seed", sargs.dare_seed, "drop mask seed");
    sweep_cmd->add_option("--evaluator", sargs.evaluator,
                          "'lab:<seed>' or an external command run as CMD <ckpt> <task-id>")
        ->required();
    sweep_cmd->add_option("--out-dir", sargs.out_dir, "output directory")->required();

    // delta
    std::string delta_fine, delta_base, delta_out;
    auto* delta_cmd = app.add_subcommand("delta", "write fine - base as a delta file");
    delta_cmd->add_option("fine", delta_fine, "fine-tuned checkpoint")->required();
    delta_cmd->add_option("base", delta_base, "base checkpoint")->required();
    delta_cmd->add_option("-o,--out", delta_out, "output delta file")->required();

    // sparsify
    std::string sp_in, sp_out;
    double sp_rate = 0.0;
    std::uint64_t sp_seed = default_seed();
    auto* sparsify_cmd = app.add_subcommand("sparsify", "drop-and-rescale a delta file");
    sparsify_cmd->add_option("delta", sp_in, "input delta file")->required();
    sparsify_cmd->add_option("--drop-rate", sp_rate, "drop probability in [0,1)")->required();
    sparsify_cmd->add_option("--seed", sp_seed, "mask seed");
    sparsify_cmd->add_option("-o,--out", sp_out, "output delta file")->required();

    // scan
    std::string scan_t1, scan_t2, scan_out;
    int scan_grid = 21;
    std::uint64_t scan_lab_seed = 0;
    auto* scan_cmd = app.add_subcommand("scan", "losses along the interpolation path");
    scan_cmd->add_option("t1", scan_t1, "endpoint checkpoint (lambda=1)")->required();
    scan_cmd->add_option("t2", scan_t2, "endpoint checkpoint (lambda=0)")->required();
    scan_cmd->add_option("--grid", scan_grid, "number of lambda points (default 21)");
    scan_cmd->add_option("--lab-seed", scan_lab_seed, "toy-task evaluator seed")
        ->required();
    scan_cmd->add_option("-o,--out", scan_out, "CSV output path (default: stdout)");

    // inspect
    std::string inspect_path;
    auto* inspect_cmd = app.add_subcommand("inspect", "print tensor names, shapes, digest");
    inspect_cmd->add_option("file", inspect_path, "checkpoint file")->required();

    // pdr
    std::vector<double> pdr_values;
    std::string pdr_csv;
    auto* pdr_cmd = app.add_subcommand("pdr", "performance drop rate");
    pdr_cmd->add_option("metrics", pdr_values, "metric_no_attack metric_attack")->expected(0, 2);
    pdr_cmd->add_option("--csv", pdr_csv, "CSV of no_attack,attack rows");

    // lab
    std::uint64_t lab_seed = default_seed();
    std::string lab_out;
    int lab_grid = 21;
    auto* lab_cmd = app.add_subcommand("lab", "build a toy fine-tuned pair");
    lab_cmd->add_option("--seed", lab_seed, "pair seed");
    lab_cmd->add_option("--out-dir", lab_out, "output directory")->required();
    lab_cmd->add_option("--grid", lab_grid, "path scan grid size");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (merge_cmd->parsed()) return run_merge(margs);
        if (sweep_cmd->parsed()) return run_sweep_cmd(sargs);
        if (delta_cmd->parsed()) return run_delta(delta_fine, delta_base, delta_out);
        if (sparsify_cmd->parsed()) return run_sparsify(sp_in, sp_rate, sp_seed, sp_out);
        if (scan_cmd->parsed())
            return run_scan(scan_t1, scan_t2, scan_grid, scan_lab_seed, scan_out);
        if (inspect_cmd->parsed()) return run_inspect(inspect_path);
        if (pdr_cmd->parsed()) {
            if (!pdr_csv.empty()) {
                if (!pdr_values.empty()) {
                    throw UsageError("pdr takes either two metrics or --csv, not both");
                }
                return run_pdr_csv(pdr_csv);
            }
            if (pdr_values.size() != 2) {
                throw UsageError("pdr needs exactly two metrics or --csv");
            }
            return run_pdr(pdr_values[0], pdr_values[1]);
        }
        if (lab_cmd->parsed()) return run_lab(lab_seed, lab_out, lab_grid);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const RecipeError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
