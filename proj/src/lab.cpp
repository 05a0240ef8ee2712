#include "mixmerge/lab.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "mixmerge/checkpoint_io.hpp"
#include "mixmerge/portable_math.hpp"
#include "mixmerge/rng.hpp"

namespace mixmerge::lab {

namespace {

// Training protocol, fixed so that pairs are reproducible:
//   - inputs uniform over [-1,1]^2, 256 train / 64 held-out samples per task
//   - pretext phase fits the mean of both task functions (300 steps)
//   - fine-tuning runs 400 steps per task, full-batch GD, lr 0.1
constexpr int kTrainSamples = 256;
constexpr int kHoldoutSamples = 64;
constexpr int kPretextSteps = 300;
constexpr int kFinetuneSteps = 400;
constexpr double kLearningRate = 0.1;

// Parameter layout, matching lexicographic tensor order of the checkpoints:
//   layer1.bias [32], layer1.weight [32,2],
//   layer2.bias [32], layer2.weight [32,32],
//   layer3.bias [1],  layer3.weight [1,32]
constexpr int kOffB1 = 0;
constexpr int kOffW1 = kOffB1 + kToyHidden;
constexpr int kOffB2 = kOffW1 + kToyHidden * kToyInputDim;
constexpr int kOffW2 = kOffB2 + kToyHidden;
constexpr int kOffB3 = kOffW2 + kToyHidden * kToyHidden;
constexpr int kOffW3 = kOffB3 + 1;
static_assert(kOffW3 + kToyHidden == kToyParamCount);

double task1_target(double x, double y) { return std::sin(M_PI * x) * std::cos(M_PI * y); }

// Louder second task; the asymmetry moves the best blend away from 0.5.
double task2_target(double x, double y) { return 1.6 * std::tanh(2.0 * x * y) + 0.8 * y; }

double pretext_target(double x, double y) {
    return 0.5 * (task1_target(x, y) + task2_target(x, y));
}

ToyDataset make_dataset(std::uint64_t key, int samples, int task) {
    ToyDataset data;
    data.input_dim = kToyInputDim;
    data.inputs.resize(static_cast<std::size_t>(samples) * kToyInputDim);
    data.targets.resize(samples);
    CounterRng rng(key);
    for (int k = 0; k < samples; ++k) {
        const double x = 2.0 * rng.next_open01() - 1.0;
        const double y = 2.0 * rng.next_open01() - 1.0;
        data.inputs[2 * k] = x;
        data.inputs[2 * k + 1] = y;
        switch (task) {
            case 0: data.targets[k] = pretext_target(x, y); break;
            case 1: data.targets[k] = task1_target(x, y); break;
            default: data.targets[k] = task2_target(x, y); break;
        }
    }
    return data;
}

double normal_draw(CounterRng& rng) {
    for (;;) {
        const double u = 2.0 * rng.next_open01() - 1.0;
        const double v = 2.0 * rng.next_open01() - 1.0;
        const double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * portable::log(s) / s);
    }
}

double forward(std::span<const double> w, const double* in, double* h1, double* h2) {
    for (int i = 0; i < kToyHidden; ++i) {
        double s = w[kOffB1 + i];
        for (int j = 0; j < kToyInputDim; ++j) s += w[kOffW1 + i * kToyInputDim + j] * in[j];
        h1[i] = std::tanh(s);
    }
    for (int i = 0; i < kToyHidden; ++i) {
        double s = w[kOffB2 + i];
        for (int j = 0; j < kToyHidden; ++j) s += w[kOffW2 + i * kToyHidden + j] * h1[j];
        h2[i] = std::tanh(s);
    }
    double out = w[kOffB3];
    for (int i = 0; i < kToyHidden; ++i) out += w[kOffW3 + i] * h2[i];
    return out;
}

void train(std::vector<double>& w, const ToyDataset& data, int steps, std::uint64_t seed) {
    std::vector<double> g(kToyParamCount);
    for (int t = 0; t < steps; ++t) {
        g = toy_loss_gradient_flat(w, data);
        for (int i = 0; i < kToyParamCount; ++i) w[i] -= kLearningRate * g[i];
        if (t % 50 == 0 && !std::isfinite(toy_loss_flat(w, data))) {
            throw Error("toy training diverged (seed " + std::to_string(seed) + ")");
        }
    }
    if (!std::isfinite(toy_loss_flat(w, data))) {
        throw Error("toy training diverged (seed " + std::to_string(seed) + ")");
    }
}

std::vector<double> round_trip_f32(std::span<const double> w) {
    std::vector<double> out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        out[i] = static_cast<double>(static_cast<float>(w[i]));
    }
    return out;
}

}  // namespace

std::vector<double> flatten_params(const TensorMap& params) {
    std::vector<double> flat;
    flat.reserve(kToyParamCount);
    for (const auto& [name, tensor] : params) {
        for (float v : tensor.data) flat.push_back(static_cast<double>(v));
    }
    if (static_cast<int>(flat.size()) != kToyParamCount) {
        throw Error("parameter map does not match the toy topology (" +
                    std::to_string(flat.size()) + " values)");
    }
    return flat;
}

TensorMap params_from_flat(std::span<const double> flat, const std::string& identity) {
    if (static_cast<int>(flat.size()) != kToyParamCount) {
        throw Error("flat parameter vector has wrong length");
    }
    TensorMap map(identity);
    auto emit = [&](const char* name, std::vector<std::int64_t> shape, int offset, int count) {
        Tensor t;
        t.shape = std::move(shape);
        t.data.resize(count);
        for (int i = 0; i < count; ++i) t.data[i] = static_cast<float>(flat[offset + i]);
        map.insert(name, std::move(t));
    };
    emit("layer1.bias", {kToyHidden}, kOffB1, kToyHidden);
    emit("layer1.weight", {kToyHidden, kToyInputDim}, kOffW1, kToyHidden * kToyInputDim);
    emit("layer2.bias", {kToyHidden}, kOffB2, kToyHidden);
    emit("layer2.weight", {kToyHidden, kToyHidden}, kOffW2, kToyHidden * kToyHidden);
    emit("layer3.bias", {1}, kOffB3, 1);
    emit("layer3.weight", {1, kToyHidden}, kOffW3, kToyHidden);
    return map;
}

double toy_loss_flat(std::span<const double> params, const ToyDataset& data) {
    double h1[kToyHidden];
    double h2[kToyHidden];
    double loss = 0.0;
    const int n = static_cast<int>(data.size());
    for (int k = 0; k < n; ++k) {
        const double p = forward(params, &data.inputs[2 * k], h1, h2);
        const double e = p - data.targets[k];
        loss += e * e;
    }
    return loss / n;
}

std::vector<double> toy_loss_gradient_flat(std::span<const double> params,
                                           const ToyDataset& data) {
    std::vector<double> g(kToyParamCount, 0.0);
    double h1[kToyHidden];
    double h2[kToyHidden];
    double dh1[kToyHidden];
    double dh2[kToyHidden];
    const int n = static_cast<int>(data.size());
    for (int k = 0; k < n; ++k) {
        const double* in = &data.inputs[2 * k];
        const double p = forward(params, in, h1, h2);
        const double dout = 2.0 * (p - data.targets[k]) / n;

        g[kOffB3] += dout;
        for (int i = 0; i < kToyHidden; ++i) {
            g[kOffW3 + i] += dout * h2[i];
            dh2[i] = dout * params[kOffW3 + i] * (1.0 - h2[i] * h2[i]);
        }
        for (int j = 0; j < kToyHidden; ++j) dh1[j] = 0.0;
        for (int i = 0; i < kToyHidden; ++i) {
            g[kOffB2 + i] += dh2[i];
            for (int j = 0; j < kToyHidden; ++j) {
                g[kOffW2 + i * kToyHidden + j] += dh2[i] * h1[j];
                dh1[j] += dh2[i] * params[kOffW2 + i * kToyHidden + j];
            }
        }
        for (int j = 0; j < kToyHidden; ++j) dh1[j] *= 1.0 - h1[j] * h1[j];
        for (int i = 0; i < kToyHidden; ++i) {
            g[kOffB1 + i] += dh1[i];
            for (int j = 0; j < kToyInputDim; ++j) {
                g[kOffW1 + i * kToyInputDim + j] += dh1[i] * in[j];
            }
        }
    }
    return g;
}

double toy_loss(const TensorMap& params, const ToyDataset& data) {
    return toy_loss_flat(flatten_params(params), data);
}

double toy_score(double loss) { return 100.0 / (1.0 + loss); }

ToyTaskPair build_toy_pair(std::uint64_t seed) {
    ToyTaskPair pair;
    pair.seed = seed;
    pair.task1.name = "task1";
    pair.task1.train = make_dataset(substream(seed, 1), kTrainSamples, 1);
    pair.task1.holdout = make_dataset(substream(seed, 2), kHoldoutSamples, 1);
    pair.task2.name = "task2";
    pair.task2.train = make_dataset(substream(seed, 3), kTrainSamples, 2);
    pair.task2.holdout = make_dataset(substream(seed, 4), kHoldoutSamples, 2);
    const ToyDataset pretext = make_dataset(substream(seed, 5), kTrainSamples, 0);

    // initialization: N(0, 1/fan_in) weights, zero biases
    std::vector<double> w(kToyParamCount, 0.0);
    CounterRng init_rng(substream(seed, 6));
    const double scale1 = 1.0 / std::sqrt(static_cast<double>(kToyInputDim));
    const double scale2 = 1.0 / std::sqrt(static_cast<double>(kToyHidden));
    for (int i = 0; i < kToyHidden * kToyInputDim; ++i) {
        w[kOffW1 + i] = scale1 * normal_draw(init_rng);
    }
    for (int i = 0; i < kToyHidden * kToyHidden; ++i) {
        w[kOffW2 + i] = scale2 * normal_draw(init_rng);
    }
    for (int i = 0; i < kToyHidden; ++i) w[kOffW3 + i] = scale2 * normal_draw(init_rng);

    train(w, pretext, kPretextSteps, seed);
    w = round_trip_f32(w);  // the stored pretrained checkpoint is the lineage root
    const std::string tag = std::to_string(seed);
    pair.pretrained = params_from_flat(w, "toy-pretrained-seed" + tag);

    std::vector<double> w1 = w;
    train(w1, pair.task1.train, kFinetuneSteps, seed);
    pair.model_t1 = params_from_flat(w1, "toy-task1-seed" + tag);

    std::vector<double> w2 = w;
    train(w2, pair.task2.train, kFinetuneSteps, seed);
    pair.model_t2 = params_from_flat(w2, "toy-task2-seed" + tag);
    return pair;
}

PathScan scan_path(const ToyTaskPair& pair, int grid_size) {
    if (grid_size < 2) throw Error("scan_path: grid size must be at least 2");
    PathScan scan;
    scan.points.reserve(grid_size);
    for (int i = 0; i < grid_size; ++i) {
        const double lambda = static_cast<double>(i) / (grid_size - 1);
        const TensorMap merged = lerp(pair.model_t1, pair.model_t2, lambda);
        PathPoint point;
        point.lambda = lambda;
        point.loss_task1 = toy_loss(merged, pair.task1.holdout);
        point.loss_task2 = toy_loss(merged, pair.task2.holdout);
        point.combined = 0.5 * (point.loss_task1 + point.loss_task2);
        scan.points.push_back(point);
    }
    return scan;
}

double barrier_statistic(const PathScan& scan) {
    if (scan.points.size() < 2) throw Error("barrier_statistic: scan needs two points");
    double max_path = 0.0;
    for (const PathPoint& p : scan.points) max_path = std::max(max_path, p.combined);
    const double max_end =
        std::max(scan.points.front().combined, scan.points.back().combined);
    return max_path / max_end;
}

SweepResult run_sweep(const ToyTaskPair& pair, const SweepSchedule& schedule,
                      const MergeRecipe& method_template) {
    if (!is_m3_method(method_template.method)) {
        throw Error("run_sweep: method template must be an m3 variant");
    }
    const std::vector<SamplingRecord> records = make_sweep(schedule);
    const TensorMap models[] = {pair.model_t1, pair.model_t2};

    SweepResult result;
    result.records.reserve(records.size());
    for (const SamplingRecord& rec : records) {
        MergeRecipe recipe = method_template;
        recipe.lambda_m = rec.lambda_m;
        recipe.sampling = rec;
        MergeResult merged = merge(recipe, &pair.pretrained, models);

        SweepEntry entry;
        entry.rec = rec;
        entry.digest = checkpoint_digest(merged.merged);
        entry.score_task1 = toy_score(toy_loss(merged.merged, pair.task1.holdout));
        entry.score_task2 = toy_score(toy_loss(merged.merged, pair.task2.holdout));
        entry.combined = 0.5 * (entry.score_task1 + entry.score_task2);
        result.records.push_back(std::move(entry));
    }
    result.selected = 0;
    for (std::size_t i = 1; i < result.records.size(); ++i) {
        if (result.records[i].combined > result.records[result.selected].combined) {
            result.selected = i;
        }
    }
    return result;
}

RobustnessReport compute_pdr(double metric_no_attack, double metric_attack) {
    if (!(metric_no_attack > 0.0)) {
        throw Error("compute_pdr: metric_no_attack must be positive (PDR is undefined)");
    }
    if (metric_attack < 0.0) {
        throw Error("compute_pdr: metric_attack must be non-negative");
    }
    RobustnessReport report;
    report.metric_no_attack = metric_no_attack;
    report.metric_attack = metric_attack;
    report.pdr = (metric_no_attack - metric_attack) / metric_no_attack * 100.0;
    return report;
}

namespace {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string path_scan_csv(const PathScan& scan) {
    std::ostringstream out;
    out << "lambda,loss_task1,loss_task2,combined\n";
    for (const PathPoint& p : scan.points) {
        out << format_double(p.lambda) << ',' << format_double(p.loss_task1) << ','
            << format_double(p.loss_task2) << ',' << format_double(p.combined) << '\n';
    }
    return out.str();
}

std::string path_scan_json(const PathScan& scan) {
    nlohmann::json points = nlohmann::json::array();
    for (const PathPoint& p : scan.points) {
        points.push_back({{"lambda", p.lambda},
                          {"loss_task1", p.loss_task1},
                          {"loss_task2", p.loss_task2},
                          {"combined", p.combined}});
    }
    nlohmann::json doc;
    doc["points"] = points;
    return doc.dump(2) + "\n";
}

std::string sweep_result_json(const SweepResult& result) {
    nlohmann::json records = nlohmann::json::array();
    for (const SweepEntry& e : result.records) {
        nlohmann::json node;
        node["alpha"] = e.rec.alpha;
        node["seed"] = e.rec.seed;
        node["lambda_m"] = e.rec.lambda_m;
        node["digest"] = e.digest;
        node["score_task1"] = e.score_task1;
        node["score_task2"] = e.score_task2;
        node["avg"] = e.combined;
        records.push_back(node);
    }
    nlohmann::json doc;
    doc["records"] = records;
    doc["selected"] = result.selected;
    return doc.dump(2) + "\n";
}

}  // namespace mixmerge::lab
