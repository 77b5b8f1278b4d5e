#pragma once

// Paired weighted-vs-unweighted experiment on synthetic phantoms.
//
// Every replicate r draws its own train and test phantoms and its own network
// init and shuffle seeds. All arms of a replicate see exactly the same seeds,
// so arms differ only in their own settings (normally just the loss weighting).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "lobeseg/error.hpp"
#include "lobeseg/metrics.hpp"
#include "lobeseg/phantom.hpp"
#include "lobeseg/postprocess.hpp"
#include "lobeseg/random.hpp"
#include "lobeseg/segnet.hpp"
#include "lobeseg/train.hpp"

namespace lobeseg {

struct ArmConfig {
    std::string name;
    bool weighted = true;
    TrainConfig train;
};

struct ExperimentConfig {
    int replicates = 5;
    int num_train = 3;
    int num_test = 1;
    PhantomSpec phantom;       // seed is replaced per case
    double test_completeness = 0.6;
    NetConfig net;             // seed is replaced per replicate
    PatchLayout infer_layout{32, 8};
    std::uint64_t master_seed = 0;
    std::vector<ArmConfig> arms;

    void validate() const
    {
        if (replicates < 1 || num_train < 1 || num_test < 1) throw ShapeError("experiment: counts must be >= 1");
        phantom.validate();
        if (!(test_completeness >= 0.0 && test_completeness <= 1.0))
            throw ShapeError("experiment: test_completeness must lie in [0, 1]");
        net.validate();
        if (net.num_labels != num_labels_for(phantom.side)) throw ShapeError("experiment: num_labels does not match side");
        if (!infer_layout.valid()) throw ShapeError("experiment: invalid inference layout");
        if (arms.empty()) throw ShapeError("experiment: no arms configured");
        for (std::size_t i = 0; i < arms.size(); ++i) {
            arms[i].train.validate();
            for (std::size_t j = 0; j < i; ++j)
                if (arms[j].name == arms[i].name) throw ShapeError("experiment: duplicate arm " + arms[i].name);
        }
    }
};

/// Defaults: left lung, 64^3 at 1.5 mm, completeness 0.6, five replicates,
/// 2000 iterations of lr 0.005 with batch 2, one weighted and one unweighted arm.
inline ExperimentConfig default_experiment()
{
    ExperimentConfig c;
    c.net.in_channels = 4;
    c.net.hidden_channels = 4;
    c.net.num_labels = 3;
    TrainConfig tc;
    tc.iterations = 2000;
    tc.learning_rate = 0.005;
    tc.batch_size = 2;
    tc.layout = {16, 4};
    c.arms = {{"weighted", true, tc}, {"unweighted", false, tc}};
    return c;
}

namespace detail {

inline Side parse_side(const std::string& s)
{
    if (s == "left") return Side::left;
    if (s == "right") return Side::right;
    throw ShapeError("side must be left or right, got '" + s + "'");
}

template <class T>
T ini_get(const boost::property_tree::ptree& t, const std::string& key, T fallback)
{
    const auto raw = t.get_optional<std::string>(key);
    if (!raw) return fallback;
    if constexpr (std::is_same_v<T, std::string>) {
        return *raw;
    } else {
        std::istringstream in(*raw);
        T value{};
        in >> value;
        if (in.fail() || !(in >> std::ws).eof())
            throw ShapeError("config key '" + key + "' has an invalid value '" + *raw + "'");
        return value;
    }
}

/// Train-related keys that may appear globally or in an arm section.
inline TrainConfig read_train_keys(const boost::property_tree::ptree& t, TrainConfig tc)
{
    tc.learning_rate = ini_get(t, "learning_rate", tc.learning_rate);
    tc.batch_size = ini_get(t, "batch_size", tc.batch_size);
    tc.iterations = ini_get(t, "iterations", tc.iterations);
    tc.layout.core = ini_get(t, "train_core", tc.layout.core);
    tc.layout.margin = ini_get(t, "train_margin", tc.layout.margin);
    tc.weights.w_max = ini_get(t, "w_max", tc.weights.w_max);
    tc.weights.radius_mm = ini_get(t, "radius_mm", tc.weights.radius_mm);
    tc.weights.w_far = ini_get(t, "w_far", tc.weights.w_far);
    return tc;
}

inline const std::vector<std::string>& known_global_keys()
{
    static const std::vector<std::string> keys{
        "replicates", "num_train", "num_test", "side", "dims", "spacing", "completeness", "test_completeness",
        "noise_sigma", "in_channels", "hidden_channels", "prelu_init", "infer_core", "infer_margin", "seed",
        "learning_rate", "batch_size", "iterations", "train_core", "train_margin", "w_max", "radius_mm", "w_far"};
    return keys;
}

} // namespace detail

/// Parses the flat key=value format. Keys before any section (or in
/// [experiment]) are global; each [arm.NAME] section adds an arm and may
/// override the training keys. `loss = weighted|unweighted` selects the loss.
inline ExperimentConfig parse_experiment_config(const std::string& text)
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ShapeError(std::string("config: ") + e.what());
    }
    ExperimentConfig c = default_experiment();
    pt::ptree globals;
    std::vector<std::pair<std::string, pt::ptree>> arm_sections;
    for (const auto& [key, node] : tree) {
        if (node.empty()) {
            globals.put(key, node.data());
        } else if (key == "experiment") {
            for (const auto& [k, v] : node) globals.put(k, v.data());
        } else if (key.rfind("arm.", 0) == 0 && key.size() > 4) {
            arm_sections.emplace_back(key.substr(4), node);
        } else {
            throw ShapeError("config: unknown section [" + key + "]");
        }
    }
    for (const auto& [k, v] : globals) {
        const auto& known = detail::known_global_keys();
        if (std::find(known.begin(), known.end(), k) == known.end()) throw ShapeError("config: unknown key '" + k + "'");
    }

    c.replicates = detail::ini_get(globals, "replicates", c.replicates);
    c.num_train = detail::ini_get(globals, "num_train", c.num_train);
    c.num_test = detail::ini_get(globals, "num_test", c.num_test);
    c.phantom.side = detail::parse_side(detail::ini_get<std::string>(globals, "side", to_string(c.phantom.side)));
    c.phantom.dims = Dims::cube(detail::ini_get(globals, "dims", c.phantom.dims.x));
    c.phantom.spacing = Spacing::isotropic(detail::ini_get(globals, "spacing", c.phantom.spacing.x));
    c.phantom.completeness = detail::ini_get(globals, "completeness", c.phantom.completeness);
    c.test_completeness = detail::ini_get(globals, "test_completeness", c.phantom.completeness);
    c.phantom.noise_sigma = detail::ini_get(globals, "noise_sigma", c.phantom.noise_sigma);
    c.net.in_channels = detail::ini_get(globals, "in_channels", c.net.in_channels);
    c.net.hidden_channels = detail::ini_get(globals, "hidden_channels", c.net.hidden_channels);
    c.net.prelu_init = detail::ini_get(globals, "prelu_init", c.net.prelu_init);
    c.net.num_labels = num_labels_for(c.phantom.side);
    c.infer_layout.core = detail::ini_get(globals, "infer_core", c.infer_layout.core);
    c.infer_layout.margin = detail::ini_get(globals, "infer_margin", c.infer_layout.margin);
    c.master_seed = detail::ini_get(globals, "seed", c.master_seed);

    const TrainConfig base = detail::read_train_keys(globals, c.arms.front().train);
    if (!arm_sections.empty()) {
        c.arms.clear();
        for (const auto& [name, node] : arm_sections) {
            ArmConfig arm;
            arm.name = name;
            const std::string loss = detail::ini_get<std::string>(node, "loss", "");
            if (loss == "weighted") arm.weighted = true;
            else if (loss == "unweighted") arm.weighted = false;
            else throw ShapeError("config: arm '" + name + "' needs loss = weighted|unweighted");
            arm.train = detail::read_train_keys(node, base);
            c.arms.push_back(std::move(arm));
        }
    } else {
        for (auto& arm : c.arms) arm.train = base;
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_experiment_config(ss.str());
}

// ---------------------------------------------------------------------------

/// Seeds shared by every arm of one replicate.
struct ReplicateSeeds {
    std::vector<std::uint64_t> train_cases;
    std::vector<std::uint64_t> test_cases;
    std::uint64_t net_init = 0;
    std::uint64_t shuffle = 0;
};

inline ReplicateSeeds replicate_seeds(const ExperimentConfig& c, int replicate)
{
    ReplicateSeeds s;
    const auto r = static_cast<std::uint64_t>(replicate);
    for (int j = 0; j < c.num_train; ++j)
        s.train_cases.push_back(counter_hash(c.master_seed, 10, r * 4096 + static_cast<std::uint64_t>(j)));
    for (int j = 0; j < c.num_test; ++j)
        s.test_cases.push_back(counter_hash(c.master_seed, 11, r * 4096 + static_cast<std::uint64_t>(j)));
    s.net_init = counter_hash(c.master_seed, 12, r);
    s.shuffle = counter_hash(c.master_seed, 13, r);
    return s;
}

inline std::string case_id(int replicate, int test_index)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "r%02d_t%02d", replicate, test_index);
    return buf;
}

struct ArmRun {
    std::string arm;
    int replicate = 0;
    bool ok = false;
    std::string error;
    NetParams params;
    std::vector<double> loss_history;
    std::vector<EvalReport> reports;
};

struct ArmSummary {
    std::string arm;
    std::size_t cases = 0;
    std::size_t invalid = 0;
    double median_lobe_dice = std::numeric_limits<double>::quiet_NaN();
    double median_mean_dist_mm = std::numeric_limits<double>::quiet_NaN();
};

struct ExperimentResult {
    std::vector<ArmRun> runs; // sorted by (arm name, replicate)
    std::vector<ArmSummary> summary;
    bool complete() const
    {
        return std::all_of(runs.begin(), runs.end(), [](const ArmRun& r) { return r.ok; });
    }
    std::vector<EvalReport> reports() const
    {
        std::vector<EvalReport> all;
        for (const auto& r : runs) all.insert(all.end(), r.reports.begin(), r.reports.end());
        return sorted_reports(std::move(all));
    }
};

inline double median(std::vector<double> v)
{
    std::erase_if(v, [](double x) { return !std::isfinite(x); });
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<PhantomCase> make_cases(const ExperimentConfig& c, const std::vector<std::uint64_t>& seeds,
                                           double completeness)
{
    std::vector<PhantomCase> out;
    for (auto seed : seeds) {
        PhantomSpec s = c.phantom;
        s.seed = seed;
        s.completeness = completeness;
        out.push_back(generate(s));
    }
    return out;
}

/// Trains one arm of one replicate and evaluates it on that replicate's test cases.
inline ArmRun run_arm(const ExperimentConfig& c, const ArmConfig& arm, int replicate)
{
    ArmRun run;
    run.arm = arm.name;
    run.replicate = replicate;
    try {
        const ReplicateSeeds seeds = replicate_seeds(c, replicate);
        const auto train_cases = make_cases(c, seeds.train_cases, c.phantom.completeness);
        NetConfig net = c.net;
        net.seed = seeds.net_init;
        TrainConfig tc = arm.train;
        tc.seed = seeds.shuffle;
        TrainResult tr = train(train_cases, net, tc, arm.weighted);
        run.params = std::move(tr.params);
        run.loss_history = std::move(tr.loss_history);
        const auto test_cases = make_cases(c, seeds.test_cases, c.test_completeness);
        for (std::size_t j = 0; j < test_cases.size(); ++j) {
            const auto& tcase = test_cases[j];
            const CleanupResult seg = postprocess(infer(run.params, tcase.image, c.infer_layout), tcase.lung, c.phantom.side);
            run.reports.push_back(evaluate_case(seg.seg, tcase.ref, tcase.fissure_visible,
                                                case_id(replicate, static_cast<int>(j)), arm.name));
        }
        run.ok = true;
    } catch (const std::exception& e) {
        run.ok = false;
        run.error = e.what();
    }
    return run;
}

inline std::vector<ArmSummary> summarize(const std::vector<ArmRun>& runs)
{
    std::map<std::string, std::vector<const EvalReport*>> by_arm;
    for (const auto& r : runs) {
        auto& list = by_arm[r.arm];
        for (const auto& rep : r.reports) list.push_back(&rep);
    }
    std::vector<ArmSummary> out;
    for (const auto& [arm, reps] : by_arm) {
        ArmSummary s;
        s.arm = arm;
        s.cases = reps.size();
        std::vector<double> dice, dist;
        for (const auto* rep : reps) {
            dice.push_back(rep->mean_lobe_dice());
            if (rep->valid) dist.push_back(rep->mean_dist_mm);
            else ++s.invalid;
        }
        s.median_lobe_dice = median(dice);
        s.median_mean_dist_mm = median(dist);
        out.push_back(s);
    }
    return out;
}

using ExperimentProgress = std::function<void(const ArmRun&)>;

/// Runs every (arm, replicate) job, `threads` at a time. Results do not depend
/// on the thread count or on arm order in the config.
inline ExperimentResult run_experiment(const ExperimentConfig& c, int threads = 1, const ExperimentProgress& progress = {})
{
    c.validate();
    std::vector<ArmConfig> arms = c.arms;
    std::sort(arms.begin(), arms.end(), [](const ArmConfig& a, const ArmConfig& b) { return a.name < b.name; });
    std::vector<std::pair<std::size_t, int>> jobs;
    for (std::size_t a = 0; a < arms.size(); ++a)
        for (int r = 0; r < c.replicates; ++r) jobs.emplace_back(a, r);

    ExperimentResult result;
    result.runs.resize(jobs.size());
    std::atomic<std::size_t> next{0};
    std::mutex report_mutex;
    auto worker = [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            result.runs[j] = run_arm(c, arms[jobs[j].first], jobs[j].second);
            if (progress) {
                std::lock_guard lock(report_mutex);
                progress(result.runs[j]);
            }
        }
    };
    const auto n = static_cast<std::size_t>(std::max(1, threads));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < std::min(n, jobs.size()); ++t) pool.emplace_back(worker);
    }
    result.summary = summarize(result.runs);
    return result;
}

inline std::string summary_table(const std::vector<ArmSummary>& summary)
{
    std::string out = "arm,cases,invalid,median_lobe_dice,median_mean_dist_mm\n";
    for (const auto& s : summary)
        out += s.arm + "," + std::to_string(s.cases) + "," + std::to_string(s.invalid) + "," +
               detail::csv_number(s.median_lobe_dice) + "," + detail::csv_number(s.median_mean_dist_mm) + "\n";
    return out;
}

/// Writes reports (CSV + JSON), summary.csv, losses.csv and, if any job
/// failed, a FAILED marker listing the errors. Completed runs are always kept.
inline void write_experiment(const ExperimentResult& r, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    const auto reports = r.reports();
    if (!reports.empty()) emit_report(reports, dir / "experiment.csv");

    auto write_text = [](const std::filesystem::path& p, const std::string& text) {
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + p.string());
        f << text;
        if (!f) throw IoError("short write to " + p.string());
    };
    write_text(dir / "summary.csv", summary_table(r.summary));

    std::string losses = "arm,replicate,iteration,loss\n";
    for (const auto& run : r.runs)
        for (std::size_t i = 0; i < run.loss_history.size(); ++i)
            losses += run.arm + "," + std::to_string(run.replicate) + "," + std::to_string(i) + "," +
                      detail::csv_number(run.loss_history[i]) + "\n";
    write_text(dir / "losses.csv", losses);

    const auto marker = dir / "FAILED";
    if (r.complete()) {
        std::filesystem::remove(marker);
        return;
    }
    std::string text;
    for (const auto& run : r.runs)
        if (!run.ok) text += run.arm + " replicate " + std::to_string(run.replicate) + ": " + run.error + "\n";
    write_text(marker, text);
}

} // namespace lobeseg
