#pragma once

// Evaluation: per-label Dice and distance from visible fissures to the
// predicted lobar boundary, plus CSV/JSON report emission.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <tuple>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lobeseg/edt.hpp"
#include "lobeseg/error.hpp"
#include "lobeseg/volume.hpp"
#include "lobeseg/weighting.hpp"

namespace lobeseg {

/// 2|P & R| / (|P| + |R|); 1 when both sets are empty.
inline double dice_coefficient(const LabelVolume& pred, const LabelVolume& ref, int label)
{
    if (!(pred.dims == ref.dims)) throw ShapeError("dice_coefficient: dims mismatch");
    std::size_t p = 0, r = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool in_p = pred[i] == label, in_r = ref[i] == label;
        p += in_p;
        r += in_r;
        both += in_p && in_r;
    }
    if (p + r == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + r);
}

struct FissureDistance {
    double mean_mm = 0.0;
    double max_mm = 0.0;
};

/// Distances (mm) from each visible-fissure voxel to the nearest voxel of the
/// predicted lobar boundary. With `symmetric`, boundary-to-fissure distances
/// are pooled in as well.
inline FissureDistance mean_fissure_distance(const LabelVolume& pred, const Mask& fissure_visible, bool symmetric = false)
{
    if (!(pred.dims == fissure_visible.dims)) throw ShapeError("mean_fissure_distance: dims mismatch");
    if (count_nonzero(fissure_visible) == 0) throw NumericError("mean_fissure_distance: empty visible-fissure mask");
    Mask boundary = lobar_boundary(pred);
    boundary.spacing = fissure_visible.spacing;
    if (count_nonzero(boundary) == 0) throw NumericError("mean_fissure_distance: predicted lobar boundary is empty");
    const DistanceVolume to_boundary = edt(boundary);
    double sum = 0.0, mx = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < fissure_visible.size(); ++i) {
        if (!fissure_visible[i]) continue;
        sum += to_boundary[i];
        mx = std::max(mx, to_boundary[i]);
        ++n;
    }
    if (symmetric) {
        const DistanceVolume to_fissure = edt(fissure_visible);
        for (std::size_t i = 0; i < boundary.size(); ++i) {
            if (!boundary[i]) continue;
            sum += to_fissure[i];
            mx = std::max(mx, to_fissure[i]);
            ++n;
        }
    }
    return {sum / static_cast<double>(n), mx};
}

struct EvalReport {
    std::string case_id;
    std::string method; // weighted | unweighted | other
    std::vector<double> dice; // indexed by label, background at 0
    double mean_dist_mm = std::numeric_limits<double>::quiet_NaN();
    double max_dist_mm = std::numeric_limits<double>::quiet_NaN();
    double sym_mean_dist_mm = std::numeric_limits<double>::quiet_NaN();
    bool valid = true;
    std::string error;

    /// Mean Dice over lobe labels (1..L-1).
    double mean_lobe_dice() const
    {
        if (dice.size() < 2) return std::numeric_limits<double>::quiet_NaN();
        double s = 0.0;
        for (std::size_t l = 1; l < dice.size(); ++l) s += dice[l];
        return s / static_cast<double>(dice.size() - 1);
    }
};

/// Both metric panels for one case. Metric failures (empty predicted boundary)
/// mark the report invalid instead of throwing.
inline EvalReport evaluate_case(const LabelVolume& pred, const LabelVolume& ref, const Mask& fissure_visible,
                                std::string case_id = "case", std::string method = "other")
{
    if (!(pred.dims == ref.dims) || !(pred.dims == fissure_visible.dims)) throw ShapeError("evaluate_case: dims mismatch");
    EvalReport r;
    r.case_id = std::move(case_id);
    r.method = std::move(method);
    for (int l = 0; l < ref.num_labels; ++l) r.dice.push_back(dice_coefficient(pred, ref, l));
    try {
        const auto d = mean_fissure_distance(pred, fissure_visible);
        r.mean_dist_mm = d.mean_mm;
        r.max_dist_mm = d.max_mm;
        r.sym_mean_dist_mm = mean_fissure_distance(pred, fissure_visible, true).mean_mm;
    } catch (const NumericError& e) {
        r.valid = false;
        r.error = e.what();
    }
    return r;
}

// ---------------------------------------------------------------------------
// Report files

namespace detail {

inline std::string csv_number(double v)
{
    if (!std::isfinite(v)) return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline nlohmann::json json_number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline double from_json_number(const nlohmann::json& j)
{
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

} // namespace detail

/// Reports in emission order: by case id, then method.
inline std::vector<EvalReport> sorted_reports(std::vector<EvalReport> reports)
{
    std::stable_sort(reports.begin(), reports.end(), [](const EvalReport& a, const EvalReport& b) {
        return std::tie(a.case_id, a.method) < std::tie(b.case_id, b.method);
    });
    return reports;
}

inline std::string reports_csv(const std::vector<EvalReport>& reports)
{
    std::string out = "case,method,label,dice,mean_dist_mm,max_dist_mm\n";
    for (const auto& r : sorted_reports(reports)) {
        for (std::size_t l = 0; l < r.dice.size(); ++l)
            out += r.case_id + "," + r.method + "," + std::to_string(l) + "," + detail::csv_number(r.dice[l]) + ",,\n";
        out += r.case_id + "," + r.method + ",dist,," + detail::csv_number(r.mean_dist_mm) + "," +
               detail::csv_number(r.max_dist_mm) + "\n";
    }
    return out;
}

inline nlohmann::json reports_json(const std::vector<EvalReport>& reports)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : sorted_reports(reports)) {
        nlohmann::json j;
        j["case"] = r.case_id;
        j["method"] = r.method;
        j["dice"] = r.dice;
        j["mean_dist_mm"] = detail::json_number(r.mean_dist_mm);
        j["max_dist_mm"] = detail::json_number(r.max_dist_mm);
        j["sym_mean_dist_mm"] = detail::json_number(r.sym_mean_dist_mm);
        j["valid"] = r.valid;
        if (!r.error.empty()) j["error"] = r.error;
        arr.push_back(std::move(j));
    }
    return arr;
}

inline std::vector<EvalReport> reports_from_json(const nlohmann::json& arr)
{
    std::vector<EvalReport> out;
    for (const auto& j : arr) {
        EvalReport r;
        r.case_id = j.at("case").get<std::string>();
        r.method = j.at("method").get<std::string>();
        r.dice = j.at("dice").get<std::vector<double>>();
        r.mean_dist_mm = detail::from_json_number(j.at("mean_dist_mm"));
        r.max_dist_mm = detail::from_json_number(j.at("max_dist_mm"));
        r.sym_mean_dist_mm = detail::from_json_number(j.value("sym_mean_dist_mm", nlohmann::json(nullptr)));
        r.valid = j.at("valid").get<bool>();
        r.error = j.value("error", std::string{});
        out.push_back(std::move(r));
    }
    return out;
}

/// Writes `csv_path` and a JSON mirror next to it (same stem, .json).
inline void emit_report(const std::vector<EvalReport>& reports, const std::filesystem::path& csv_path)
{
    if (reports.empty()) throw ShapeError("emit_report: no reports");
    std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
    if (!csv) throw IoError("cannot write " + csv_path.string());
    csv << reports_csv(reports);
    if (!csv) throw IoError("short write to " + csv_path.string());

    auto json_path = csv_path;
    json_path.replace_extension(".json");
    std::ofstream js(json_path, std::ios::binary | std::ios::trunc);
    if (!js) throw IoError("cannot write " + json_path.string());
    js << reports_json(reports).dump(2) << "\n";
    if (!js) throw IoError("short write to " + json_path.string());
}

} // namespace lobeseg
