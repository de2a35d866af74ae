#pragma once

// File formats.
//
//   member predictions  CSV  item_id,p_0,...,p_{J-1}
//   posterior           CSV  item_id,p_0,...,p_{J-1}
//   ground truth        CSV  item_id,label
//   fit trace           CSV  iteration,q,alpha,millis
//   manifest            JSON {"n_classes": J, "members": ["a.csv", ...], "labels": "truth.csv"}
//   confusion tensor    JSON {"members": [{"pi": [[...], ...]}, ...]}
//   model               JSON confusion tensor object plus "nu": [...]
//   config              JSON SdsConfig field names; absent fields keep defaults
//
// Item ids are opaque strings without commas. Doubles are written in the
// shortest form that parses back to the same value.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "softds/data_model.hpp"
#include "softds/errors.hpp"
#include "softds/metrics.hpp"
#include "softds/sds.hpp"
#include "softds/synthgen.hpp"

namespace softds {

using json = nlohmann::json;

// ---------------------------------------------------------------- primitives

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(trim(line.substr(start)));
            return fields;
        }
        fields.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
}

inline double parse_double(std::string_view field, const std::string& where) {
    double v = 0.0;
    const auto* first = field.data();
    const auto* last = field.data() + field.size();
    if (!field.empty() && *first == '+') {
        ++first;
    }
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last || field.empty()) {
        throw ValidationError(where + ": cannot parse number '" + std::string(field) + "'");
    }
    return v;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out << text;
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

inline json read_json(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": invalid JSON: " + e.what());
    }
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::istringstream in(read_text(path));
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        if (!trim(line).empty()) {
            lines.push_back(line);
        }
    }
    return lines;
}

// ---------------------------------------------------------------- probability tables

/// Rows of an `item_id,p_0,...` CSV, unvalidated beyond shape and number parsing.
struct ProbabilityTable {
    std::vector<std::string> item_ids;
    std::size_t n_classes = 0;
    std::vector<double> values;
};

inline std::string probability_header(std::size_t n_classes) {
    std::string h = "item_id";
    for (std::size_t j = 0; j < n_classes; ++j) {
        h += ",p_" + std::to_string(j);
    }
    return h;
}

inline ProbabilityTable read_probability_table(const std::filesystem::path& path,
                                               std::optional<std::size_t> expected_classes) {
    const auto lines = read_lines(path);
    const std::string name = path.string();
    if (lines.empty()) {
        throw ValidationError(name + ": file is empty");
    }
    const auto header = split_csv_line(lines.front());
    if (header.size() < 3 || header.front() != "item_id") {
        throw ValidationError(name + ": header must be item_id,p_0,...,p_{J-1} with J >= 2");
    }
    const std::size_t J = header.size() - 1;
    for (std::size_t j = 0; j < J; ++j) {
        if (header[j + 1] != "p_" + std::to_string(j)) {
            throw ValidationError(name + ": header column " + std::to_string(j + 1) +
                                  " should be p_" + std::to_string(j));
        }
    }
    if (expected_classes && *expected_classes != J) {
        throw ValidationError(name + ": header declares " + std::to_string(J) +
                              " classes, expected " + std::to_string(*expected_classes));
    }
    ProbabilityTable table{{}, J, {}};
    for (std::size_t r = 1; r < lines.size(); ++r) {
        const std::string where = name + " row " + std::to_string(r);
        const auto fields = split_csv_line(lines[r]);
        if (fields.size() != J + 1) {
            throw ValidationError(where + ": expected " + std::to_string(J + 1) + " columns, got " +
                                  std::to_string(fields.size()));
        }
        table.item_ids.emplace_back(fields[0]);
        for (std::size_t j = 0; j < J; ++j) {
            table.values.push_back(parse_double(fields[j + 1], where));
        }
    }
    if (table.item_ids.empty()) {
        throw ValidationError(name + ": no data rows");
    }
    return table;
}

inline void write_probability_table(const std::filesystem::path& path,
                                    const std::vector<std::string>& ids, std::size_t n_classes,
                                    std::span<const double> values) {
    std::string text = probability_header(n_classes) + "\n";
    for (std::size_t i = 0; i < ids.size(); ++i) {
        text += ids[i];
        for (std::size_t j = 0; j < n_classes; ++j) {
            text += ',';
            text += format_double(values[i * n_classes + j]);
        }
        text += '\n';
    }
    write_text(path, text);
}

// ---------------------------------------------------------------- manifest / predictions

struct Manifest {
    std::size_t n_classes = 0;
    std::vector<std::filesystem::path> members;
    std::optional<std::filesystem::path> labels;
};

/// Member and label paths are resolved relative to the manifest's directory.
inline Manifest load_manifest(const std::filesystem::path& path) {
    const json j = read_json(path);
    const std::string name = path.string();
    if (!j.is_object() || !j.contains("n_classes") || !j.contains("members")) {
        throw ValidationError(name + ": manifest needs n_classes and members");
    }
    const auto base = path.parent_path();
    Manifest m;
    try {
        m.n_classes = j.at("n_classes").get<std::size_t>();
        for (const auto& member : j.at("members")) {
            m.members.push_back(base / member.get<std::string>());
        }
        if (j.contains("labels") && !j.at("labels").is_null()) {
            m.labels = base / j.at("labels").get<std::string>();
        }
    } catch (const json::exception& e) {
        throw ValidationError(name + ": " + e.what());
    }
    if (m.n_classes < 2 || m.members.empty()) {
        throw ValidationError(name + ": need n_classes >= 2 and at least one member");
    }
    return m;
}

inline void save_manifest(const std::filesystem::path& path, std::size_t n_classes,
                          const std::vector<std::string>& member_files,
                          std::optional<std::string> labels_file) {
    json j{{"n_classes", n_classes}, {"members", member_files}};
    if (labels_file) {
        j["labels"] = *labels_file;
    }
    write_text(path, j.dump(2) + "\n");
}

/// Loads and validates every member file. Rows follow member 0's item order;
/// other members may list the same items in any order.
inline PredictionSet load_predictions(const std::filesystem::path& manifest_path,
                                      double prob_floor = kDefaultProbFloor) {
    const Manifest m = load_manifest(manifest_path);
    const std::size_t K = m.members.size();
    const std::size_t J = m.n_classes;
    std::vector<std::string> ids;
    std::unordered_map<std::string, std::size_t> index;
    std::vector<double> probs;
    for (std::size_t k = 0; k < K; ++k) {
        const auto table = read_probability_table(m.members[k], J);
        const std::string name = m.members[k].string();
        if (k == 0) {
            ids = table.item_ids;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (!index.emplace(ids[i], i).second) {
                    throw ValidationError(name + ": duplicate item id '" + ids[i] + "'");
                }
            }
            probs.assign(ids.size() * K * J, 0.0);
        } else if (table.item_ids.size() != ids.size()) {
            throw ValidationError(name + ": has " + std::to_string(table.item_ids.size()) +
                                  " items, member 0 has " + std::to_string(ids.size()));
        }
        std::vector<bool> seen(ids.size(), false);
        for (std::size_t r = 0; r < table.item_ids.size(); ++r) {
            const std::string where = name + " row " + std::to_string(r + 1);
            const auto it = index.find(table.item_ids[r]);
            if (it == index.end()) {
                throw ValidationError(where + ": item '" + table.item_ids[r] +
                                      "' is not present in member 0");
            }
            if (seen[it->second]) {
                throw ValidationError(where + ": duplicate item id '" + table.item_ids[r] + "'");
            }
            seen[it->second] = true;
            const std::span<const double> row(table.values.data() + r * J, J);
            if (auto problem = probability_row_problem(row, kLoadSumTolerance); !problem.empty()) {
                throw ValidationError(where + ": " + problem);
            }
            std::copy(row.begin(), row.end(),
                      probs.begin() + static_cast<std::ptrdiff_t>((it->second * K + k) * J));
        }
    }
    return PredictionSet(std::move(ids), K, J, std::move(probs), prob_floor);
}

/// Writes one CSV per member named `<prefix><k>.csv` inside `dir`; returns the file names.
inline std::vector<std::string> save_member_files(const std::filesystem::path& dir,
                                                  const std::string& prefix,
                                                  const PredictionSet& preds) {
    std::vector<std::string> names;
    const std::size_t J = preds.n_classes();
    for (std::size_t k = 0; k < preds.n_members(); ++k) {
        std::vector<double> values(preds.n_items() * J);
        for (std::size_t i = 0; i < preds.n_items(); ++i) {
            const auto r = preds.row(i, k);
            std::copy(r.begin(), r.end(), values.begin() + static_cast<std::ptrdiff_t>(i * J));
        }
        names.push_back(prefix + std::to_string(k) + ".csv");
        write_probability_table(dir / names.back(), preds.item_ids(), J, values);
    }
    return names;
}

// ---------------------------------------------------------------- posteriors

inline void save_posterior(const PosteriorMatrix& post, const std::filesystem::path& path) {
    write_probability_table(path, post.item_ids(), post.n_classes(), post.values());
}

inline PosteriorMatrix load_posterior(const std::filesystem::path& path,
                                      std::optional<std::size_t> expected_classes = std::nullopt) {
    auto table = read_probability_table(path, expected_classes);
    PosteriorMatrix post(std::move(table.item_ids), table.n_classes, std::move(table.values));
    try {
        post.check_rows(kLoadSumTolerance);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return post;
}

// ---------------------------------------------------------------- ground truth

inline GroundTruth load_truth(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    const std::string name = path.string();
    if (lines.empty()) {
        throw ValidationError(name + ": file is empty");
    }
    const auto header = split_csv_line(lines.front());
    if (header.size() != 2 || header[0] != "item_id" || header[1] != "label") {
        throw ValidationError(name + ": header must be item_id,label");
    }
    GroundTruth truth;
    for (std::size_t r = 1; r < lines.size(); ++r) {
        const std::string where = name + " row " + std::to_string(r);
        const auto fields = split_csv_line(lines[r]);
        if (fields.size() != 2) {
            throw ValidationError(where + ": expected 2 columns");
        }
        unsigned long label = 0;
        const auto res = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), label);
        if (res.ec != std::errc() || res.ptr != fields[1].data() + fields[1].size()) {
            throw ValidationError(where + ": label must be a nonnegative integer");
        }
        truth.item_ids.emplace_back(fields[0]);
        truth.labels.push_back(static_cast<ClassIndex>(label));
    }
    return truth;
}

inline void save_truth(const GroundTruth& truth, const std::filesystem::path& path) {
    std::string text = "item_id,label\n";
    for (std::size_t i = 0; i < truth.size(); ++i) {
        text += truth.item_ids[i] + "," + std::to_string(truth.labels[i]) + "\n";
    }
    write_text(path, text);
}

/// Reorders `truth` to follow `item_ids`; the id sets must match exactly.
inline GroundTruth align_truth(const GroundTruth& truth, const std::vector<std::string>& item_ids) {
    if (truth.size() != item_ids.size()) {
        throw ValidationError("ground truth has " + std::to_string(truth.size()) +
                              " items, expected " + std::to_string(item_ids.size()));
    }
    std::unordered_map<std::string, ClassIndex> by_id;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!by_id.emplace(truth.item_ids[i], truth.labels[i]).second) {
            throw ValidationError("ground truth: duplicate item id '" + truth.item_ids[i] + "'");
        }
    }
    GroundTruth out{item_ids, {}};
    out.labels.reserve(item_ids.size());
    for (const auto& id : item_ids) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw ValidationError("ground truth: no label for item '" + id + "'");
        }
        out.labels.push_back(it->second);
    }
    return out;
}

// ---------------------------------------------------------------- JSON forms

inline json matrix_to_json(std::span<const double> values, std::size_t rows, std::size_t cols) {
    json m = json::array();
    for (std::size_t r = 0; r < rows; ++r) {
        m.push_back(std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(r * cols),
                                        values.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols)));
    }
    return m;
}

inline json confusion_to_json(const ConfusionTensor& pi) {
    const std::size_t J = pi.n_classes();
    json members = json::array();
    for (std::size_t k = 0; k < pi.n_members(); ++k) {
        members.push_back({{"pi", matrix_to_json(pi.values().subspan(k * J * J, J * J), J, J)}});
    }
    return {{"members", members}};
}

inline ConfusionTensor confusion_from_json(const json& j) {
    try {
        const auto& members = j.at("members");
        if (!members.is_array() || members.empty()) {
            throw ValidationError("confusion tensor: members must be a non-empty array");
        }
        const std::size_t J = members.front().at("pi").size();
        std::vector<double> values;
        for (const auto& member : members) {
            const auto& rows = member.at("pi");
            if (rows.size() != J) {
                throw ValidationError("confusion tensor: every member needs J rows");
            }
            for (const auto& row : rows) {
                if (row.size() != J) {
                    throw ValidationError("confusion tensor: rows must have J entries");
                }
                for (const auto& v : row) {
                    values.push_back(v.get<double>());
                }
            }
        }
        return ConfusionTensor(members.size(), J, std::move(values));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("confusion tensor: ") + e.what());
    }
}

inline json model_to_json(const SdsModel& model) {
    json j = confusion_to_json(model.pi);
    j["n_classes"] = model.pi.n_classes();
    j["nu"] = std::vector<double>(model.nu.values().begin(), model.nu.values().end());
    return j;
}

inline SdsModel model_from_json(const json& j) {
    ConfusionTensor pi = confusion_from_json(j);
    try {
        ClassPrior nu(j.at("nu").get<std::vector<double>>());
        if (nu.n_classes() != pi.n_classes()) {
            throw ValidationError("model: nu length differs from confusion tensor size");
        }
        return {std::move(pi), std::move(nu)};
    } catch (const json::exception& e) {
        throw ValidationError(std::string("model: ") + e.what());
    }
}

inline void save_model(const SdsModel& model, const std::filesystem::path& path) {
    write_text(path, model_to_json(model).dump(2) + "\n");
}

inline SdsModel load_model(const std::filesystem::path& path) {
    try {
        return model_from_json(read_json(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

inline json config_to_json(const SdsConfig& c) {
    json schedule = json::array();
    for (const auto& step : c.alpha_schedule) {
        schedule.push_back({{"start_iteration", step.start_iteration}, {"alpha", step.alpha}});
    }
    return {{"alpha_schedule", schedule},
            {"em_iterations", c.em_iterations},
            {"inner_steps", c.inner_steps},
            {"learning_rate", c.learning_rate},
            {"weight_decay", c.weight_decay},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"adam_epsilon", c.adam_epsilon},
            {"pi_floor", c.pi_floor},
            {"prob_floor", c.prob_floor},
            {"ds_init_concentration", c.ds_init_concentration},
            {"ds_init_smoothing", c.ds_init_smoothing},
            {"q_rel_tolerance", c.q_rel_tolerance},
            {"seed", c.seed},
            {"reset_optimizer_each_m_step", c.reset_optimizer_each_m_step}};
}

/// Unknown keys are rejected so that misspelled settings do not silently fall back to defaults.
/// `alpha_schedule` entries may be objects or [start_iteration, alpha] pairs.
inline SdsConfig config_from_json(const json& j) {
    if (!j.is_object()) {
        throw ValidationError("config: expected a JSON object");
    }
    SdsConfig c;
    const json defaults = config_to_json(c);
    for (const auto& [key, value] : j.items()) {
        if (!defaults.contains(key)) {
            throw ValidationError("config: unknown field '" + key + "'");
        }
    }
    try {
        if (j.contains("alpha_schedule")) {
            c.alpha_schedule.clear();
            for (const auto& step : j.at("alpha_schedule")) {
                if (step.is_array()) {
                    c.alpha_schedule.push_back(
                        {step.at(0).get<std::size_t>(), step.at(1).get<double>()});
                } else {
                    c.alpha_schedule.push_back(
                        {step.at("start_iteration").get<std::size_t>(), step.at("alpha").get<double>()});
                }
            }
        }
        auto read = [&](const char* key, auto& field) {
            if (j.contains(key)) {
                field = j.at(key).get<std::decay_t<decltype(field)>>();
            }
        };
        read("em_iterations", c.em_iterations);
        read("inner_steps", c.inner_steps);
        read("learning_rate", c.learning_rate);
        read("weight_decay", c.weight_decay);
        read("adam_beta1", c.adam_beta1);
        read("adam_beta2", c.adam_beta2);
        read("adam_epsilon", c.adam_epsilon);
        read("pi_floor", c.pi_floor);
        read("prob_floor", c.prob_floor);
        read("ds_init_concentration", c.ds_init_concentration);
        read("ds_init_smoothing", c.ds_init_smoothing);
        read("q_rel_tolerance", c.q_rel_tolerance);
        read("seed", c.seed);
        read("reset_optimizer_each_m_step", c.reset_optimizer_each_m_step);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline SdsConfig load_config(const std::filesystem::path& path) {
    try {
        return config_from_json(read_json(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

inline json report_to_json(const MetricReport& r) {
    return {{"accuracy", r.accuracy},
            {"ece", r.ece},
            {"brier", r.brier},
            {"nll", r.nll},
            {"n_items", r.n_items}};
}

inline void save_trace(const FitTrace& trace, const std::filesystem::path& path) {
    std::string text = "iteration,q,alpha,millis\n";
    for (const auto& rec : trace.records) {
        text += std::to_string(rec.iteration) + "," + format_double(rec.q) + "," +
                format_double(rec.alpha) + "," + format_double(rec.millis) + "\n";
    }
    write_text(path, text);
}

inline void save_reliability_bins(const std::vector<ReliabilityBin>& bins,
                                  const std::filesystem::path& path) {
    std::string text = "bin,mean_confidence,accuracy,count\n";
    for (std::size_t b = 0; b < bins.size(); ++b) {
        text += std::to_string(b) + "," + format_double(bins[b].mean_confidence) + "," +
                format_double(bins[b].accuracy) + "," + std::to_string(bins[b].count) + "\n";
    }
    write_text(path, text);
}

/// Empirical confusion matrices in the confusion-tensor JSON layout, plus
/// the true classes that never occurred.
inline json empirical_confusion_to_json(const std::vector<EmpiricalConfusion>& matrices) {
    json members = json::array();
    for (const auto& m : matrices) {
        members.push_back({{"pi", matrix_to_json(m.matrix, m.n_classes, m.n_classes)},
                           {"empty_rows", m.empty_rows}});
    }
    return {{"members", members}};
}

inline GenerativeSpec spec_from_json(const json& j) {
    try {
        GenerativeSpec spec;
        spec.n_items = j.at("n_items").get<std::size_t>();
        spec.seed = j.value("seed", std::uint64_t{0});
        spec.pi_true = confusion_from_json(j);
        spec.n_members = j.contains("n_members") ? j.at("n_members").get<std::size_t>()
                                                 : spec.pi_true.n_members();
        spec.n_classes = j.contains("n_classes") ? j.at("n_classes").get<std::size_t>()
                                                 : spec.pi_true.n_classes();
        spec.nu_true = j.contains("nu")
                           ? ClassPrior(j.at("nu").get<std::vector<double>>())
                           : ClassPrior::uniform(spec.n_classes);
        spec.validate();
        return spec;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("generative spec: ") + e.what());
    }
}

inline json spec_to_json(const GenerativeSpec& spec) {
    json j = confusion_to_json(spec.pi_true);
    j["n_items"] = spec.n_items;
    j["n_members"] = spec.n_members;
    j["n_classes"] = spec.n_classes;
    j["nu"] = std::vector<double>(spec.nu_true.values().begin(), spec.nu_true.values().end());
    j["seed"] = spec.seed;
    return j;
}

} // namespace softds
