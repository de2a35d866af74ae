// softds command-line tool: aggregate, evaluate, simulate, online, explain.
//
// Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numeric failure.
// Payload goes to files or stdout; diagnostics go to stderr.

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "softds/baselines.hpp"
#include "softds/data_model.hpp"
#include "softds/errors.hpp"
#include "softds/io.hpp"
#include "softds/metrics.hpp"
#include "softds/parallel.hpp"
#include "softds/sds.hpp"
#include "softds/synthgen.hpp"

namespace fs = std::filesystem;
using namespace softds;

namespace {

enum ExitCode : int { kOk = 0, kValidation = 1, kIo = 2, kNumeric = 3 };

struct RunConfig {
    std::string manifest;
    std::string method = "sds";
    std::string config;
    std::string out;
    std::string model_out;
    std::string trace_out;
    std::string model;
    std::string posterior;
    std::string truth;
    std::string bins_out;
    std::string confusion_out;
    std::string ood_posterior;
    std::string ood_score = "max_prob";
    std::string spec;
    std::string bayes_out;
    std::string input;
    std::string item;
    std::size_t bins = kDefaultEceBins;
    std::size_t ds_iterations = 50;
    unsigned threads = 0;
    std::optional<std::uint64_t> seed;
};

SdsConfig effective_config(const RunConfig& run) {
    SdsConfig cfg = run.config.empty() ? SdsConfig{} : load_config(run.config);
    if (run.seed) {
        cfg.seed = *run.seed;
    }
    cfg.validate();
    return cfg;
}

fs::path sibling_path(const fs::path& out, const std::string& suffix) {
    fs::path p = out;
    p.replace_extension();
    p += suffix;
    return p;
}

void emit_json(const json& j, const std::string& out) {
    if (out.empty()) {
        std::cout << j.dump(2) << "\n";
    } else {
        write_text(out, j.dump(2) + "\n");
    }
}

int cmd_aggregate(const RunConfig& run) {
    const SdsConfig cfg = effective_config(run);
    const PredictionSet preds = load_predictions(run.manifest, cfg.prob_floor);
    const unsigned threads = resolve_threads(run.threads);
    std::cerr << "loaded " << preds.n_items() << " items, " << preds.n_members() << " members, "
              << preds.n_classes() << " classes\n";

    if (run.method == "ea") {
        save_posterior(ensemble_average(preds), run.out);
    } else if (run.method == "mv") {
        save_posterior(majority_vote(harden(preds), preds.item_ids()), run.out);
    } else if (run.method == "ds") {
        auto [model, post] =
            ds_em(harden(preds), run.ds_iterations, cfg.ds_init_smoothing, preds.item_ids());
        save_posterior(post, run.out);
    } else {
        const FitResult result = fit(preds, cfg, threads);
        save_posterior(result.posterior, run.out);
        save_model(result.model,
                   run.model_out.empty() ? sibling_path(run.out, ".model.json") : fs::path(run.model_out));
        save_trace(result.trace,
                   run.trace_out.empty() ? sibling_path(run.out, ".trace.csv") : fs::path(run.trace_out));
        if (!result.trace.records.empty()) {
            std::cerr << "sds: " << result.trace.records.size() << " iterations, final Q "
                      << result.trace.records.back().q << "\n";
        }
    }
    return kOk;
}

int cmd_evaluate(const RunConfig& run) {
    const PosteriorMatrix post = load_posterior(run.posterior);
    const GroundTruth truth = align_truth(load_truth(run.truth), post.item_ids());
    json report = report_to_json(evaluate(post, truth, run.bins));

    if (!run.ood_posterior.empty()) {
        const OodScore method = run.ood_score == "entropy" ? OodScore::entropy : OodScore::max_prob;
        const PosteriorMatrix ood = load_posterior(run.ood_posterior, post.n_classes());
        report["auroc"] = auroc(ood_scores(post, method), ood_scores(ood, method));
        report["ood_score"] = run.ood_score;
    }
    if (!run.bins_out.empty()) {
        save_reliability_bins(reliability_bins(post, truth, run.bins), run.bins_out);
    }
    if (!run.confusion_out.empty()) {
        json out;
        out["aggregate"] = empirical_confusion_to_json({true_confusion(post, truth)});
        if (!run.manifest.empty()) {
            const PredictionSet preds = load_predictions(run.manifest);
            out["ensemble"] = empirical_confusion_to_json(
                true_confusion(preds, align_truth(truth, preds.item_ids())));
        }
        write_text(run.confusion_out, out.dump(2) + "\n");
    }
    emit_json(report, run.out);
    return kOk;
}

int cmd_simulate(const RunConfig& run) {
    GenerativeSpec spec = spec_from_json(read_json(run.spec));
    if (run.seed) {
        spec.seed = *run.seed;
    }
    const fs::path dir(run.out);
    fs::create_directories(dir);
    const SyntheticData data = sample(spec);
    const auto members = save_member_files(dir, "member_", data.predictions);
    save_truth(data.truth, dir / "truth.csv");
    save_manifest(dir / "manifest.json", spec.n_classes, members, "truth.csv");
    if (!run.bayes_out.empty()) {
        save_posterior(bayes_posterior(spec, data.predictions), run.bayes_out);
    }
    std::cerr << "wrote " << spec.n_items << " items to " << dir.string() << "\n";
    return kOk;
}

void write_posterior_row(std::ostream& out, const std::string& id, const std::vector<double>& p) {
    out << id;
    for (double v : p) {
        out << ',' << format_double(v);
    }
    out << '\n';
    out.flush();
}

int cmd_online(const RunConfig& run) {
    const SdsConfig cfg = effective_config(run);
    const SdsModel model = load_model(run.model);
    const ModelTerms terms(model);
    const std::size_t K = model.pi.n_members();
    const std::size_t J = model.pi.n_classes();

    std::ofstream file_out;
    if (!run.out.empty()) {
        file_out.open(run.out, std::ios::trunc);
        if (!file_out) {
            throw IoError("cannot open " + run.out + " for writing");
        }
    }
    std::ostream& out = run.out.empty() ? std::cout : file_out;
    out << probability_header(J) << '\n';

    if (!run.manifest.empty()) {
        const PredictionSet preds = load_predictions(run.manifest, cfg.prob_floor);
        if (preds.n_members() != K || preds.n_classes() != J) {
            throw ValidationError("manifest does not match the model's member or class count");
        }
        for (std::size_t i = 0; i < preds.n_items(); ++i) {
            write_posterior_row(out, preds.item_ids()[i],
                                online_infer(preds.item(i), model, terms, cfg.prob_floor));
        }
        return kOk;
    }

    std::ifstream file_in;
    if (!run.input.empty() && run.input != "-") {
        file_in.open(run.input);
        if (!file_in) {
            throw IoError("cannot open " + run.input);
        }
    }
    std::istream& in = file_in.is_open() ? static_cast<std::istream&>(file_in) : std::cin;

    // row: item_id followed by K*J probabilities, member-major
    int status = kOk;
    std::size_t line_no = 0;
    std::vector<double> probs(K * J);
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const auto fields = split_csv_line(line);
        if (line_no == 1 && fields.front() == "item_id") {
            continue;
        }
        const std::string where = "input line " + std::to_string(line_no);
        try {
            if (fields.size() != K * J + 1) {
                throw ValidationError(where + ": expected " + std::to_string(K * J + 1) +
                                      " columns, got " + std::to_string(fields.size()));
            }
            for (std::size_t p = 0; p < K * J; ++p) {
                probs[p] = parse_double(fields[p + 1], where);
            }
            for (std::size_t k = 0; k < K; ++k) {
                const std::span<double> row(probs.data() + k * J, J);
                if (auto problem = probability_row_problem(row, kLoadSumTolerance); !problem.empty()) {
                    throw ValidationError(where + " member " + std::to_string(k) + ": " + problem);
                }
                floor_and_renormalize(row, cfg.prob_floor);
            }
            write_posterior_row(out, std::string(fields.front()),
                                online_infer(probs, model, terms, cfg.prob_floor));
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "; row skipped\n";
            status = kValidation;
        }
    }
    return status;
}

int cmd_explain(const RunConfig& run) {
    const SdsConfig cfg = effective_config(run);
    const SdsModel model = load_model(run.model);
    const PredictionSet preds = load_predictions(run.manifest, cfg.prob_floor);
    const auto& ids = preds.item_ids();
    const auto it = std::find(ids.begin(), ids.end(), run.item);
    if (it == ids.end()) {
        throw ValidationError("unknown item id '" + run.item + "'");
    }
    const auto index = static_cast<std::size_t>(it - ids.begin());
    const Explanation e = explain(preds, model, index, cfg.prob_floor);
    const std::size_t J = e.n_classes;
    json j{{"item_id", run.item},
           {"n_classes", J},
           {"prior_term", e.prior_term},
           {"member_term", matrix_to_json(e.member_term, e.n_members, J)},
           {"normalizer_term", matrix_to_json(e.normalizer_term, e.n_members, J)},
           {"log_weight", e.log_weight},
           {"posterior", e.posterior}};
    emit_json(j, run.out);
    return kOk;
}

int run_guarded(int (*command)(const RunConfig&), const RunConfig& run) {
    try {
        return command(run);
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Soft Dawid-Skene aggregation of ensemble soft labels"};
    app.require_subcommand(1);
    RunConfig run;

    auto add_threads = [&](CLI::App* cmd) {
        cmd->add_option("--threads", run.threads, "Worker threads (0: SOFTDS_THREADS or all cores)");
    };
    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", run.seed, "Override the configured seed");
    };

    auto* aggregate = app.add_subcommand("aggregate", "Aggregate member predictions into posteriors");
    aggregate->add_option("--manifest", run.manifest, "Prediction manifest JSON")->required();
    aggregate->add_option("--method", run.method, "Aggregation method")
        ->check(CLI::IsMember({"sds", "ea", "mv", "ds"}));
    aggregate->add_option("--config", run.config, "SdsConfig JSON");
    aggregate->add_option("--out", run.out, "Posterior CSV")->required();
    aggregate->add_option("--model-out", run.model_out, "Fitted model JSON (sds; default <out>.model.json)");
    aggregate->add_option("--trace-out", run.trace_out, "Fit trace CSV (sds; default <out>.trace.csv)");
    aggregate->add_option("--ds-iterations", run.ds_iterations, "EM iterations for --method ds");
    add_threads(aggregate);
    add_seed(aggregate);

    auto* evaluate_cmd = app.add_subcommand("evaluate", "Score posteriors against ground truth");
    evaluate_cmd->add_option("--posterior", run.posterior, "Posterior CSV")->required();
    evaluate_cmd->add_option("--truth", run.truth, "Ground-truth CSV")->required();
    evaluate_cmd->add_option("--bins", run.bins, "ECE bins")->check(CLI::PositiveNumber);
    evaluate_cmd->add_option("--out", run.out, "Report JSON (default stdout)");
    evaluate_cmd->add_option("--bins-out", run.bins_out, "Per-bin reliability CSV");
    evaluate_cmd->add_option("--confusion-out", run.confusion_out, "Empirical confusion matrices JSON");
    evaluate_cmd->add_option("--manifest", run.manifest, "Member predictions for per-member confusion");
    evaluate_cmd->add_option("--ood-posterior", run.ood_posterior, "Posteriors of out-of-distribution items");
    evaluate_cmd->add_option("--ood-score", run.ood_score, "Uncertainty score")
        ->check(CLI::IsMember({"max_prob", "entropy"}));
    add_threads(evaluate_cmd);

    auto* simulate = app.add_subcommand("simulate", "Sample a synthetic dataset from a generative spec");
    simulate->add_option("--spec", run.spec, "GenerativeSpec JSON")->required();
    simulate->add_option("--out", run.out, "Output directory")->required();
    simulate->add_option("--bayes-out", run.bayes_out, "Exact Bayes posterior CSV");
    add_seed(simulate);
    add_threads(simulate);

    auto* online = app.add_subcommand("online", "Streamed single-item E-step under a frozen model");
    online->add_option("--model", run.model, "Fitted model JSON")->required();
    online->add_option("--input", run.input, "Row CSV (default stdin)");
    online->add_option("--manifest", run.manifest, "Read items from a prediction manifest instead");
    online->add_option("--config", run.config, "SdsConfig JSON (prob_floor)");
    online->add_option("--out", run.out, "Posterior CSV (default stdout)");
    add_threads(online);

    auto* explain_cmd = app.add_subcommand("explain", "Decompose one item's log posterior");
    explain_cmd->add_option("--model", run.model, "Fitted model JSON")->required();
    explain_cmd->add_option("--manifest", run.manifest, "Prediction manifest JSON")->required();
    explain_cmd->add_option("--item", run.item, "Item id")->required();
    explain_cmd->add_option("--config", run.config, "SdsConfig JSON (prob_floor)");
    explain_cmd->add_option("--out", run.out, "Explanation JSON (default stdout)");
    add_threads(explain_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }

    if (aggregate->parsed()) {
        return run_guarded(cmd_aggregate, run);
    }
    if (evaluate_cmd->parsed()) {
        return run_guarded(cmd_evaluate, run);
    }
    if (simulate->parsed()) {
        return run_guarded(cmd_simulate, run);
    }
    if (online->parsed()) {
        return run_guarded(cmd_online, run);
    }
    return run_guarded(cmd_explain, run);
}
