// gnndiar: simulate, train, refine, diarize, score, sweep, gradcheck.
//
// Exit codes: 0 success, 1 runtime/data failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gnndiar/gnndiar.hpp"

namespace fs = std::filesystem;
using namespace gnndiar;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

// Reads `key = value` lines ('#' starts a comment) into "--key value" tokens.
std::vector<std::string> config_tokens(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageFailure("cannot read config file '" + path + "'");
    std::vector<std::string> tokens;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageFailure(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (value == "true") {
            tokens.push_back("--" + key);
        } else if (value != "false") {
            tokens.push_back("--" + key);
            tokens.push_back(value);
        }
    }
    return tokens;
}

// Splices config-file tokens in front of the command-line flags of the
// subcommand so explicit flags, parsed later, win.
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::optional<std::string> config;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
            break;
        }
        if (args[i].starts_with("--config=")) {
            config = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
            break;
        }
    }
    if (!config) return args;
    auto tokens = config_tokens(*config);
    const auto sub = std::find_if(args.begin(), args.end(), [](const std::string& a) { return !a.starts_with("-"); });
    const auto at = sub == args.end() ? args.end() : sub + 1;
    args.insert(at, tokens.begin(), tokens.end());
    return args;
}

std::vector<int> parse_dims(const std::string& text) {
    std::vector<int> dims;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        int v = 0;
        if (!detail::parse_number(std::string_view(trim(item)), v) || v <= 0)
            throw UsageFailure("invalid layer dimension list '" + text + "'");
        dims.push_back(v);
    }
    if (dims.size() < 2) throw UsageFailure("layer dimension list needs at least two entries");
    return dims;
}

std::vector<double> parse_thresholds(const std::string& text) {
    std::vector<double> out;
    if (text.find(':') != std::string::npos) {
        std::stringstream ss(text);
        std::string a, b, c;
        std::getline(ss, a, ':');
        std::getline(ss, b, ':');
        std::getline(ss, c, ':');
        double lo = 0, hi = 0, step = 0;
        if (!detail::parse_number(std::string_view(a), lo) || !detail::parse_number(std::string_view(b), hi) ||
            !detail::parse_number(std::string_view(c), step))
            throw UsageFailure("threshold range must look like lo:hi:step");
        try {
            return threshold_grid(lo, hi, step);
        } catch (const ConfigError& e) {
            throw UsageFailure(e.what());
        }
    }
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        double v = 0;
        if (!detail::parse_number(std::string_view(trim(item)), v) || !(v > 0.0))
            throw UsageFailure("invalid threshold '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw UsageFailure("no thresholds given");
    return out;
}

void write_text(const fs::path& path, const std::string& text) { detail::write_file(path.string(), text); }

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

std::optional<RefinerModel> load_optional_model(const std::string& path, const std::vector<EmbeddingMatrix>& corpus) {
    if (path.empty()) return std::nullopt;
    auto model = load_checkpoint(path);
    for (const auto& s : corpus)
        if (s.rows() > 0 && s.cols() != model.input_dim())
            throw ConfigError("model expects " + std::to_string(model.input_dim()) + "-dim embeddings, session '" +
                              s.meta.front().session_id + "' has " + std::to_string(s.cols()));
    return model;
}

std::string session_of(const EmbeddingMatrix& m, std::size_t index) {
    return m.meta.empty() ? "session" + std::to_string(index) : m.meta.front().session_id;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graph-refined speaker embeddings and spectral diarization"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.set_help_all_flag("--help-all");
    app.add_option("--config", "key = value config file; explicit flags override it");

    std::uint64_t seed = 0;
    auto add_seed = [&seed](CLI::App* sub) {
        sub->add_option("--seed", seed, "master seed (falls back to $GRD_SEED)")->envname("GRD_SEED");
    };

    // simulate
    SimConfig sim;
    std::string sim_out;
    auto* simulate = app.add_subcommand("simulate", "write a synthetic meeting corpus and manifest");
    simulate->add_option("--sessions", sim.n_sessions, "number of sessions")->check(CLI::NonNegativeNumber);
    simulate->add_option("--out", sim_out, "output directory")->required();
    simulate->add_option("--speakers-min", sim.speakers_min)->check(CLI::PositiveNumber);
    simulate->add_option("--speakers-max", sim.speakers_max)->check(CLI::PositiveNumber);
    simulate->add_option("--segments-min", sim.segments_min)->check(CLI::PositiveNumber);
    simulate->add_option("--segments-max", sim.segments_max)->check(CLI::PositiveNumber);
    simulate->add_option("--dim", sim.dim)->check(CLI::Range(2, 1 << 16));
    simulate->add_option("--duration", sim.segment_duration, "segment duration in seconds")->check(CLI::PositiveNumber);
    simulate->add_option("--concentration", sim.concentration, "within-speaker concentration")->check(CLI::PositiveNumber);
    simulate->add_option("--centroid-cap", sim.centroid_max_cosine, "max cosine between speaker centroids");
    add_seed(simulate);

    // train
    TrainConfig tc;
    std::string manifest, model_path = "model.gnn", loss_csv = "loss.csv", out_dir, dims_text = "128,128,128";
    std::string loss_name = "hist", scorer_name = "cosine", thresholds_text = "0.5:10:0.25";
    int cv_folds = 0;
    bool every_epoch = false;
    auto* train_cmd = app.add_subcommand("train", "train the embedding refiner");
    train_cmd->add_option("--manifest", manifest, "training corpus manifest")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--out-model", model_path, "checkpoint path");
    train_cmd->add_option("--loss-csv", loss_csv, "per-epoch loss table");
    train_cmd->add_option("--epochs", tc.epochs)->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--lr", tc.lr, "initial learning rate")->check(CLI::PositiveNumber);
    train_cmd->add_option("--lr-drop-epoch", tc.lr_drop_epoch)->check(CLI::PositiveNumber);
    train_cmd->add_option("--lr-drop-factor", tc.lr_drop_factor)->check(CLI::PositiveNumber);
    train_cmd->add_option("--edge-threshold", tc.edge_threshold)->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--loss", loss_name, "hist (histogram + alpha * nuclear) or bce")
        ->check(CLI::IsMember({"hist", "bce"}));
    train_cmd->add_option("--alpha", tc.loss.alpha)->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--bins", tc.loss.bins)->check(CLI::Range(2, 1 << 20));
    train_cmd->add_option("--scorer", scorer_name)->check(CLI::IsMember({"cosine", "fc"}));
    train_cmd->add_option("--dims", dims_text, "comma-separated layer dimension chain");
    train_cmd->add_option("--folds", cv_folds, "run k-fold cross validation (0 = train on everything)")
        ->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--out-dir", out_dir, "directory for per-fold outputs");
    train_cmd->add_option("--thresholds", thresholds_text, "count-threshold candidates lo:hi:step or a,b,c");
    train_cmd->add_flag("--checkpoint-every-epoch", every_epoch, "also write <model>.epochN after each epoch");
    add_seed(train_cmd);

    // refine
    std::string refine_out;
    auto* refine_cmd = app.add_subcommand("refine", "write refined embeddings for a corpus");
    refine_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
    refine_cmd->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
    refine_cmd->add_option("--out", refine_out, "output directory")->required();
    refine_cmd->add_option("--edge-threshold", tc.edge_threshold)->check(CLI::NonNegativeNumber);

    // diarize
    DiarizeConfig dc;
    std::string method_name = "threshold", diar_model, rttm_dir;
    auto* diarize_cmd = app.add_subcommand("diarize", "cluster every session and write RTTM files");
    diarize_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
    diarize_cmd->add_option("--model", diar_model, "refiner checkpoint; omit for the original-embedding baseline")
        ->check(CLI::ExistingFile);
    diarize_cmd->add_option("--out", rttm_dir, "RTTM output directory")->required();
    diarize_cmd->add_option("--method", method_name)->check(CLI::IsMember({"threshold", "eigengap"}));
    diarize_cmd->add_option("--count-threshold", dc.count_threshold)->check(CLI::PositiveNumber);
    diarize_cmd->add_option("--edge-threshold", dc.edge_threshold)->check(CLI::NonNegativeNumber);
    diarize_cmd->add_option("--max-speakers", dc.max_speakers)->check(CLI::PositiveNumber);
    add_seed(diarize_cmd);

    // score
    std::string report_path, report_csv_path;
    auto* score_cmd = app.add_subcommand("score", "confusion-only DER and count error of RTTM hypotheses");
    score_cmd->add_option("--manifest", manifest, "reference corpus")->required()->check(CLI::ExistingFile);
    score_cmd->add_option("--rttm-dir", rttm_dir)->required()->check(CLI::ExistingDirectory);
    score_cmd->add_option("--report", report_path, "plain-text report path (default stdout)");
    score_cmd->add_option("--csv", report_csv_path, "per-session CSV path");

    // sweep
    std::string sweep_out, sweep_model;
    auto* sweep_cmd = app.add_subcommand("sweep", "mean speaker-count error per eigenvalue threshold");
    sweep_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
    sweep_cmd->add_option("--model", sweep_model, "adds a refined curve")->check(CLI::ExistingFile);
    sweep_cmd->add_option("--thresholds", thresholds_text, "lo:hi:step or a,b,c");
    sweep_cmd->add_option("--edge-threshold", dc.edge_threshold)->check(CLI::NonNegativeNumber);
    sweep_cmd->add_option("--out", sweep_out, "CSV path (default stdout)");

    // gradcheck
    int instances = 20;
    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference check of every analytic gradient");
    gradcheck_cmd->add_option("--instances", instances)->check(CLI::PositiveNumber);
    add_seed(gradcheck_cmd);

    std::vector<std::string> args;
    try {
        args = expand_config(argc, argv);
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    } catch (const UsageFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (*simulate) {
            sim.seed = seed;
            try {
                sim.check();
            } catch (const ConfigError& e) {
                throw UsageFailure(e.what());
            }
            const auto sessions = simulate_corpus(sim, sim_out);
            std::cout << "wrote " << sessions.size() << " sessions to " << sim_out << "\n";
            return kExitOk;
        }

        if (*train_cmd) {
            tc.seed = seed;
            tc.loss.kind = loss_name == "bce" ? LossKind::bce : LossKind::hist_plus_nuclear;
            tc.scorer = scorer_name == "fc" ? ScorerKind::fc_pair : ScorerKind::cosine;
            tc.dims = parse_dims(dims_text);
            if (cv_folds > 0) tc.folds = cv_folds;
            const auto candidates = parse_thresholds(thresholds_text);
            try {
                tc.check();
            } catch (const ConfigError& e) {
                throw UsageFailure(e.what());
            }
            const auto corpus = load_corpus(manifest);
            if (corpus.empty()) throw TrainingError("manifest lists no sessions");

            if (cv_folds == 0) {
                const auto examples = make_examples(corpus);
                EpochCallback cb;
                if (every_epoch)
                    cb = [&](int epoch, const RefinerModel& m) {
                        save_checkpoint(m, model_path + ".epoch" + std::to_string(epoch));
                    };
                const auto result = train(examples, tc, cb);
                save_checkpoint(result.model, model_path);
                write_text(loss_csv, train_report_csv(result.report, tc));
                const auto tau = tune_count_threshold(&result.model, corpus, candidates, tc.edge_threshold);
                std::printf("trained %zu sessions (%zu skipped), checksum %016llx, tuned count threshold %.4f\n",
                            corpus.size() - result.report.skipped_sessions, result.report.skipped_sessions,
                            static_cast<unsigned long long>(result.report.checksum), tau);
                return kExitOk;
            }

            const fs::path dir = out_dir.empty() ? fs::path(".") : fs::path(out_dir);
            ensure_dir(dir);
            const auto splits = kfold_split(corpus.size(), cv_folds, substream(seed, "folds"));
            std::vector<SessionRecord> all_records;
            for (std::size_t f = 0; f < splits.size(); ++f) {
                const auto val = validation_split(splits[f].train, 0.1, substream(seed, "validation", f));
                std::vector<EmbeddingMatrix> fit, valid, test;
                for (auto i : val.train) fit.push_back(corpus[i]);
                for (auto i : val.test) valid.push_back(corpus[i]);
                for (auto i : splits[f].test) test.push_back(corpus[i]);
                TrainConfig fold_cfg = tc;
                fold_cfg.seed = substream(seed, "fold", f);
                const auto examples = make_examples(fit);
                const auto result = train(examples, fold_cfg);
                const std::string stem = "fold" + std::to_string(f);
                save_checkpoint(result.model, (dir / (stem + ".gnn")).string());
                write_text(dir / (stem + "_loss.csv"), train_report_csv(result.report, fold_cfg));
                DiarizeConfig fold_dc;
                fold_dc.edge_threshold = tc.edge_threshold;
                fold_dc.seed = substream(seed, "cluster", f);
                fold_dc.count_threshold = tune_count_threshold(&result.model, valid, candidates, tc.edge_threshold);
                const auto report = evaluate_corpus(test, &result.model, fold_dc);
                write_text(dir / (stem + "_report.csv"), report_csv(report));
                std::printf("fold %zu: threshold %.4f  DER %.4f  count_error %.4f\n", f, fold_dc.count_threshold,
                            report.der, report.count_error_mean);
                all_records.insert(all_records.end(), report.sessions.begin(), report.sessions.end());
            }
            const auto overall = aggregate(std::move(all_records));
            write_text(dir / "cv_report.csv", report_csv(overall));
            std::printf("cross-validated DER %.4f  count_error %.4f\n", overall.der, overall.count_error_mean);
            return kExitOk;
        }

        if (*refine_cmd) {
            const auto model = load_checkpoint(model_path);
            const auto entries = read_manifest(manifest);
            ensure_dir(refine_out);
            std::vector<ManifestEntry> out_entries;
            for (const auto& e : entries) {
                auto m = load_embeddings(e.path);
                if (m.rows() > 0) {
                    if (m.cols() != model.input_dim())
                        throw ConfigError("'" + e.path + "' has dim " + std::to_string(m.cols()) +
                                          ", model expects " + std::to_string(model.input_dim()));
                    m.values = refine(model, build_cosine_graph(m.values, tc.edge_threshold));
                }
                const std::string file = fs::path(e.path).filename().string();
                save_embeddings(m, (fs::path(refine_out) / file).string());
                out_entries.push_back({file, e.speakers, e.segments});
            }
            write_manifest(out_entries, (fs::path(refine_out) / kManifestName).string());
            std::cout << "refined " << entries.size() << " sessions into " << refine_out << "\n";
            return kExitOk;
        }

        if (*diarize_cmd) {
            dc.method = method_name == "eigengap" ? CountMethod::eigengap : CountMethod::threshold;
            dc.seed = substream(seed, "cluster");
            const auto corpus = load_corpus(manifest);
            const auto model = load_optional_model(diar_model, corpus);
            ensure_dir(rttm_dir);
            for (std::size_t i = 0; i < corpus.size(); ++i) {
                const auto hyp = diarize(corpus[i].values, model ? &*model : nullptr, dc);
                write_rttm(hyp, corpus[i].meta, (fs::path(rttm_dir) / (session_of(corpus[i], i) + ".rttm")).string());
            }
            std::cout << "diarized " << corpus.size() << " sessions into " << rttm_dir << "\n";
            return kExitOk;
        }

        if (*score_cmd) {
            const auto corpus = load_corpus(manifest);
            std::vector<SessionRecord> records;
            for (std::size_t i = 0; i < corpus.size(); ++i) {
                const std::string id = session_of(corpus[i], i);
                const fs::path rttm = fs::path(rttm_dir) / (id + ".rttm");
                if (!fs::exists(rttm)) throw IoError("no hypothesis for session '" + id + "' (" + rttm.string() + ")");
                const auto segs = read_rttm(rttm.string());
                if (segs.size() != static_cast<std::size_t>(corpus[i].rows()))
                    throw ParseError("hypothesis for '" + id + "' has " + std::to_string(segs.size()) +
                                         " segments, reference has " + std::to_string(corpus[i].rows()),
                                     0);
                DiarizationHypothesis hyp;
                for (const auto& s : segs) hyp.labels.push_back(s.label);
                records.push_back(score_session(corpus[i], hyp));
            }
            const auto report = aggregate(std::move(records));
            if (report_path.empty())
                std::cout << format_report(report);
            else
                write_text(report_path, format_report(report));
            if (!report_csv_path.empty()) write_text(report_csv_path, report_csv(report));
            return kExitOk;
        }

        if (*sweep_cmd) {
            const auto thresholds = parse_thresholds(thresholds_text);
            const auto corpus = load_corpus(manifest);
            if (corpus.empty()) throw UsageFailure("manifest lists no sessions");
            const auto model = load_optional_model(sweep_model, corpus);
            std::vector<std::pair<std::string, std::vector<SweepPoint>>> curves;
            curves.emplace_back("original", count_error_sweep(corpus, nullptr, thresholds, dc.edge_threshold));
            if (model) curves.emplace_back("refined", count_error_sweep(corpus, &*model, thresholds, dc.edge_threshold));
            const auto csv = sweep_csv(curves);
            if (sweep_out.empty())
                std::cout << csv;
            else
                write_text(sweep_out, csv);
            return kExitOk;
        }

        if (*gradcheck_cmd) {
            double worst = 0.0;
            std::size_t checked = 0;
            for (const auto& c : gradcheck_suite(instances, substream(seed, "gradcheck"))) {
                const auto r = check_pipeline_gradients(c);
                worst = std::max(worst, r.max_rel_error);
                checked += r.parameters_checked;
            }
            std::printf("checked %zu parameter gradients, max relative error %.3e\n", checked, worst);
            return worst < 1e-4 ? kExitOk : kExitFailure;
        }
    } catch (const UsageFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}
