#pragma once

// Command-line driver: ingestion, label model, scoring, selection, training
// and reports. `run` is the whole program; tools/wsselect.cpp only forwards
// argv to it.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "wsselect/data_model.hpp"
#include "wsselect/end_model.hpp"
#include "wsselect/error.hpp"
#include "wsselect/format.hpp"
#include "wsselect/label_models.hpp"
#include "wsselect/neighbor_graph.hpp"
#include "wsselect/selectors.hpp"
#include "wsselect/synth_theory.hpp"

namespace wss::cli {

enum class LabelModelKind { MajorityVote, DawidSkene };

struct RunConfig {
    std::string subcommand;
    LabelModelKind label_model = LabelModelKind::MajorityVote;
    SelectorMethod selector = SelectorMethod::Cut;
    std::size_t k = 20;
    std::vector<double> betas = default_betas();
    bool symmetric_graph = false;
    bool stratified = false;
    std::vector<double> prior;  // required with stratified
    std::uint64_t seed = 0;
    int num_classes = 2;

    std::string labels_path, embeddings_path;
    std::string train_gold_path, val_embeddings_path, val_gold_path, test_embeddings_path, test_gold_path;
    std::string output_path, summary_path, graph_path;

    TrainConfig train;
    TwoViewConfig synth;
    double tolerance = 0.01;
    bool tradeoff = false;
    std::size_t tradeoff_seeds = 10;
};

inline const char* to_string(LabelModelKind k) { return k == LabelModelKind::MajorityVote ? "mv" : "ds"; }

inline nlohmann::json config_json(const RunConfig& c) {
    nlohmann::json j;
    j["subcommand"] = c.subcommand;
    j["seed"] = c.seed;
    if (c.subcommand == "synth-verify") {
        j["synth"] = to_json(c.synth);
        j["tolerance"] = c.tolerance;
        j["tradeoff"] = c.tradeoff;
        if (c.tradeoff) j["tradeoff_seeds"] = c.tradeoff_seeds;
        return j;
    }
    j["label_model"] = to_string(c.label_model);
    j["selector"] = to_string(c.selector);
    j["k"] = c.k;
    if (c.subcommand != "score") j["betas"] = c.betas;
    j["symmetric_graph"] = c.symmetric_graph;
    j["stratified"] = c.stratified;
    if (c.stratified && !c.prior.empty()) j["prior"] = c.prior;
    j["classes"] = c.num_classes;
    j["labels"] = c.labels_path;
    j["embeddings"] = c.embeddings_path;
    if (c.subcommand == "sweep") {
        j["train"] = {{"batch", c.train.batch}, {"epochs", c.train.epochs}, {"l2", c.train.l2},
                      {"lr", c.train.lr},           {"standardize", c.train.standardize}};
        j["train_gold"] = c.train_gold_path;
        j["val_embeddings"] = c.val_embeddings_path;
        j["val_gold"] = c.val_gold_path;
        j["test_embeddings"] = c.test_embeddings_path;
        j["test_gold"] = c.test_gold_path;
    }
    return j;
}

inline std::string config_line(const RunConfig& c) { return "# config=" + config_json(c).dump() + '\n'; }

namespace detail {

inline void emit(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty() || path == "-")
        out << text;
    else
        wss::detail::write_file(path, text);
}

struct Inputs {
    EmbeddingMatrix embeddings;
    PseudoLabeling pseudo;
    std::optional<DawidSkeneModel> ds;
};

inline Inputs load_inputs(const RunConfig& c) {
    Dataset d;
    d.labels = load_label_matrix(c.labels_path, c.num_classes);
    d.embeddings = load_embeddings(c.embeddings_path);
    validate_dataset(d);
    Inputs in;
    in.embeddings = std::move(d.embeddings);
    if (c.label_model == LabelModelKind::MajorityVote) {
        in.pseudo = majority_vote(d.labels);
    } else {
        DawidSkeneOptions o;
        o.seed = c.seed;
        in.ds = dawid_skene_fit(d.labels, o);
        in.pseudo = dawid_skene_posteriors(*in.ds, d.labels);
    }
    return in;
}

inline SelectorConfig selector_config(const RunConfig& c, const PseudoLabeling& p) {
    SelectorConfig s;
    s.method = c.selector;
    s.k = c.k;
    s.symmetric_graph = c.symmetric_graph;
    if (c.stratified) {
        if (c.prior.empty()) throw ParameterError("--stratified needs --prior");
        if (c.prior.size() != static_cast<std::size_t>(p.num_classes))
            throw ParameterError("--prior needs " + std::to_string(p.num_classes) + " entries");
        s.stratified_prior = c.prior;
    }
    return s;
}

inline void check_betas(const std::vector<double>& betas) {
    if (betas.empty()) throw ParameterError("no beta values given");
    for (double b : betas)
        if (!(b > 0.0 && b <= 1.0)) throw ParameterError("beta must lie in (0, 1], got " + format_double(b));
}

inline int cmd_score(const RunConfig& c, std::ostream& out) {
    const auto in = load_inputs(c);
    const auto sc = selector_config(c, in.pseudo);
    if (!c.graph_path.empty()) {
        auto g = knn_brute_force(in.embeddings, covered_indices(in.pseudo), c.k);
        if (c.symmetric_graph) g = symmetrize(g);
        emit(c.graph_path, config_line(c) + graph_csv(g), out);
    }
    const auto ranked = rank_examples(in.embeddings, in.pseudo, sc);
    std::vector<std::size_t> rank_of(ranked.scores.size());
    for (std::size_t r = 0; r < ranked.order.size(); ++r) rank_of[ranked.order[r]] = r;
    std::string text = config_line(c) + "example_index,pseudolabel,score,rank\n";
    for (std::size_t pos = 0; pos < ranked.scores.size(); ++pos) {
        const std::size_t id = ranked.example_ids[pos];
        text += std::to_string(id) + ',' + std::to_string(in.pseudo.hard[id]) + ',' + format_double(ranked.scores[pos]) +
                ',' + std::to_string(rank_of[pos]) + '\n';
    }
    emit(c.output_path, text, out);
    return 0;
}

inline int cmd_select(const RunConfig& c, std::ostream& out) {
    check_betas(c.betas);
    const auto in = load_inputs(c);
    const auto sc = selector_config(c, in.pseudo);
    const auto ranked = rank_examples(in.embeddings, in.pseudo, sc);
    std::vector<ScoredSelection> per_beta;
    for (double b : c.betas) per_beta.push_back(select_at(ranked, in.pseudo, b, sc));
    emit(c.output_path, config_line(c) + scores_csv(per_beta), out);
    return 0;
}

inline int cmd_sweep(const RunConfig& c, std::ostream& out) {
    check_betas(c.betas);
    if (c.val_embeddings_path.empty() || c.val_gold_path.empty())
        throw PreconditionError("sweep needs --val-embeddings and --val-gold to choose beta");
    const auto in = load_inputs(c);
    const auto val_emb = load_embeddings(c.val_embeddings_path);
    const auto val_gold = load_gold(c.val_gold_path, c.num_classes);
    if (val_emb.n() != val_gold.size()) throw DimensionError("validation embeddings and gold differ in length");
    if (val_emb.dim() != in.embeddings.dim()) throw DimensionError("validation embeddings have a different width");
    std::optional<EmbeddingMatrix> test_emb;
    std::optional<std::vector<int>> test_gold;
    if (!c.test_embeddings_path.empty() || !c.test_gold_path.empty()) {
        if (c.test_embeddings_path.empty() || c.test_gold_path.empty())
            throw ParameterError("--test-embeddings and --test-gold go together");
        test_emb = load_embeddings(c.test_embeddings_path);
        test_gold = load_gold(c.test_gold_path, c.num_classes);
        if (test_emb->n() != test_gold->size()) throw DimensionError("test embeddings and gold differ in length");
        if (test_emb->dim() != in.embeddings.dim()) throw DimensionError("test embeddings have a different width");
    }
    std::optional<std::vector<int>> train_gold;
    if (!c.train_gold_path.empty()) {
        train_gold = load_gold(c.train_gold_path, c.num_classes);
        if (train_gold->size() != in.pseudo.n()) throw DimensionError("train gold and label matrix differ in length");
    }

    TrainConfig tc = c.train;
    tc.seed = c.seed;
    const auto table = beta_sweep(in.embeddings, in.pseudo, train_gold ? &*train_gold : nullptr, {&val_emb, &val_gold},
                                  {test_emb ? &*test_emb : nullptr, test_gold ? &*test_gold : nullptr},
                                  selector_config(c, in.pseudo), c.betas, tc);
    emit(c.output_path, config_line(c) + sweep_csv(table), out);
    if (!c.summary_path.empty()) {
        auto summary = to_json(table);
        summary["config"] = config_json(c);
        if (in.ds) summary["label_model"] = to_json(*in.ds);
        emit(c.summary_path, summary.dump(2) + '\n', out);
    }
    return 0;
}

inline int cmd_synth_verify(const RunConfig& c, std::ostream& out, std::ostream& err) {
    if (c.synth.boundary_noise)
        throw ParameterError("synth-verify checks the independence regime; boundary noise is not supported");
    const auto classifier = random_linear_classifier(c.synth.view1_dim, mix_seed(c.seed, 0));
    const auto check = verify_lemma(c.synth, classifier, mix_seed(c.seed, 1));
    nlohmann::json report;
    report["config"] = config_json(c);
    report["lemma"] = {{"alpha_hat", check.noise.alpha_hat},
                       {"gamma_hat", check.noise.gamma_hat},
                       {"gap", check.gap},
                       {"measured", check.measured},
                       {"on_pseudo", check.on_pseudo},
                       {"passed", check.gap <= c.tolerance},
                       {"predicted", check.predicted}};
    if (c.tradeoff) {
        const std::vector<TradeoffPoint> points{{1.0, c.synth.alpha, c.synth.gamma},
                                                {0.5, c.synth.alpha / 2.0, c.synth.gamma / 2.0}};
        TradeoffOptions o;
        o.seeds = c.tradeoff_seeds;
        const auto rows = tradeoff_curve(c.synth, points, mix_seed(c.seed, 2), o);
        nlohmann::json jr = nlohmann::json::array();
        for (const auto& r : rows)
            jr.push_back({{"alpha", r.point.alpha},
                          {"bound_driver", r.bound_driver},
                          {"coverage", r.point.coverage},
                          {"gamma", r.point.gamma},
                          {"mean_test_bal_err", r.mean_test_bal_err},
                          {"std_test_bal_err", r.std_test_bal_err}});
        report["tradeoff"] = std::move(jr);
    }
    emit(c.output_path, report.dump(2) + '\n', out);
    if (check.gap > c.tolerance) {
        err << "error: lemma gap " << format_double(check.gap) << " exceeds tolerance " << format_double(c.tolerance)
            << '\n';
        return static_cast<int>(ErrorKind::Numeric);
    }
    return 0;
}

inline constexpr const char* kFormats = R"(Inputs:
  label matrix   CSV, one row per example, one column per labeling function;
                 entries are class indices 0..C-1 or -1 for abstain
  embeddings     CSV of floats, or binary: "WSEMB1\0\0", uint32 n, uint32 d,
                 n*d float32, all little-endian
  gold           one class index per line

Outputs (CSV files start with a "# config=<json>" line):
  score          example_index,pseudolabel,score,rank
  select         example_index,score,rank,selected_at_<beta>...
  sweep          beta,n_selected,subset_label_accuracy,val_accuracy,test_accuracy,balanced_error
  --graph-out    src,dst,weight
  synth-verify   JSON report with config, lemma and optional tradeoff

Lower scores are better for both selectors. Missing values print as "nan".
Threads: WSSELECT_THREADS (default: hardware concurrency). Output does not
depend on the thread count.

Exit codes: 0 success, 1 usage error, 2 data or format error,
3 numeric or degenerate error.)";

}  // namespace detail

// Parses argv and runs one subcommand. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    RunConfig c;
    CLI::App app{"Weak-supervision subset selection with the cut statistic", "wsselect"};
    app.footer(detail::kFormats);
    app.require_subcommand(1);

    std::string label_model_name = "mv", selector_name = "cut";

    auto add_pipeline = [&](CLI::App* sub, bool betas) {
        sub->add_option("--labels", c.labels_path, "label matrix CSV")->required()->check(CLI::ExistingFile);
        sub->add_option("--embeddings", c.embeddings_path, "embedding matrix (CSV or binary)")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--classes", c.num_classes, "number of classes")->capture_default_str()->check(CLI::Range(2, 1 << 20));
        sub->add_option("--label-model", label_model_name, "mv or ds")
            ->check(CLI::IsMember({"mv", "ds"}))
            ->capture_default_str();
        sub->add_option("--selector", selector_name, "cut or entropy")
            ->check(CLI::IsMember({"cut", "entropy"}))
            ->capture_default_str();
        sub->add_option("--k", c.k, "nearest neighbors per example")->capture_default_str()->check(CLI::PositiveNumber);
        sub->add_flag("--symmetric-graph", c.symmetric_graph, "use the union of neighbor relations");
        sub->add_flag("--stratified", c.stratified, "select per pseudolabel class");
        sub->add_option("--prior", c.prior, "class prior for --stratified, e.g. 0.5,0.5")
            ->delimiter(',');
        sub->add_option("--seed", c.seed, "random seed")->capture_default_str();
        sub->add_option("-o,--output", c.output_path, "output CSV (default: stdout)");
        if (betas) {
            auto* b = sub->add_option("--betas", c.betas, "comma-separated beta grid")->delimiter(',');
            b->default_str("0.1,...,1.0");
            sub->add_option("--beta", c.betas, "single beta")->excludes(b);
        }
    };

    auto* score = app.add_subcommand("score", "score every covered example");
    add_pipeline(score, false);
    score->add_option("--graph-out", c.graph_path, "also write the neighbor graph");

    auto* select = app.add_subcommand("select", "mark the top-beta subsets");
    add_pipeline(select, true);

    auto* sweep = app.add_subcommand("sweep", "train an end model per beta and pick beta on validation");
    add_pipeline(sweep, true);
    sweep->add_option("--train-gold", c.train_gold_path, "gold labels of the training set")->check(CLI::ExistingFile);
    sweep->add_option("--val-embeddings", c.val_embeddings_path)->required()->check(CLI::ExistingFile);
    sweep->add_option("--val-gold", c.val_gold_path)->required()->check(CLI::ExistingFile);
    sweep->add_option("--test-embeddings", c.test_embeddings_path)->check(CLI::ExistingFile);
    sweep->add_option("--test-gold", c.test_gold_path)->check(CLI::ExistingFile);
    sweep->add_option("--summary", c.summary_path, "JSON summary with the best beta");
    sweep->add_option("--lr", c.train.lr)->capture_default_str()->check(CLI::PositiveNumber);
    sweep->add_option("--l2", c.train.l2)->capture_default_str()->check(CLI::NonNegativeNumber);
    sweep->add_option("--epochs", c.train.epochs)->capture_default_str()->check(CLI::PositiveNumber);
    sweep->add_option("--batch", c.train.batch)->capture_default_str()->check(CLI::PositiveNumber);

    auto* synth = app.add_subcommand("synth-verify", "check the balanced-error identity on synthetic data");
    synth->add_option("--n", c.synth.n)->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--alpha", c.synth.alpha, "P(Y=0 | Yhat=1)")->capture_default_str();
    synth->add_option("--gamma", c.synth.gamma, "P(Y=1 | Yhat=0)")->capture_default_str();
    synth->add_option("--abstain-rate", c.synth.abstain_rate)->capture_default_str();
    synth->add_option("--class-prior", c.synth.class_prior, "P(Y=1)")->capture_default_str();
    synth->add_option("--dim", c.synth.view1_dim)->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--sep", c.synth.cluster_sep, "distance between class means")->capture_default_str();
    synth->add_option("--tolerance", c.tolerance)->capture_default_str();
    synth->add_flag("--tradeoff", c.tradeoff, "also compare full coverage with half coverage at halved noise");
    synth->add_option("--tradeoff-seeds", c.tradeoff_seeds)->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--seed", c.seed)->capture_default_str();
    synth->add_option("-o,--output", c.output_path, "output JSON (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        std::ostringstream o, eo;
        const int code = app.exit(e, o, eo);
        out << o.str();
        err << eo.str();
        return code == 0 ? 0 : static_cast<int>(ErrorKind::Usage);
    }
    c.subcommand = app.get_subcommands().front()->get_name();
    c.label_model = label_model_name == "ds" ? LabelModelKind::DawidSkene : LabelModelKind::MajorityVote;
    c.selector = selector_name == "entropy" ? SelectorMethod::Entropy : SelectorMethod::Cut;

    try {
        if (c.subcommand == "score") return detail::cmd_score(c, out);
        if (c.subcommand == "select") return detail::cmd_select(c, out);
        if (c.subcommand == "sweep") return detail::cmd_sweep(c, out);
        validate(c.synth);
        return detail::cmd_synth_verify(c, out, err);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return static_cast<int>(e.kind());
    } catch (const std::bad_alloc&) {
        err << "error: out of memory\n";
        return static_cast<int>(ErrorKind::Numeric);
    }
}

}  // namespace wss::cli
