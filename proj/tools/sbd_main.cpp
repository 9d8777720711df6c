// Command-line entry point for structural basis distillation experiments:
// dataset generation and splitting, stage-1 distillation, stage-2 inference,
// evaluation, ablations, and sensitivity sweeps. Every command is
// deterministic given its seeds; outputs carry no timestamps.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sbd/distill.hpp"
#include "sbd/errors.hpp"
#include "sbd/graph.hpp"
#include "sbd/infer.hpp"
#include "sbd/motif_gen.hpp"
#include "sbd/stats.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::map<std::string, sbd::MetaMode> kMetaModes{
    {"unrolled", sbd::MetaMode::Unrolled}, {"first_order", sbd::MetaMode::FirstOrder}};

const std::map<std::string, sbd::InnerOpt> kInnerOpts{{"adam", sbd::InnerOpt::Adam},
                                                     {"gd", sbd::InnerOpt::Gd}};

const std::map<std::string, sbd::DensityCriterion> kCriteria{
    {"node", sbd::DensityCriterion::NodeDensity}, {"edge", sbd::DensityCriterion::EdgeDensity}};

struct PipelineOptions {
    std::string source_path;
    std::string target_path;
    std::string out_dir;
    sbd::DistillConfig dcfg;
    sbd::InferConfig icfg;
    std::vector<std::string> ablations;
};

struct GammaOption {
    std::vector<double> values; // empty -> default weights from the target
    void apply(sbd::DistillConfig& d) const {
        if (values.empty()) return;
        if (values.size() != 4)
            throw sbd::invalid_input("--gamma needs exactly 4 values");
        sbd::MomentWeights w;
        for (int i = 0; i < 4; ++i) w.gamma[i] = values[i];
        d.gamma_override = w;
    }
};

void add_gamma_flag(CLI::App* cmd, GammaOption& g) {
    cmd->add_option("--gamma", g.values,
                    "Moment weights (deg_mean deg_std density tri); default derives them "
                    "from the target");
}

void add_distill_flags(CLI::App* cmd, sbd::DistillConfig& d) {
    cmd->add_option("--k", d.k, "Number of prototype graphs")->capture_default_str();
    cmd->add_option("--n-syn", d.n_syn, "Prototype node count (0 = median source size)")
        ->capture_default_str();
    cmd->add_option("--t-inner", d.t_inner, "Inner proxy training steps")->capture_default_str();
    cmd->add_option("--lr-inner", d.lr_inner, "Inner-loop learning rate")->capture_default_str();
    cmd->add_option("--lr-outer", d.lr_outer, "Outer (basis) learning rate")
        ->capture_default_str();
    cmd->add_option("--grad-clip", d.grad_clip, "Outer gradient clip (global norm)")
        ->capture_default_str();
    cmd->add_option("--lambda1", d.lambda1, "Geometric alignment weight")->capture_default_str();
    cmd->add_option("--lambda2", d.lambda2, "Spectral alignment weight")->capture_default_str();
    cmd->add_option("--outer-steps", d.outer_steps, "Outer optimization steps")
        ->capture_default_str();
    cmd->add_option("--batch-source", d.batch_source, "Source batch size")->capture_default_str();
    cmd->add_option("--batch-target", d.batch_target, "Target batch size")->capture_default_str();
    cmd->add_option("--meta-mode", d.meta_mode, "unrolled or first_order")
        ->transform(CLI::CheckedTransformer(kMetaModes, CLI::ignore_case));
    cmd->add_option("--inner-opt", d.inner_opt, "Inner optimizer: adam or gd")
        ->transform(CLI::CheckedTransformer(kInnerOpts, CLI::ignore_case));
    cmd->add_option("--convergence-window", d.convergence_window,
                    "Early-stop window in outer steps (0 disables)")
        ->capture_default_str();
    cmd->add_option("--convergence-tol", d.convergence_tol,
                    "Early-stop relative tolerance on the windowed total loss")
        ->capture_default_str();
    cmd->add_option("--hidden", d.model.hidden, "GIN hidden dimension")->capture_default_str();
    cmd->add_option("--layers", d.model.layers, "GIN layer count")->capture_default_str();
    cmd->add_option("--dropout", d.model.dropout, "Dropout probability")->capture_default_str();
}

void add_infer_flags(CLI::App* cmd, sbd::InferConfig& c, const char* lr_name = "--infer-lr") {
    cmd->add_option("--epochs", c.epochs, "Stage-2 training epochs")->capture_default_str();
    cmd->add_option(lr_name, c.lr, "Stage-2 learning rate")->capture_default_str();
}

sbd::AblationFlags parse_ablations(const std::vector<std::string>& names) {
    sbd::AblationFlags flags;
    for (const std::string& n : names) {
        if (n == "se")
            flags.no_sem = true;
        else if (n == "ge")
            flags.no_geo = true;
        else if (n == "sp")
            flags.no_spec = true;
        else if (n == "tg")
            flags.no_retrain = true;
        else
            throw sbd::invalid_input("unknown ablation: " + n);
    }
    return flags;
}

sbd::DomainDataset load_dataset_checked(const std::string& path, bool require_labels) {
    sbd::DomainDataset ds = sbd::load_jsonl(path);
    if (ds.empty()) throw sbd::invalid_input(path + ": dataset is empty");
    if (require_labels) {
        for (const auto& g : ds.graphs)
            if (!g.label) throw sbd::invalid_input(path + ": dataset has unlabeled graphs");
    }
    return ds;
}

json moment_row(const sbd::DenseGraph& g) {
    sbd::MomentVector m = sbd::moments(g);
    json j;
    j["n"] = g.n;
    j["deg_mean"] = m.deg_mean;
    j["deg_std"] = m.deg_std;
    j["density"] = m.density;
    j["tri"] = m.tri;
    j["omega"] = sbd::dirichlet_energy(g);
    return j;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    double m = mean_of(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

/// One pipeline (or source-only baseline) run for one root seed; writes
/// basis/trace/model/report files into out_dir with a per-seed suffix.
sbd::EvalReport run_one_seed(const PipelineOptions& opt, const sbd::DomainDataset& source,
                             const sbd::DomainDataset& target, std::uint64_t seed, bool baseline,
                             const std::string& suffix) {
    fs::create_directories(opt.out_dir);
    sbd::DistillConfig dcfg = opt.dcfg;
    dcfg.seed = seed;
    sbd::InferConfig icfg = opt.icfg;
    icfg.seed = sbd::sub_seed(seed, "infer");

    if (baseline) {
        sbd::GinParams model = sbd::train_source_only(source, dcfg.model, icfg);
        sbd::save_params(model, (fs::path(opt.out_dir) / ("model" + suffix + ".json")).string());
        sbd::EvalReport rep = sbd::evaluate(model, target);
        sbd::write_json_file(sbd::eval_report_to_json(rep),
                             (fs::path(opt.out_dir) / ("report" + suffix + ".json")).string());
        return rep;
    }

    sbd::AblationFlags flags = parse_ablations(opt.ablations);
    sbd::PipelineArtifacts art;
    try {
        art = sbd::run_pipeline(source, target, dcfg, icfg, flags);
    } catch (const sbd::distill_diverged& e) {
        e.trace.save_csv((fs::path(opt.out_dir) / ("trace" + suffix + ".csv")).string());
        throw std::runtime_error(std::string(e.what()) + " (trace dumped)");
    }
    sbd::save_basis(art.distill_result.basis,
                    (fs::path(opt.out_dir) / ("basis" + suffix + ".json")).string());
    art.distill_result.trace.save_csv(
        (fs::path(opt.out_dir) / ("trace" + suffix + ".csv")).string());
    sbd::save_params(art.model, (fs::path(opt.out_dir) / ("model" + suffix + ".json")).string());
    sbd::write_json_file(sbd::eval_report_to_json(art.report),
                         (fs::path(opt.out_dir) / ("report" + suffix + ".json")).string());
    return art.report;
}

json aggregate_reports(const std::vector<std::uint64_t>& seeds,
                       const std::vector<sbd::EvalReport>& reports) {
    json agg;
    json per_seed = json::array();
    std::vector<double> accs;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        json r;
        r["seed"] = seeds[i];
        r["accuracy"] = reports[i].accuracy;
        if (reports[i].auc)
            r["auc"] = *reports[i].auc;
        else
            r["auc"] = nullptr;
        per_seed.push_back(std::move(r));
        accs.push_back(reports[i].accuracy);
    }
    agg["per_seed"] = std::move(per_seed);
    agg["n_seeds"] = seeds.size();
    agg["accuracy_mean"] = mean_of(accs);
    agg["accuracy_std"] = std_of(accs);
    return agg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Structural basis distillation for graph domain adaptation"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from an INI config file (flags win)");

    // ---- generate ----
    struct {
        std::string out;
        int n_graphs = 300;
        double bias = 0.9;
        double target_bias = 1.0 / 3.0;
        std::uint64_t seed = 0;
    } gen;
    {
        CLI::App* cmd = app.add_subcommand(
            "generate", "Write a biased source and an unbiased target motif dataset");
        cmd->add_option("--out", gen.out, "Output directory")->required();
        cmd->add_option("--n-graphs", gen.n_graphs, "Graphs per dataset")->capture_default_str();
        cmd->add_option("--bias", gen.bias, "Source base/label correlation")
            ->capture_default_str();
        cmd->add_option("--target-bias", gen.target_bias, "Target base/label correlation")
            ->capture_default_str();
        cmd->add_option("--seed", gen.seed, "Root seed")->capture_default_str();
        cmd->callback([&] {
            fs::create_directories(gen.out);
            std::uint64_t data = sbd::sub_seed(gen.seed, "data");
            sbd::DomainDataset src = sbd::generate_spurious_motif(
                gen.n_graphs, gen.bias, sbd::sub_seed(data, std::uint64_t{0}), "source");
            sbd::DomainDataset tgt = sbd::generate_spurious_motif(
                gen.n_graphs, gen.target_bias, sbd::sub_seed(data, std::uint64_t{1}), "target");
            sbd::save_jsonl(src, (fs::path(gen.out) / "source.jsonl").string());
            sbd::save_jsonl(tgt, (fs::path(gen.out) / "target.jsonl").string());
            std::cout << "wrote " << (fs::path(gen.out) / "source.jsonl").string() << " and "
                      << (fs::path(gen.out) / "target.jsonl").string() << "\n";
        });
    }

    // ---- split ----
    struct {
        std::string input, out;
        sbd::DensityCriterion criterion = sbd::DensityCriterion::NodeDensity;
        int bins = 4;
    } split;
    {
        CLI::App* cmd =
            app.add_subcommand("split", "Partition a dataset into density-ordered domains");
        cmd->add_option("--input", split.input, "Input JSONL dataset")->required();
        cmd->add_option("--out", split.out, "Output directory")->required();
        cmd->add_option("--criterion", split.criterion, "node or edge")
            ->transform(CLI::CheckedTransformer(kCriteria, CLI::ignore_case));
        cmd->add_option("--bins", split.bins, "Number of domains")->capture_default_str();
        cmd->callback([&] {
            sbd::DomainDataset ds = load_dataset_checked(split.input, false);
            sbd::SplitSpec spec;
            spec.criterion = split.criterion;
            spec.num_bins = split.bins;
            auto bins = sbd::split_by_density(ds, spec);
            fs::create_directories(split.out);
            for (const auto& b : bins) {
                auto path = fs::path(split.out) / (b.name + ".jsonl");
                sbd::save_jsonl(b, path.string());
                std::cout << b.name << ": " << b.size() << " graphs -> " << path.string() << "\n";
            }
        });
    }

    // ---- stats ----
    struct {
        std::string input, out;
    } stats;
    {
        CLI::App* cmd =
            app.add_subcommand("stats", "Print per-graph moments and Dirichlet energy as JSON");
        cmd->add_option("--input", stats.input, "Input JSONL dataset")->required();
        cmd->add_option("--out", stats.out, "Also write the JSON here");
        cmd->callback([&] {
            sbd::DomainDataset ds = load_dataset_checked(stats.input, false);
            json out;
            json rows = json::array();
            double acc[5] = {0, 0, 0, 0, 0};
            for (std::size_t i = 0; i < ds.size(); ++i) {
                json row = moment_row(ds.graphs[i]);
                row["index"] = i;
                acc[0] += row["deg_mean"].get<double>();
                acc[1] += row["deg_std"].get<double>();
                acc[2] += row["density"].get<double>();
                acc[3] += row["tri"].get<double>();
                acc[4] += row["omega"].get<double>();
                rows.push_back(std::move(row));
            }
            out["graphs"] = std::move(rows);
            const double n = static_cast<double>(ds.size());
            out["mean"] = {{"deg_mean", acc[0] / n}, {"deg_std", acc[1] / n},
                           {"density", acc[2] / n}, {"tri", acc[3] / n},
                           {"omega", acc[4] / n}};
            std::cout << out.dump(2) << "\n";
            if (!stats.out.empty()) sbd::write_json_file(out, stats.out);
        });
    }

    // ---- distill ----
    struct {
        std::string source, target, out, export_binarized;
        sbd::DistillConfig dcfg;
        GammaOption gamma;
        bool ablate_se = false;
    } dist;
    {
        CLI::App* cmd =
            app.add_subcommand("distill", "Stage 1: distill a target-aligned structural basis");
        cmd->add_option("--source", dist.source, "Labeled source JSONL")->required();
        cmd->add_option("--target", dist.target, "Unlabeled target JSONL")->required();
        cmd->add_option("--out", dist.out, "Output directory")->required();
        cmd->add_option("--seed", dist.dcfg.seed, "Root seed")->capture_default_str();
        cmd->add_flag("--ablate-se", dist.ablate_se, "Drop the semantic term");
        cmd->add_option("--export-binarized", dist.export_binarized,
                        "Also export 0.5-thresholded prototypes to this JSONL");
        add_distill_flags(cmd, dist.dcfg);
        add_gamma_flag(cmd, dist.gamma);
        cmd->callback([&] {
            sbd::DomainDataset src = load_dataset_checked(dist.source, true);
            sbd::DomainDataset tgt = load_dataset_checked(dist.target, false);
            dist.dcfg.ablate_sem = dist.ablate_se;
            dist.gamma.apply(dist.dcfg);
            fs::create_directories(dist.out);
            sbd::DistillResult res;
            try {
                res = sbd::distill(src, tgt, dist.dcfg);
            } catch (const sbd::distill_diverged& e) {
                e.trace.save_csv((fs::path(dist.out) / "trace.csv").string());
                throw std::runtime_error(std::string(e.what()) + " (trace dumped)");
            }
            sbd::save_basis(res.basis, (fs::path(dist.out) / "basis.json").string());
            res.trace.save_csv((fs::path(dist.out) / "trace.csv").string());
            sbd::save_params(res.final_proxy, (fs::path(dist.out) / "proxy.json").string());
            if (!dist.export_binarized.empty()) {
                sbd::DomainDataset bin;
                bin.name = "binarized-basis";
                bin.num_classes = res.basis.creation_config["model"]["num_classes"].get<int>();
                bin.feature_dim = res.basis.prototypes.front().feat_params.cols();
                for (const auto& p : res.basis.prototypes)
                    bin.graphs.push_back(sbd::realize_thresholded(p));
                sbd::save_jsonl(bin, dist.export_binarized);
            }
            const auto& last = res.trace.records.back();
            std::cout << "distilled " << res.basis.k() << " prototypes in "
                      << res.trace.records.size() << " outer steps; final total loss "
                      << last.total << "\n";
        });
    }

    // ---- train-infer ----
    struct {
        std::string basis, out;
        std::uint64_t seed = 0;
        sbd::InferConfig icfg;
    } ti;
    {
        CLI::App* cmd = app.add_subcommand(
            "train-infer", "Stage 2: train a fresh classifier from a basis checkpoint only");
        cmd->add_option("--basis", ti.basis, "Basis checkpoint")->required();
        cmd->add_option("--out", ti.out, "Output directory")->required();
        cmd->add_option("--seed", ti.seed, "Root seed (stage-2 stream is derived from it)")
            ->capture_default_str();
        add_infer_flags(cmd, ti.icfg, "--lr");
        cmd->callback([&] {
            sbd::BasisSet basis = sbd::load_basis(ti.basis);
            if (!basis.creation_config.contains("model"))
                throw sbd::invalid_input(ti.basis + ": checkpoint lacks a model config snapshot");
            sbd::ModelConfig mcfg = sbd::model_config_from_json(basis.creation_config["model"]);
            ti.icfg.seed = sbd::sub_seed(ti.seed, "infer");
            sbd::GinParams model = sbd::retrain_fresh(basis, ti.icfg, mcfg);
            fs::create_directories(ti.out);
            sbd::save_params(model, (fs::path(ti.out) / "model.json").string());
            std::cout << "trained fresh model -> "
                      << (fs::path(ti.out) / "model.json").string() << "\n";
        });
    }

    // ---- evaluate ----
    struct {
        std::string model, target, out, embeddings;
    } ev;
    {
        CLI::App* cmd =
            app.add_subcommand("evaluate", "Evaluate a trained model on a labeled dataset");
        cmd->add_option("--model", ev.model, "Model checkpoint")->required();
        cmd->add_option("--target", ev.target, "Labeled JSONL dataset")->required();
        cmd->add_option("--out", ev.out, "Write the report JSON here");
        cmd->add_option("--dump-embeddings", ev.embeddings,
                        "Write per-graph readout embeddings to this CSV");
        cmd->callback([&] {
            sbd::GinParams model = sbd::load_params(ev.model);
            sbd::DomainDataset tgt = load_dataset_checked(ev.target, true);
            sbd::EvalReport rep = sbd::evaluate(model, tgt);
            json j = sbd::eval_report_to_json(rep);
            std::cout << j.dump(2) << "\n";
            if (!ev.out.empty()) sbd::write_json_file(j, ev.out);
            if (!ev.embeddings.empty()) sbd::dump_embeddings(model, tgt, ev.embeddings);
        });
    }

    // ---- run ----
    PipelineOptions run_opt;
    struct {
        std::vector<std::uint64_t> seeds{0, 1, 2};
        bool baseline = false;
    } run_extra;
    GammaOption run_gamma;
    {
        CLI::App* cmd = app.add_subcommand(
            "run", "Full two-stage pipeline per seed, with an aggregate report");
        cmd->add_option("--source", run_opt.source_path, "Labeled source JSONL")->required();
        cmd->add_option("--target", run_opt.target_path, "Target JSONL (labels used in eval only)")
            ->required();
        cmd->add_option("--out", run_opt.out_dir, "Output directory")->required();
        cmd->add_option("--seeds", run_extra.seeds, "Root seeds")->capture_default_str();
        cmd->add_option("--ablate", run_opt.ablations, "Ablations: se, sp, ge, tg")
            ->check(CLI::IsMember({"se", "sp", "ge", "tg"}));
        cmd->add_flag("--baseline", run_extra.baseline,
                      "Train on source only (no distillation) as a reference");
        add_distill_flags(cmd, run_opt.dcfg);
        add_infer_flags(cmd, run_opt.icfg);
        add_gamma_flag(cmd, run_gamma);
        cmd->callback([&] {
            run_gamma.apply(run_opt.dcfg);
            sbd::DomainDataset src = load_dataset_checked(run_opt.source_path, true);
            sbd::DomainDataset tgt = load_dataset_checked(run_opt.target_path, true);
            std::vector<sbd::EvalReport> reports;
            for (std::uint64_t s : run_extra.seeds) {
                reports.push_back(run_one_seed(run_opt, src, tgt, s, run_extra.baseline,
                                               "_seed" + std::to_string(s)));
                std::cout << "seed " << s << ": accuracy " << reports.back().accuracy << "\n";
            }
            json agg = aggregate_reports(run_extra.seeds, reports);
            sbd::write_json_file(agg, (fs::path(run_opt.out_dir) / "aggregate.json").string());
            std::cout << "mean accuracy " << agg["accuracy_mean"].get<double>() << " +- "
                      << agg["accuracy_std"].get<double>() << " over " << run_extra.seeds.size()
                      << " seeds\n";
        });
    }

    // ---- ablate ----
    PipelineOptions ab_opt;
    struct {
        std::vector<std::uint64_t> seeds{0, 1, 2};
    } ab_extra;
    {
        CLI::App* cmd = app.add_subcommand(
            "ablate", "Run the full pipeline and every single-term ablation");
        cmd->add_option("--source", ab_opt.source_path, "Labeled source JSONL")->required();
        cmd->add_option("--target", ab_opt.target_path, "Target JSONL")->required();
        cmd->add_option("--out", ab_opt.out_dir, "Output directory")->required();
        cmd->add_option("--seeds", ab_extra.seeds, "Root seeds")->capture_default_str();
        add_distill_flags(cmd, ab_opt.dcfg);
        add_infer_flags(cmd, ab_opt.icfg);
        cmd->callback([&] {
            sbd::DomainDataset src = load_dataset_checked(ab_opt.source_path, true);
            sbd::DomainDataset tgt = load_dataset_checked(ab_opt.target_path, true);
            const std::vector<std::pair<std::string, std::vector<std::string>>> variants{
                {"full", {}}, {"no_se", {"se"}}, {"no_sp", {"sp"}},
                {"no_ge", {"ge"}}, {"no_tg", {"tg"}}};
            json out;
            for (const auto& [name, abl] : variants) {
                PipelineOptions opt = ab_opt;
                opt.out_dir = (fs::path(ab_opt.out_dir) / name).string();
                opt.ablations = abl;
                std::vector<sbd::EvalReport> reports;
                for (std::uint64_t s : ab_extra.seeds)
                    reports.push_back(
                        run_one_seed(opt, src, tgt, s, false, "_seed" + std::to_string(s)));
                out[name] = aggregate_reports(ab_extra.seeds, reports);
                std::cout << name << ": mean accuracy "
                          << out[name]["accuracy_mean"].get<double>() << "\n";
            }
            sbd::write_json_file(out,
                                 (fs::path(ab_opt.out_dir) / "ablation_report.json").string());
        });
    }

    // ---- sweep ----
    PipelineOptions sw_opt;
    struct {
        std::vector<std::uint64_t> seeds{0};
        std::vector<int> k_grid{5, 10, 20, 30, 40, 50};
        std::vector<double> lambda_grid{0.1, 0.3, 0.5, 0.7, 0.9};
        bool skip_k = false, skip_lambda = false;
    } sw_extra;
    {
        CLI::App* cmd = app.add_subcommand(
            "sweep", "Sensitivity grids over K and over (lambda1, lambda2)");
        cmd->add_option("--source", sw_opt.source_path, "Labeled source JSONL")->required();
        cmd->add_option("--target", sw_opt.target_path, "Target JSONL")->required();
        cmd->add_option("--out", sw_opt.out_dir, "Output directory")->required();
        cmd->add_option("--seeds", sw_extra.seeds, "Root seeds")->capture_default_str();
        cmd->add_option("--k-grid", sw_extra.k_grid, "K values")->capture_default_str();
        cmd->add_option("--lambda-grid", sw_extra.lambda_grid, "lambda values")
            ->capture_default_str();
        cmd->add_flag("--skip-k", sw_extra.skip_k, "Skip the K axis");
        cmd->add_flag("--skip-lambda", sw_extra.skip_lambda, "Skip the lambda surface");
        add_distill_flags(cmd, sw_opt.dcfg);
        add_infer_flags(cmd, sw_opt.icfg);
        cmd->callback([&] {
            sbd::DomainDataset src = load_dataset_checked(sw_opt.source_path, true);
            sbd::DomainDataset tgt = load_dataset_checked(sw_opt.target_path, true);
            fs::create_directories(sw_opt.out_dir);
            auto csv_path = fs::path(sw_opt.out_dir) / "sweep.csv";
            std::ofstream csv(csv_path, std::ios::binary);
            if (!csv) throw sbd::invalid_input("cannot write " + csv_path.string());
            csv << "axis,k,lambda1,lambda2,n_seeds,accuracy_mean,accuracy_std\n";

            auto run_point = [&](const char* axis, int k, double l1, double l2) {
                PipelineOptions opt = sw_opt;
                opt.dcfg.k = k;
                opt.dcfg.lambda1 = l1;
                opt.dcfg.lambda2 = l2;
                char tag[128];
                std::snprintf(tag, sizeof(tag), "%s_k%d_l1%.2f_l2%.2f", axis, k, l1, l2);
                opt.out_dir = (fs::path(sw_opt.out_dir) / tag).string();
                std::vector<double> accs;
                for (std::uint64_t s : sw_extra.seeds)
                    accs.push_back(run_one_seed(opt, src, tgt, s, false,
                                                "_seed" + std::to_string(s))
                                       .accuracy);
                char buf[256];
                std::snprintf(buf, sizeof(buf), "%s,%d,%.17g,%.17g,%zu,%.17g,%.17g\n", axis, k,
                              l1, l2, sw_extra.seeds.size(), mean_of(accs), std_of(accs));
                csv << buf;
                csv.flush(); // partial sweeps stay usable
                std::cout << axis << " k=" << k << " l1=" << l1 << " l2=" << l2 << ": "
                          << mean_of(accs) << "\n";
            };

            if (!sw_extra.skip_k)
                for (int k : sw_extra.k_grid)
                    run_point("k", k, sw_opt.dcfg.lambda1, sw_opt.dcfg.lambda2);
            if (!sw_extra.skip_lambda)
                for (double l1 : sw_extra.lambda_grid)
                    for (double l2 : sw_extra.lambda_grid)
                        run_point("lambda", sw_opt.dcfg.k, l1, l2);
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const sbd::invalid_input& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
