// sim2p: generate phantom cohorts, train and adapt bridge models, sample and evaluate.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "sim2p/checkpoint.hpp"
#include "sim2p/config.hpp"
#include "sim2p/dataset_io.hpp"
#include "sim2p/runtime.hpp"

namespace fs = std::filesystem;
using namespace sim2p;
using json = nlohmann::ordered_json;

namespace {

struct Common {
    std::string configPath;
    std::string out;
    int threads = 1;
    std::optional<std::uint64_t> seed;
    std::string checkpoint;
    std::string manifest;
    std::optional<int> nStep;
    std::string predDir;
};

config::RunConfig resolve(const Common& o) {
    config::RunConfig c = o.configPath.empty() ? config::parse("") : config::load(o.configPath);
    if (o.seed) {
        c.apply_seed(*o.seed);
        c.validate();
    }
    if (o.threads < 1) throw ConfigError("--threads must be at least 1");
    c.train.threads = o.threads;
    return c;
}

fs::path out_dir(const Common& o, const char* command) {
    const fs::path p = o.out.empty() ? fs::path("runs") / command : fs::path(o.out);
    fs::create_directories(p);
    return p;
}

void echo_config(const fs::path& dir, const config::RunConfig& c) { io::write_text(dir / "effective_config.ini", config::to_ini(c)); }

std::string require(const std::string& v, const char* flag) {
    if (v.empty()) throw ConfigError(std::string(flag) + " is required for this command");
    return v;
}

// ---- aux encoding sidecar: stats and mask used when the checkpoint was trained ----

struct AuxEncoding {
    data::AuxStats stats;
    data::AuxMask mask = data::all_aux();
};

fs::path sidecar(const fs::path& ckpt) { return fs::path(ckpt.string() + ".aux.json"); }

void save_encoding(const fs::path& ckpt, const AuxEncoding& e) {
    json j;
    j["mean"] = e.stats.mean;
    j["sd"] = e.stats.sd;
    json keep = json::array();
    for (std::size_t v = 0; v < kAuxVariables; ++v)
        if (e.mask.test(v)) keep.push_back(std::string(kAuxNames[v]));
    j["keep"] = keep;
    io::write_text(sidecar(ckpt), j.dump(2) + "\n");
}

AuxEncoding encoding_for(const fs::path& ckpt, const data::Cohort& cohort) {
    AuxEncoding e;
    const auto p = sidecar(ckpt);
    if (!fs::exists(p)) {
        const auto tr = cohort.of(data::Split::Train);
        if (tr.empty()) throw ConfigError("no aux encoding next to the checkpoint and the manifest has no train split");
        e.stats = data::aux_stats(tr);
        return e;
    }
    try {
        const auto j = nlohmann::json::parse(io::read_text(p));
        e.stats.mean = j.at("mean").get<std::array<double, kAuxVariables>>();
        e.stats.sd = j.at("sd").get<std::array<double, kAuxVariables>>();
        e.mask = data::aux_mask_of(j.at("keep").get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError(p.string() + ": " + ex.what());
    }
    return e;
}

data::Cohort load_cohort(const std::string& manifest, const config::RunConfig& c) {
    auto cohort = data::load_cohort(require(manifest, "--manifest"));
    if (cohort.subjects.empty()) throw FormatError("manifest " + manifest + " lists no subjects");
    const auto s = static_cast<std::uint32_t>(c.net.volumeSide);
    for (const auto& sub : cohort.subjects)
        if (sub.structure.dims() != Dims{s, s, s})
            throw ShapeError("manifest/volume mismatch: " + sub.id + " has dims " + sub.structure.dims().str() +
                             " but net.volumeSide is " + std::to_string(s));
    return cohort;
}

std::vector<const data::Subject*> select(const data::Cohort& c, const std::string& split, int maxSubjects) {
    std::vector<const data::Subject*> out;
    for (std::size_t i = 0; i < c.subjects.size(); ++i)
        if (split == "all" || c.split[i] == data::split_from_string(split)) out.push_back(&c.subjects[i]);
    if (maxSubjects > 0 && out.size() > std::size_t(maxSubjects)) out.resize(std::size_t(maxSubjects));
    if (out.empty()) throw ConfigError("split '" + split + "' selects no subjects");
    return out;
}

net::DenoiserModel<float> load_model(const std::string& path, const config::RunConfig& c) {
    auto m = ckpt::load<float>(require(path, "--checkpoint"));
    if (m.config().volumeSide != c.net.volumeSide)
        throw ShapeError("checkpoint volume side " + std::to_string(m.config().volumeSide) + " differs from net.volumeSide " +
                         std::to_string(c.net.volumeSide));
    return m;
}

void write_training(const fs::path& dir, const train::TrainResult<float>& r, const AuxEncoding& enc) {
    const fs::path ck = dir / "model.ckpt";
    ckpt::save(r.best, ck);
    save_encoding(ck, enc);
    io::write_text(dir / "train_log.csv", train::log_csv(r.log));
    json s;
    s["bestIter"] = r.bestIter;
    s["bestValMAE"] = r.bestValMae;
    s["parameters"] = r.best.parameter_count();
    s["diverged"] = r.diverged;
    if (r.diverged) s["message"] = r.divergenceMessage;
    io::write_text(dir / "summary.json", s.dump(2) + "\n");
}

void print_row(const train::LogRow& l) {
    std::cout << "iter " << l.iter << "  loss(ema) " << l.trainLossEma << "  val MAE " << l.valMae << "  PSNR "
              << l.valPsnr << "  SSIM " << l.valSsim << "  [" << l.wallClockSec << " s]" << std::endl;
}

// ---- commands ----

int gen_data(const Common& o) {
    const auto c = resolve(o);
    const auto dir = out_dir(o, "gen-data");
    data::Cohort cohort;
    cohort.subjects = data::generate_cohort(c.data.cohort);
    const auto sp = data::propensity_split(cohort.subjects, c.data.split, c.data.splitCandidates, c.seed);
    cohort.split = sp.split;
    const auto manifest = data::write_cohort(dir, cohort);
    json s;
    s["imbalance"] = sp.imbalance;
    s["candidateIndex"] = sp.candidateIndex;
    s["candidateSeed"] = sp.candidateSeed;
    s["usedFallback"] = sp.usedFallback;
    for (auto sp2 : {data::Split::Train, data::Split::Val, data::Split::Test}) s["count"][data::to_string(sp2)] = cohort.count(sp2);
    io::write_text(dir / "split.json", s.dump(2) + "\n");
    echo_config(dir, c);
    std::cout << manifest.string() << '\n';
    return 0;
}

int finish_training(const train::TrainResult<float>& r, const fs::path& dir, const AuxEncoding& enc) {
    write_training(dir, r, enc);
    std::cout << "best iteration " << r.bestIter << " (val MAE " << r.bestValMae << ") -> " << (dir / "model.ckpt").string()
              << '\n';
    if (r.diverged) {
        std::cerr << "divergence: " << r.divergenceMessage << " (best checkpoint so far was written)\n";
        return 1;
    }
    return 0;
}

int cmd_train(const Common& o) {
    const auto c = resolve(o);
    const auto cohort = load_cohort(o.manifest, c);
    const auto dir = out_dir(o, "train");
    echo_config(dir, c);
    AuxEncoding enc;
    enc.stats = data::aux_stats(cohort.of(data::Split::Train));
    const auto tr = train::examples(cohort.of(data::Split::Train), enc.stats);
    const auto va = train::examples(cohort.of(data::Split::Val), enc.stats);
    if (tr.empty() || va.empty()) throw ConfigError("manifest needs both train and val subjects");
    net::DenoiserModel<float> model(c.net, c.schedule, train::stats_of(tr), c.seed);
    return finish_training(train::train(model, tr, va, c.train, print_row), dir, enc);
}

int cmd_adapt(const Common& o) {
    const auto c = resolve(o);
    const std::string base = o.checkpoint.empty() ? c.adapt.baseCheckpoint : o.checkpoint;
    const auto model = load_model(require(base, "--checkpoint (or adapt.baseCheckpoint)"), c);
    const auto cohort = load_cohort(o.manifest, c);
    const auto dir = out_dir(o, "adapt");
    echo_config(dir, c);
    const auto d = train::local_data(cohort, c.adapt.cfg);
    const auto r = train::local_adapt(model, cohort, c.adapt.cfg, c.train, print_row);
    return finish_training(r, dir, {d.auxStats, d.mask});
}

std::vector<train::Example> subjects_for(const data::Cohort& cohort, const std::string& split, int maxSubjects,
                                         const AuxEncoding& enc) {
    return train::examples(select(cohort, split, maxSubjects), enc.stats, enc.mask);
}

fs::path pred_path(const fs::path& dir, const std::string& id) { return dir / (id + "_pred.vol"); }

fs::path sample_into(const Common& o, const config::RunConfig& c, const data::Cohort& cohort, const fs::path& dir) {
    const auto model = load_model(o.checkpoint, c);
    const auto xs = subjects_for(cohort, c.eval.split, c.eval.maxSubjects, encoding_for(o.checkpoint, cohort));
    auto sc = c.sampler;
    if (o.nStep) sc.nStep = *o.nStep;
    sc.validate();
    const fs::path pd = dir / "predictions";
    const auto ev = train::evaluate(model, xs, sc, o.threads);
    for (std::size_t i = 0; i < xs.size(); ++i) data::write_volume(pred_path(pd, xs[i].id), ev.predictions[i]);
    return pd;
}

int cmd_sample(const Common& o) {
    const auto c = resolve(o);
    const auto cohort = load_cohort(o.manifest, c);
    const auto dir = out_dir(o, "sample");
    echo_config(dir, c);
    std::cout << sample_into(o, c, cohort, dir).string() << '\n';
    return 0;
}

int cmd_evaluate(const Common& o) {
    const auto c = resolve(o);
    const auto cohort = load_cohort(o.manifest, c);
    const auto dir = out_dir(o, "evaluate");
    echo_config(dir, c);
    fs::path pd = o.predDir;
    if (pd.empty()) {
        if (o.checkpoint.empty()) throw ConfigError("evaluate needs --pred-dir or --checkpoint");
        pd = sample_into(o, c, cohort, dir);
    }
    std::vector<train::Example> xs;
    std::vector<Volume> preds;
    for (const auto* s : select(cohort, c.eval.split, c.eval.maxSubjects)) {
        const auto p = pred_path(pd, s->id);
        if (!fs::exists(p)) continue;
        preds.push_back(data::read_volume(p));
        require_same_shape(preds.back(), s->function, ("prediction for " + s->id).c_str());
        xs.push_back({s->id, &s->function, &s->structure, {}, s});
    }
    if (xs.empty()) throw IoError("no predictions for split '" + c.eval.split + "' found in " + pd.string());
    train::Evaluation ev;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        auto m = metrics::score_subject(preds[i], *xs[i].x0);
        m.id = xs[i].id;
        ev.scores.push_back(m);
    }
    const auto rep = experiments::report(xs, ev);
    io::write_text(dir / "metrics.csv", rep.csv());
    io::write_text(dir / "metrics.json", rep.json().dump(2) + "\n");
    const auto& all = rep.overall();
    std::cout << xs.size() << " subjects  MAE " << all.mae.mean << " +- " << all.mae.sd << "  PSNR " << all.psnr.mean
              << "  SSIM " << all.ssim.mean << '\n';
    return 0;
}

int cmd_sweep(const Common& o) {
    const auto c = resolve(o);
    const auto cohort = load_cohort(o.manifest, c);
    const auto model = load_model(o.checkpoint, c);
    const auto dir = out_dir(o, "sweep-steps");
    echo_config(dir, c);
    const auto xs = subjects_for(cohort, c.eval.analysisSplit, c.eval.maxSubjects, encoding_for(o.checkpoint, cohort));
    const auto rows = experiments::steps_sweep(model, xs, c.eval.stepList, c.sampler);
    const auto csv = experiments::sweep_csv(rows);
    io::write_text(dir / "sweep.csv", csv);
    std::cout << csv;
    return 0;
}

int cmd_ablate(const Common& o) {
    const auto c = resolve(o);
    const auto cohort = load_cohort(o.manifest, c);
    const auto model = load_model(o.checkpoint, c);
    const auto dir = out_dir(o, "ablate-aux");
    echo_config(dir, c);
    const auto xs = subjects_for(cohort, c.eval.analysisSplit, c.eval.maxSubjects, encoding_for(o.checkpoint, cohort));
    auto vars = c.eval.auxVariables;
    if (vars.empty())
        for (auto n : kAuxNames) vars.emplace_back(n);
    auto sc = c.sampler;
    sc.nStep = c.eval.nStep;
    const auto baseline = train::evaluate(model, xs, sc, o.threads);
    std::ostringstream csv;
    csv.precision(10);
    csv << "kept,maeDelta,psnrDelta,ssimDelta,mae,psnr,ssim\n";
    csv << "all,0,0,0," << baseline.mean_mae() << ',' << baseline.mean_psnr() << ',' << baseline.mean_ssim() << '\n';
    for (const auto& v : vars) {
        const auto r = experiments::aux_sensitivity(model, xs, {v}, sc, o.threads, &baseline);
        csv << v << ',' << r.maeDelta << ',' << r.psnrDelta << ',' << r.ssimDelta << ',' << r.ablated.mean_mae() << ','
            << r.ablated.mean_psnr() << ',' << r.ablated.mean_ssim() << '\n';
    }
    io::write_text(dir / "ablation.csv", csv.str());
    std::cout << csv.str();
    return 0;
}

int report_error(const char* prefix, const std::exception& e, int code) {
    std::cerr << prefix << ": " << e.what() << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Structure-to-function bridge diffusion on procedural phantoms"};
    app.require_subcommand(1);
    Common o;
    auto add_common = [&](CLI::App* sc) {
        sc->add_option("--config", o.configPath, "INI run configuration");
        sc->add_option("--out", o.out, "output directory (default runs/<command>)");
        sc->add_option("--threads", o.threads, "worker threads; 1 is bit-exact deterministic");
        sc->add_option("--seed", o.seed, "overrides the config seed");
    };
    struct Sub {
        const char* name;
        const char* help;
        int (*run)(const Common&);
        bool ckpt, manifest, nstep, pred;
    };
    const Sub subs[] = {
        {"gen-data", "generate a phantom cohort, split and manifest", gen_data, false, false, false, false},
        {"train", "train a denoiser on a manifest's train split", cmd_train, false, true, false, false},
        {"adapt", "fine-tune a checkpoint on a local-site cohort", cmd_adapt, true, true, false, false},
        {"sample", "simulate function volumes for eval.split", cmd_sample, true, true, true, false},
        {"evaluate", "score predictions against ground truth", cmd_evaluate, true, true, true, true},
        {"sweep-steps", "quality and runtime against sampling steps", cmd_sweep, true, true, false, false},
        {"ablate-aux", "keep one auxiliary variable at a time", cmd_ablate, true, true, false, false},
    };
    const Sub* chosen = nullptr;
    for (const auto& s : subs) {
        auto* sc = app.add_subcommand(s.name, s.help);
        add_common(sc);
        if (s.ckpt) sc->add_option("--checkpoint", o.checkpoint, "model checkpoint");
        if (s.manifest) sc->add_option("--manifest", o.manifest, "cohort manifest (JSONL)");
        if (s.nstep) sc->add_option("--nstep", o.nStep, "sampling steps (overrides sampler.nStep)");
        if (s.pred) sc->add_option("--pred-dir", o.predDir, "directory of <id>_pred.vol files");
        sc->callback([&chosen, &s] { chosen = &s; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    try {
        return chosen->run(o);
    } catch (const ConfigError& e) {
        return report_error("config error", e, 2);
    } catch (const IoError& e) {
        return report_error("io error", e, 1);
    } catch (const FormatError& e) {
        return report_error("format error", e, 1);
    } catch (const ShapeError& e) {
        return report_error("shape error", e, 1);
    } catch (const DivergenceError& e) {
        return report_error("divergence", e, 1);
    } catch (const std::exception& e) {
        return report_error("error", e, 1);
    }
}
