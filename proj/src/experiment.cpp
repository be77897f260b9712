#include "ermpp/experiment.hpp"

#include <cctype>
#include <fstream>
#include <random>

#include "binio.hpp"
#include "ermpp/checkpoint.hpp"
#include "ermpp/report.hpp"
#include "ermpp/rng.hpp"

namespace ermpp {

namespace fs = std::filesystem;

MultiDomainDataset build_dataset(const ExperimentConfig& cfg) {
    const uint64_t data_seed = derive_seed(cfg.seed, "dataset");
    if (cfg.family == "rotated_blobs") {
        return make_rotated_blobs(cfg.num_domains, cfg.rotation_step_deg, cfg.num_classes,
                                  cfg.n_per_domain, cfg.noise_sigma, data_seed);
    }
    if (cfg.family == "spurious_blobs") {
        return make_spurious_blobs(cfg.spurious_corr, cfg.num_classes, cfg.n_per_domain,
                                   cfg.noise_sigma, data_seed);
    }
    return load_dataset(cfg.dataset_path);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FileFormatError("cannot write " + path.string());
    }
    out << text;
}

ProtocolConfig protocol_config(const ExperimentConfig& cfg) {
    ProtocolConfig pc;
    pc.model_spec.hidden_dims = cfg.hidden_dims;
    pc.model_spec.use_batchnorm = cfg.use_batchnorm;
    pc.schedule = cfg.schedule;
    pc.toggles = cfg.toggles;
    pc.adam = cfg.adam;
    pc.val_fraction = cfg.val_fraction;
    pc.per_domain_batch = cfg.per_domain_batch;
    pc.total_batch = cfg.total_batch;
    bool needs_strong_init = cfg.toggles.strong_init;
    for (const auto& row : cfg.ablation_rows) needs_strong_init |= row.strong_init;
    if (needs_strong_init) {
        pc.strong_init = load_checkpoint(cfg.strong_init_path);
    }
    return pc;
}

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s) {
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-') ? c : '_';
    }
    return out;
}

}  // namespace

RunArtifacts run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir,
                            int workers_override) {
    const int workers = workers_override > 0 ? workers_override : cfg.workers;
    const std::string digest = cfg.digest();
    MultiDomainDataset ds = build_dataset(cfg);
    ProtocolConfig pc = protocol_config(cfg);

    std::vector<EvalReport> reports;
    if (cfg.mode == "ablation") {
        reports = ablation_grid(ds, pc, cfg.ablation_rows, cfg.seed, cfg.num_seeds, workers);
    } else {
        reports.push_back(leave_one_domain_out(ds, pc, cfg.seed, cfg.num_seeds, workers));
    }

    fs::create_directories(out_dir / "records");
    RunArtifacts artifacts;
    for (size_t i = 0; i < reports.size(); ++i) {
        const fs::path csv_path =
            cfg.mode == "ablation" ? out_dir / ("ablation_row" + std::to_string(i) + ".csv")
                                   : out_dir / "report.csv";
        write_text(csv_path, report_csv(reports[i], digest, ds.generator_spec().describe()));
        artifacts.csv_files.push_back(csv_path);
        for (auto& rec : reports[i].records) {
            rec.config_digest = digest;
            const std::string stem = "run_" + std::to_string(i) + "_" +
                                     sanitize(rec.held_out_domain) + "_t" +
                                     std::to_string(rec.trial);
            const fs::path rec_path = out_dir / "records" / (stem + ".json");
            write_text(rec_path, run_record_json(rec));
            artifacts.record_files.push_back(rec_path);
            ModelSpec spec;
            spec.input_dim = ds.input_dim();
            spec.hidden_dims = cfg.hidden_dims;
            spec.num_classes = ds.num_classes();
            spec.use_batchnorm = cfg.use_batchnorm;
            const fs::path ckpt_path = out_dir / "records" / (stem + ".ckpt");
            save_checkpoint(rec.deployment, spec.hash(), ckpt_path.string(),
                            /*averaged=*/rec.toggles.mpa);
            artifacts.checkpoint_files.push_back(ckpt_path);
        }
    }
    artifacts.markdown = out_dir / (cfg.mode == "ablation" ? "ablation.md" : "report.md");
    write_text(artifacts.markdown, reports_markdown(reports, digest, cfg.canonical_text(),
                                                    ds.generator_spec().describe()));
    return artifacts;
}

fs::path run_pretrain(const ExperimentConfig& cfg, const fs::path& out_dir) {
    MultiDomainDataset ds = build_dataset(cfg);
    PooledData all = pool_domains(ds, ds.domain_names());

    // Auxiliary labels: argmax of a seeded random linear teacher over the
    // clean features. Stands in for the upstream pretraining task.
    const int dim = ds.input_dim();
    const int aux = cfg.pretrain.aux_classes;
    auto teacher_rng = make_rng(derive_seed(cfg.seed, "pretrain.teacher"));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> teacher(static_cast<size_t>(dim) * aux);
    for (auto& w : teacher) w = gauss(teacher_rng);
    const int n = static_cast<int>(all.y.size());
    std::vector<int> aux_labels(n);
    for (int i = 0; i < n; ++i) {
        const double* row = all.x.values().data() + static_cast<size_t>(i) * dim;
        int best = 0;
        double best_v = 0.0;
        for (int c = 0; c < aux; ++c) {
            double v = 0.0;
            for (int d = 0; d < dim; ++d) v += row[d] * teacher[static_cast<size_t>(d) * aux + c];
            if (c == 0 || v > best_v) {
                best = c;
                best_v = v;
            }
        }
        aux_labels[i] = best;
    }

    ModelSpec spec;
    spec.input_dim = dim;
    spec.hidden_dims = cfg.hidden_dims;
    spec.num_classes = aux;
    spec.use_batchnorm = cfg.use_batchnorm;
    Model model(spec, derive_seed(cfg.seed, "pretrain.init"));
    Adam adam(AdamConfig{cfg.pretrain.lr, 0.9, 0.999, 1e-8, 0.0});
    auto params = model.named_parameters();
    const FreezeMask mask = warmstart_mask(model, WarmstartPhase::All);

    auto rng = make_rng(derive_seed(cfg.seed, "pretrain.batches"));
    std::uniform_int_distribution<int> pick(0, n - 1);
    std::normal_distribution<double> input_noise(0.0, cfg.pretrain.noise);
    const int batch_size = cfg.pretrain.batch_size;
    for (int step = 1; step <= cfg.pretrain.steps; ++step) {
        std::vector<double> rows(static_cast<size_t>(batch_size) * dim);
        std::vector<int> ys(batch_size);
        for (int b = 0; b < batch_size; ++b) {
            const int i = pick(rng);
            const double* src = all.x.values().data() + static_cast<size_t>(i) * dim;
            for (int d = 0; d < dim; ++d) {
                rows[static_cast<size_t>(b) * dim + d] =
                    src[d] + (cfg.pretrain.noise > 0.0 ? input_noise(rng) : 0.0);
            }
            ys[b] = aux_labels[i];
        }
        Tensor x = Tensor::from({batch_size, dim}, std::move(rows));
        Tape tape;
        Tensor logits = model.forward(&tape, x, RunMode::Train);
        Tensor loss = softmax_cross_entropy(&tape, logits, ys);
        for (auto& [name, p] : params) p.zero_grad();
        tape.backward(loss);
        adam.step(params, mask);
        model.set_step(step);
    }

    fs::create_directories(out_dir);
    const fs::path path = out_dir / cfg.pretrain.out;
    save_checkpoint(model.extract_state(), spec.hash(), path.string());
    return path;
}

}  // namespace ermpp
