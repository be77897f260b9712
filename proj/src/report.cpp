#include "ermpp/report.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace ermpp {

std::string format_double(double v) {
    // Shortest representation that parses back to the same double.
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::string report_csv(const EvalReport& report, const std::string& config_digest,
                       const std::string& generator_spec) {
    std::ostringstream os;
    os << "# config_digest=" << config_digest << "\n";
    os << "# data=" << generator_spec << "\n";
    os << "held_out_domain";
    for (int t = 0; t < report.num_trials; ++t) {
        os << ",seed_" << t;
    }
    os << ",mean,stderr\n";
    for (size_t d = 0; d < report.held_out_domains.size(); ++d) {
        os << report.held_out_domains[d];
        for (double a : report.accuracies[d]) {
            os << "," << format_double(a);
        }
        os << "," << format_double(report.domain_mean[d]) << ","
           << format_double(report.domain_stderr[d]) << "\n";
    }
    return os.str();
}

namespace {

std::string fixed3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

}  // namespace

std::string reports_markdown(const std::vector<EvalReport>& reports,
                             const std::string& config_digest, const std::string& config_echo,
                             const std::string& generator_spec) {
    std::ostringstream os;
    os << "# Evaluation report\n\n";
    os << "- config digest: `" << config_digest << "`\n";
    os << "- data: `" << generator_spec << "`\n\n";
    if (!reports.empty()) {
        const auto& domains = reports.front().held_out_domains;
        std::vector<std::string> headers = {"toggles"};
        headers.insert(headers.end(), domains.begin(), domains.end());
        headers.push_back("Avg");
        std::vector<std::vector<std::string>> rows;
        for (const auto& r : reports) {
            std::vector<std::string> row = {r.label};
            for (size_t d = 0; d < domains.size(); ++d) {
                row.push_back(fixed3(r.domain_mean[d]) + " ±" + fixed3(r.domain_stderr[d]));
            }
            row.push_back(fixed3(r.average));
            rows.push_back(std::move(row));
        }
        // The plus-minus sign is the only multi-byte character emitted;
        // count display columns, not bytes, when padding.
        auto display_width = [](const std::string& s) {
            size_t continuation = 0;
            for (char c : s) {
                if ((static_cast<unsigned char>(c) & 0xc0) == 0x80) ++continuation;
            }
            return s.size() - continuation;
        };
        std::vector<size_t> width(headers.size());
        for (size_t c = 0; c < headers.size(); ++c) {
            width[c] = display_width(headers[c]);
            for (const auto& row : rows) width[c] = std::max(width[c], display_width(row[c]));
        }
        auto emit_row = [&](const std::vector<std::string>& row) {
            os << "|";
            for (size_t c = 0; c < row.size(); ++c) {
                os << " " << row[c] << std::string(width[c] - display_width(row[c]), ' ')
                   << " |";
            }
            os << "\n";
        };
        emit_row(headers);
        os << "|";
        for (size_t c = 0; c < headers.size(); ++c) {
            os << std::string(width[c] + 2, '-') << "|";
        }
        os << "\n";
        for (const auto& row : rows) emit_row(row);
        os << "\n";
    }
    os << "## Config\n\n```\n" << config_echo << "```\n";
    return os.str();
}

std::string run_record_json(const RunRecord& rec) {
    nlohmann::json j;
    j["held_out_domain"] = rec.held_out_domain;
    j["trial"] = rec.trial;
    j["master_seed"] = rec.master_seed;
    j["trial_seed"] = rec.trial_seed;
    j["toggles"] = {
        {"mpa", rec.toggles.mpa},
        {"fd", rec.toggles.fd},
        {"lt", rec.toggles.lt},
        {"ws", rec.toggles.ws},
        {"es", rec.toggles.es},
        {"strong_init", rec.toggles.strong_init},
        {"ubn", rec.toggles.ubn},
        {"sampler", rec.toggles.sampler == SamplerKind::Balanced ? "balanced" : "resampled"},
    };
    j["schedule"] = {
        {"total_steps", rec.schedule.total_steps},
        {"warmstart_steps", rec.schedule.warmstart_steps},
        {"mpa_burn_in", rec.schedule.mpa_burn_in},
        {"val_every", rec.schedule.val_every},
        {"long_train_multiplier", rec.schedule.long_train_multiplier},
        {"early_stop_step",
         rec.schedule.early_stop_step ? nlohmann::json(*rec.schedule.early_stop_step)
                                      : nlohmann::json(nullptr)},
    };
    j["resolved"] = {
        {"total_steps", rec.resolved.total_steps},
        {"warmstart_steps", rec.resolved.warmstart_steps},
        {"mpa_burn_in", rec.resolved.mpa_burn_in},
        {"val_every", rec.resolved.val_every},
    };
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& p : rec.val_curve) {
        curve.push_back({p.step, p.accuracy});
    }
    j["val_curve"] = std::move(curve);
    j["phi"] = rec.phi;
    j["held_out_accuracy"] = rec.held_out_accuracy;
    j["l2_from_init"] = rec.l2_from_init;
    j["steps_executed"] = rec.steps_executed;
    j["pool_sizes"] = rec.pool_sizes;
    j["checkpoint_digest"] = rec.checkpoint_digest;
    j["config_digest"] = rec.config_digest;
    j["generator_spec"] = rec.generator_spec;
    j["wall_clock_sec"] = rec.wall_clock_sec;
    return j.dump(2) + "\n";
}

}  // namespace ermpp
