#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ahmood/errors.hpp"
#include "ahmood/harness.hpp"

namespace ahmood {

namespace {

std::string num(double v, const char* fmt = "%.10g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << text;
}

}  // namespace

ReportFormat report_format_from_name(const std::string& name) {
    if (name == "csv") return ReportFormat::csv;
    if (name == "markdown" || name == "md") return ReportFormat::markdown;
    throw ConfigError("unknown report format '" + name + "' (expected csv or markdown)");
}

std::string render_report(const OodEvalReport& report, ReportFormat format) {
    std::ostringstream os;
    if (format == ReportFormat::csv) {
        os << "protocol,method,auroc_mean,auroc_std,fpr_mean,fpr_std,n_runs\n";
        for (const auto& r : report.rows) {
            const auto& s = r.summary;
            os << protocol_name(r.protocol) << ',' << method_name(r.method) << ',' << num(s.auroc_mean) << ','
               << num(s.auroc_std) << ',' << num(s.fpr_mean) << ',' << num(s.fpr_std) << ',' << s.n_runs << '\n';
        }
        return os.str();
    }
    os << "| Protocol | Method | AUROC | FPR@95 | Runs |\n";
    os << "|---|---|---|---|---|\n";
    for (const auto& r : report.rows) {
        const auto& s = r.summary;
        os << "| " << protocol_name(r.protocol) << " | " << method_name(r.method) << " | "
           << num(s.auroc_mean, "%.3f") << " ± " << num(s.auroc_std, "%.3f") << " | " << num(s.fpr_mean, "%.3f")
           << " ± " << num(s.fpr_std, "%.3f") << " | " << s.n_runs << " |\n";
    }
    return os.str();
}

std::vector<ReportRow> parse_report_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<ReportRow> rows;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 7) throw ParseError("report line " + std::to_string(line_no) + " has " +
                                                std::to_string(f.size()) + " fields", line_no);
        try {
            rows.push_back({protocol_from_name(f[0]), method_from_name(f[1]),
                            MetricSummary{std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]),
                                          static_cast<std::size_t>(std::stoull(f[6]))}});
        } catch (const std::exception& e) {
            throw ParseError("report line " + std::to_string(line_no) + ": " + e.what(), line_no);
        }
    }
    return rows;
}

void write_outputs(const ExperimentConfig& config, const OodEvalReport& report, const std::vector<RunResult>& runs,
                   const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    fs::create_directories(root);
    write_text(root / "report.csv", render_report(report, ReportFormat::csv));
    write_text(root / "report.md", render_report(report, ReportFormat::markdown));
    write_json_file(report.provenance, (root / "report.json").string());

    for (const auto& r : runs) {
        const fs::path run_dir = root / "runs" / (protocol_name(r.protocol) + "_seed" + std::to_string(r.seed));
        fs::create_directories(run_dir);
        write_json_file(ensemble_to_json(r.ensemble), (run_dir / "ensemble.json").string());
        write_text(run_dir / "scores.csv", render_scores_csv(r));
        json manifest = json::array();
        for (std::size_t i = 0; i < r.checkpoints.size(); ++i) {
            const auto& cp = r.checkpoints[i];
            const double sil = r.checkpoint.silhouettes.at(i);
            manifest.push_back({{"epoch", cp.epoch},
                                {"train_loss", cp.train_loss},
                                {"train_accuracy", cp.train_accuracy},
                                {"eval_accuracy", cp.eval_accuracy},
                                {"silhouette", std::isnan(sil) ? json(nullptr) : json(sil)},
                                {"selected", i == r.checkpoint.index}});
        }
        write_json_file(json{{"config_hash", config_hash(config)}, {"checkpoints", std::move(manifest)}},
                        (run_dir / "checkpoints.json").string());
        save_params(r.finetuned, (run_dir / "checkpoint.json").string());
    }
}

}  // namespace ahmood
