// Command-line front end: fit, tune, simulate and quad subcommands with
// machine-readable CSV/JSON outputs.

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "qple/io.hpp"
#include "qple/sim.hpp"
#include "qple/tuning.hpp"

namespace fs = std::filesystem;
using namespace qple;

namespace {

struct CommonArgs {
    std::string out_dir = "out";
    std::uint64_t seed = 1;
    int jobs = 1;
};

std::vector<double> parse_lambda_grid(const std::string& text) {
    // lo:hi:count in log10 units
    const auto c1 = text.find(':');
    const auto c2 = text.find(':', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
        throw CLI::ValidationError("--lambda-grid", "expected lo:hi:count (log10 bounds)");
    return log_grid(std::stod(text.substr(0, c1)), std::stod(text.substr(c1 + 1, c2 - c1 - 1)),
                    std::stoi(text.substr(c2 + 1)));
}

Criterion parse_criterion(const std::string& text) {
    if (text == "gacv") return Criterion::gacv;
    if (text == "rangacv") return Criterion::rangacv;
    if (text == "loocv") return Criterion::loocv;
    if (text == "tkl") return Criterion::tkl;
    throw CLI::ValidationError("--criterion", "expected gacv|rangacv|loocv|tkl");
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << text;
}

// Evaluation grid over the observed covariate box, in original units.
void write_fit_outputs(const std::string& dir, const FitResult& fit, int dim) {
    write_text(dir + "/model.json", model_to_json_string(fit));
    const int per_axis = dim == 1 ? 201 : 41;
    Matrix grid;
    if (dim == 1) {
        grid = Matrix(per_axis, 1);
        for (int i = 0; i < per_axis; ++i) grid(i, 0) = static_cast<double>(i) / (per_axis - 1);
    } else if (dim == 2) {
        grid = Matrix(per_axis * per_axis, 2);
        for (int i = 0; i < per_axis; ++i)
            for (int j = 0; j < per_axis; ++j) {
                grid(i * per_axis + j, 0) = static_cast<double>(i) / (per_axis - 1);
                grid(i * per_axis + j, 1) = static_cast<double>(j) / (per_axis - 1);
            }
    } else {
        return;  // no grid output beyond d=2
    }
    Matrix orig = grid;
    if (!fit.model.rescale.identity()) {
        for (int i = 0; i < orig.rows(); ++i)
            orig.row(i) = fit.model.rescale.from_unit(grid.row(i).transpose()).transpose();
    }
    const Evaluation ev = evaluate(fit.model, orig);
    std::vector<std::vector<std::string>> rows;
    for (int i = 0; i < orig.rows(); ++i) {
        std::vector<std::string> row;
        for (int j = 0; j < dim; ++j) row.push_back(format_double(orig(i, j)));
        row.push_back(format_double(ev.fhat[i]));
        row.push_back(format_double(ev.mean[i]));
        rows.push_back(row);
    }
    std::string header;
    for (int j = 0; j < dim; ++j) header += "x" + std::to_string(j + 1) + ",";
    header += "fhat,mean";
    write_csv(dir + "/fit_grid.csv", header, rows);
}

struct TruthFile {
    Matrix x;
    Vector f;
};

TruthFile read_truth(const std::string& path, int dim) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open truth file: " + path);
    std::string line;
    std::getline(in, line);  // header: x1..xd,f
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> vals;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
        if (static_cast<int>(vals.size()) != dim + 1)
            throw std::runtime_error("truth file row has wrong arity");
        rows.push_back(vals);
    }
    TruthFile t;
    t.x = Matrix(rows.size(), dim);
    t.f = Vector(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        for (int j = 0; j < dim; ++j) t.x(static_cast<int>(i), j) = rows[i][j];
        t.f[static_cast<int>(i)] = rows[i][dim];
    }
    return t;
}

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * (v.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"penalized likelihood regression with randomized covariates"};
    app.require_subcommand(1);

    CommonArgs common;
    auto add_common = [&common](CLI::App* cmd) {
        cmd->add_option("--out", common.out_dir, "output directory");
        cmd->add_option("--seed", common.seed, "master seed; all randomness derives from it");
        cmd->add_option("--jobs", common.jobs, "worker threads for lambda grids and replicates");
    };

    // ---- fit ----
    auto* fit_cmd = app.add_subcommand("fit", "fit at a fixed smoothing parameter");
    add_common(fit_cmd);
    std::string data_path, spec_path, family_text = "poisson", kernel_text = "cubic";
    double lambda = 1e-4;
    std::string quad_text = "gauss";
    int nodes = 7;
    bool override_a1 = false;
    fit_cmd->add_option("--data", data_path, "CSV with header y,x1..xd")->required();
    fit_cmd->add_option("--spec", spec_path, "sidecar JSON with observation specs")->required();
    fit_cmd->add_option("--family", family_text, "binomial:k or poisson");
    fit_cmd->add_option("--kernel", kernel_text, "cubic | tps | rbf:gamma | ssanova:file");
    fit_cmd->add_option("--lambda", lambda, "smoothing parameter");
    fit_cmd->add_option("--quadrature", quad_text, "gauss | grid");
    fit_cmd->add_option("--nodes", nodes, "quadrature nodes per dimension");
    fit_cmd->add_flag("--override-a1", override_a1, "proceed despite a failed null-space diagnostic");

    // ---- tune ----
    auto* tune_cmd = app.add_subcommand("tune", "select the smoothing parameter on a grid");
    add_common(tune_cmd);
    std::string grid_text = "-8:1:40", criterion_text = "gacv", truth_path;
    int replicates = 5;
    double sigma_perturb = -1.0;
    tune_cmd->add_option("--data", data_path)->required();
    tune_cmd->add_option("--spec", spec_path)->required();
    tune_cmd->add_option("--family", family_text);
    tune_cmd->add_option("--kernel", kernel_text);
    tune_cmd->add_option("--lambda-grid", grid_text, "lo:hi:count in log10 units");
    tune_cmd->add_option("--criterion", criterion_text, "gacv | rangacv | loocv | tkl");
    tune_cmd->add_option("--replicates", replicates, "ranGACV replicates R");
    tune_cmd->add_option("--sigma-perturb", sigma_perturb, "perturbation scale (default 0.01 sd(y))");
    tune_cmd->add_option("--truth", truth_path, "CSV x1..xd,f with the true regression (tkl only)");
    tune_cmd->add_option("--quadrature", quad_text);
    tune_cmd->add_option("--nodes", nodes);
    tune_cmd->add_flag("--override-a1", override_a1);

    // ---- simulate ----
    auto* sim_cmd = app.add_subcommand("simulate", "replicated method comparison on synthetic data");
    add_common(sim_cmd);
    std::string scenario_text = "case_i", error_text = "none", tuning_text = "tkl",
                methods_text = "full,qple,naive";
    int sim_n = 0, sim_replicates = 20;
    bool error_known = true, missing = false;
    std::string sim_grid_text = "-6:-1:11";
    sim_cmd->add_option("--scenario", scenario_text, "case_i|case_ii|case_iii|franke_binomial|franke_poisson");
    sim_cmd->add_option("--n", sim_n, "sample size (0 = case default)");
    sim_cmd->add_option("--error", error_text, "none | normal:sigma | uniform:delta");
    sim_cmd->add_option("--error-known", error_known, "error scale treated as known");
    sim_cmd->add_flag("--missing", missing, "apply the response-threshold deletion rule");
    sim_cmd->add_option("--replicates", sim_replicates, "simulation replicates");
    sim_cmd->add_option("--tuning", tuning_text, "comma list of criteria (tkl,rangacv,...)");
    sim_cmd->add_option("--methods", methods_text, "comma list of full,qple,naive");
    sim_cmd->add_option("--lambda-grid", sim_grid_text);
    sim_cmd->add_option("--quadrature", quad_text);
    sim_cmd->add_option("--nodes", nodes);
    sim_cmd->add_option("--sigma-perturb", sigma_perturb);

    // ---- quad ----
    auto* quad_cmd = app.add_subcommand("quad", "print a quadrature rule as CSV");
    add_common(quad_cmd);
    std::string dist_text = "normal:0:1", method_text = "gauss";
    int quad_nodes = 7, quad_dims = 1;
    quad_cmd->add_option("--dist", dist_text, "normal:mu:sigma | uniform:a:b");
    quad_cmd->add_option("--nodes", quad_nodes, "nodes per dimension");
    quad_cmd->add_option("--method", method_text, "gauss | grid");
    quad_cmd->add_option("--dims", quad_dims, "independent product dimensions");

    CLI11_PARSE(app, argc, argv);

    try {
        if (quad_cmd->parsed()) {
            const auto parts = [&] {
                std::vector<std::string> out;
                std::stringstream ss(dist_text);
                std::string cell;
                while (std::getline(ss, cell, ':')) out.push_back(cell);
                return out;
            }();
            if (parts.size() != 3) throw std::runtime_error("--dist expects name:a:b");
            UnivariateDistribution dist =
                parts[0] == "normal"
                    ? UnivariateDistribution::normal(std::stod(parts[1]), std::stod(parts[2]))
                    : UnivariateDistribution::uniform(std::stod(parts[1]), std::stod(parts[2]));
            const RuleMethod method = method_text == "grid" ? RuleMethod::grid : RuleMethod::gauss;
            QuadratureRule rule;
            if (quad_dims == 1) {
                rule = univariate_rule(dist, quad_nodes, method);
            } else {
                ConditionalChain chain;
                chain.dim = quad_dims;
                chain.coordinate = [dist](int, const RowVec&) { return dist; };
                rule = multivariate_rule(chain, std::vector<int>(quad_dims, quad_nodes), method);
            }
            for (int j = 0; j < rule.dim(); ++j) std::cout << "z" << j + 1 << ",";
            std::cout << "weight\n";
            for (int i = 0; i < rule.size(); ++i) {
                for (int j = 0; j < rule.dim(); ++j) std::cout << format_double(rule.nodes(i, j)) << ",";
                std::cout << format_double(rule.weights[i]) << "\n";
            }
            return 0;
        }

        EmOptions em;
        em.quad.method = quad_text == "grid" ? RuleMethod::grid : RuleMethod::gauss;
        em.quad.nodes_per_dim = nodes;
        em.override_a1 = override_a1;

        if (fit_cmd->parsed() || tune_cmd->parsed()) {
            const ExpFamilySpec family = parse_family(family_text);
            const KernelSpec kernel = parse_kernel(kernel_text);
            em.quad.clamp_unit = kernel.type == KernelSpec::Type::cubic_spline ||
                                 kernel.type == KernelSpec::Type::ssanova;
            IngestResult ing = ingest(data_path, spec_path, family, kernel);
            ensure_dir(common.out_dir);

            if (fit_cmd->parsed()) {
                const FitResult fit = qple_fit(ing.data, lambda, em);
                write_fit_outputs(common.out_dir, fit, ing.data.dim);
                std::cout << "fit: lambda=" << format_double(lambda)
                          << " objective=" << format_double(fit.objective())
                          << " iterations=" << fit.iterations << (fit.converged ? "" : " (not converged)")
                          << "\n";
                return 0;
            }

            TuneOptions topt;
            topt.criterion = parse_criterion(criterion_text);
            topt.rangacv.replicates = replicates;
            topt.rangacv.sigma_perturb = sigma_perturb;
            topt.rangacv.seed = common.seed;
            topt.jobs = common.jobs;
            TruthFile truth;
            if (topt.criterion == Criterion::tkl) {
                if (truth_path.empty())
                    throw std::runtime_error("--criterion tkl requires --truth (x1..xd,f per subject)");
                truth = read_truth(truth_path, ing.data.dim);
                topt.truth_x = &truth.x;
                topt.truth_f = &truth.f;
            }
            const LambdaSelection sel = select_lambda(ing.data, parse_lambda_grid(grid_text), em, topt);
            std::vector<std::vector<std::string>> rows;
            for (size_t i = 0; i < sel.lambdas.size(); ++i)
                rows.push_back({format_double(sel.lambdas[i]),
                                sel.ok[i] ? format_double(sel.values[i]) : "NA",
                                sel.ok[i] ? "1" : "0"});
            write_csv(common.out_dir + "/criterion.csv", "lambda," + criterion_text + ",ok", rows);
            write_fit_outputs(common.out_dir, sel.fit, ing.data.dim);
            for (const auto& w : sel.warnings) std::cerr << "warning: " << w << "\n";
            std::cout << "tune: selected lambda=" << format_double(sel.lambda) << " ("
                      << criterion_text << "=" << format_double(sel.values[sel.index]) << ")\n";
            return 0;
        }

        if (sim_cmd->parsed()) {
            Scenario sc;
            sc.sim_case = sim_case_from_name(scenario_text);
            sc.n = sim_n > 0 ? sim_n : sim_default_n(sc.sim_case);
            if (error_text != "none") {
                const auto colon = error_text.find(':');
                if (colon == std::string::npos)
                    throw std::runtime_error("--error expects normal:sigma or uniform:delta");
                sc.error = error_text.rfind("normal", 0) == 0 ? Scenario::ErrorKind::normal
                                                              : Scenario::ErrorKind::uniform;
                sc.error_scale = std::stod(error_text.substr(colon + 1));
                sc.error_known = error_known;
            }
            sc.missingness = missing;

            ComparisonOptions copt;
            copt.replicates = sim_replicates;
            copt.lambda_grid = parse_lambda_grid(sim_grid_text);
            copt.em = em;
            copt.seed = common.seed;
            copt.jobs = common.jobs;
            copt.rangacv.sigma_perturb = sigma_perturb;
            copt.methods.clear();
            {
                std::stringstream ss(methods_text);
                std::string cell;
                while (std::getline(ss, cell, ',')) copt.methods.push_back(cell);
            }
            copt.tunings.clear();
            {
                std::stringstream ss(tuning_text);
                std::string cell;
                while (std::getline(ss, cell, ',')) copt.tunings.push_back(parse_criterion(cell));
            }

            const auto rows = run_comparison(sc, copt);
            ensure_dir(common.out_dir);
            std::vector<std::vector<std::string>> csv;
            for (const auto& r : rows)
                csv.push_back({std::to_string(r.replicate), r.method, r.tuning, format_double(r.lambda),
                               format_double(r.tkl_value)});
            write_csv(common.out_dir + "/comparison.csv", "replicate,method,tuning,lambda_selected,tkl", csv);

            std::vector<std::vector<std::string>> summary;
            for (const auto& method : copt.methods) {
                for (const auto crit : copt.tunings) {
                    std::vector<double> v;
                    for (const auto& r : rows)
                        if (r.method == method && r.tuning == criterion_name(crit)) v.push_back(r.tkl_value);
                    summary.push_back({method, criterion_name(crit), format_double(quantile(v, 0.0)),
                                       format_double(quantile(v, 0.25)), format_double(quantile(v, 0.5)),
                                       format_double(quantile(v, 0.75)), format_double(quantile(v, 1.0))});
                }
            }
            write_csv(common.out_dir + "/summary.csv", "method,tuning,min,q25,median,q75,max", summary);
            std::cout << "simulate: " << rows.size() << " rows -> " << common.out_dir << "/comparison.csv\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
