#include "qple/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

namespace qple {

using nlohmann::json;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << header << "\n";
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
        out << "\n";
    }
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

Vector json_vector(const json& j) {
    Vector v(j.size());
    for (size_t i = 0; i < j.size(); ++i) v[static_cast<int>(i)] = j[i].get<double>();
    return v;
}

Matrix json_matrix(const json& j) {
    if (j.empty()) return Matrix(0, 0);
    Matrix m(j.size(), j[0].size());
    for (size_t i = 0; i < j.size(); ++i)
        for (size_t k = 0; k < j[i].size(); ++k) m(static_cast<int>(i), static_cast<int>(k)) = j[i][k].get<double>();
    return m;
}

json vector_json(const Vector& v) {
    json j = json::array();
    for (int i = 0; i < v.size(); ++i) j.push_back(v[i]);
    return j;
}

json matrix_json(const Matrix& m) {
    json j = json::array();
    for (int i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (int k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
        j.push_back(row);
    }
    return j;
}

json kernel_json(const KernelSpec& k) {
    json j;
    switch (k.type) {
        case KernelSpec::Type::cubic_spline: j["type"] = "cubic_spline"; break;
        case KernelSpec::Type::thin_plate: j["type"] = "thin_plate"; break;
        case KernelSpec::Type::gaussian_rbf:
            j["type"] = "gaussian_rbf";
            j["bandwidth"] = k.bandwidth;
            break;
        case KernelSpec::Type::ssanova: {
            j["type"] = "ssanova";
            json blocks = json::array();
            for (const auto& blk : k.blocks) {
                json b;
                b["coords"] = blk.coords;
                b["theta"] = blk.theta;
                b["kernel"] = kernel_json(blk.component());
                blocks.push_back(b);
            }
            j["blocks"] = blocks;
            break;
        }
    }
    return j;
}

KernelSpec kernel_from_json(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "cubic_spline") return KernelSpec::cubic_spline();
    if (type == "thin_plate") return KernelSpec::thin_plate();
    if (type == "gaussian_rbf") return KernelSpec::gaussian_rbf(j.at("bandwidth").get<double>());
    if (type == "ssanova") {
        std::vector<KernelSpec::Block> blocks;
        for (const auto& b : j.at("blocks")) {
            KernelSpec::Block blk;
            blk.coords = b.at("coords").get<std::vector<int>>();
            blk.theta = b.at("theta").get<double>();
            const KernelSpec comp = kernel_from_json(b.at("kernel"));
            blk.type = comp.type;
            blk.bandwidth = comp.bandwidth;
            blocks.push_back(blk);
        }
        return KernelSpec::ssanova(blocks);
    }
    throw std::runtime_error("model json: unknown kernel type " + type);
}

}  // namespace

std::string model_to_json_string(const FitResult& fit) {
    json j;
    j["family"] = fit.family.is_binomial() ? json{{"name", "binomial"}, {"trials", fit.family.trials}}
                                           : json{{"name", "poisson"}};
    j["kernel"] = kernel_json(fit.model.kernel);
    j["lambda"] = fit.lambda;
    j["null_coef"] = vector_json(fit.model.d);
    j["kernel_coef"] = vector_json(fit.model.c);
    j["nodes"] = matrix_json(fit.model.nodes);
    if (!fit.model.rescale.identity()) {
        j["rescale"] = {{"lo", vector_json(fit.model.rescale.lo)},
                        {"range", vector_json(fit.model.rescale.range)}};
    }
    json theta;
    if (fit.error_model) {
        theta["error_model"] = {
            {"kind", fit.error_model->kind == ErrorModel::Kind::normal_iso ? "normal_iso" : "uniform_sym"},
            {"scale", vector_json(fit.error_model->scale)},
            {"known", fit.error_model->known}};
    }
    if (fit.covariate_model) {
        json cm;
        cm["gaussian_coords"] = fit.covariate_model->gaussian_coords;
        cm["regressor_coords"] = fit.covariate_model->regressor_coords;
        cm["binary_coords"] = fit.covariate_model->binary_coords;
        cm["coef"] = matrix_json(fit.covariate_model->coef);
        cm["sigma"] = matrix_json(fit.covariate_model->sigma);
        json lc = json::array();
        for (const auto& v : fit.covariate_model->logit_coef) lc.push_back(vector_json(v));
        cm["logit_coef"] = lc;
        theta["covariate_model"] = cm;
    }
    j["theta"] = theta;
    j["em_trace"] = fit.em_trace;
    j["converged"] = fit.converged;
    j["iterations"] = fit.iterations;
    j["warnings"] = fit.warnings;
    return j.dump(2);
}

RepresenterModel model_from_json_string(const std::string& text) {
    const json j = json::parse(text);
    RepresenterModel m;
    const auto& fam = j.at("family");
    m.family = fam.at("name").get<std::string>() == "binomial"
                   ? ExpFamilySpec::binomial(fam.at("trials").get<int>())
                   : ExpFamilySpec::poisson();
    m.kernel = kernel_from_json(j.at("kernel"));
    m.lambda = j.at("lambda").get<double>();
    m.d = json_vector(j.at("null_coef"));
    m.c = json_vector(j.at("kernel_coef"));
    m.nodes = json_matrix(j.at("nodes"));
    if (j.contains("rescale")) {
        m.rescale.lo = json_vector(j.at("rescale").at("lo"));
        m.rescale.range = json_vector(j.at("rescale").at("range"));
    }
    return m;
}

ExpFamilySpec parse_family(const std::string& text) {
    if (text == "poisson") return ExpFamilySpec::poisson();
    if (text.rfind("binomial", 0) == 0) {
        const auto colon = text.find(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("family: binomial needs a trial count, e.g. binomial:2");
        return ExpFamilySpec::binomial(std::stoi(text.substr(colon + 1)));
    }
    throw std::invalid_argument("family: expected poisson or binomial:k, got " + text);
}

KernelSpec parse_kernel(const std::string& text) {
    if (text == "cubic") return KernelSpec::cubic_spline();
    if (text == "tps") return KernelSpec::thin_plate();
    if (text.rfind("rbf:", 0) == 0) return KernelSpec::gaussian_rbf(std::stod(text.substr(4)));
    if (text.rfind("ssanova:", 0) == 0) {
        std::ifstream in(text.substr(8));
        if (!in) throw std::invalid_argument("kernel: cannot open ssanova spec file " + text.substr(8));
        json j;
        in >> j;
        return kernel_from_json(j);
    }
    throw std::invalid_argument("kernel: expected cubic | tps | rbf:gamma | ssanova:file, got " + text);
}

IngestResult ingest(const std::string& csv_path, const std::string& sidecar_path,
                    const ExpFamilySpec& family, const KernelSpec& kernel) {
    std::ifstream in(csv_path);
    if (!in) throw std::runtime_error("cannot open dataset: " + csv_path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("dataset is empty: " + csv_path);
    const auto header = split(line, ',');
    if (header.empty() || header[0] != "y")
        throw std::runtime_error("malformed header: expected `y,x1,...,xd`, got `" + line + "`");
    const int d = static_cast<int>(header.size()) - 1;
    if (d < 1) throw std::runtime_error("malformed header: expected `y,x1,...,xd`, got `" + line + "`");
    for (int j = 0; j < d; ++j)
        if (header[j + 1] != "x" + std::to_string(j + 1))
            throw std::runtime_error("malformed header: expected `y,x1,...,xd`, got `" + line + "`");

    std::vector<double> ys;
    std::vector<Vector> xs;
    int row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty()) continue;
        const auto cells = split(line, ',');
        if (static_cast<int>(cells.size()) != d + 1)
            throw std::runtime_error("row " + std::to_string(row_no) + ": expected " + std::to_string(d + 1) +
                                     " columns");
        ys.push_back(std::stod(cells[0]));
        Vector x(d);
        for (int j = 0; j < d; ++j)
            x[j] = (cells[j + 1] == "NA") ? std::nan("") : std::stod(cells[j + 1]);
        xs.push_back(x);
    }
    const int n = static_cast<int>(ys.size());
    if (n == 0) throw std::runtime_error("dataset has no rows: " + csv_path);

    json side;
    {
        std::ifstream sin(sidecar_path);
        if (!sin) throw std::runtime_error("cannot open sidecar spec: " + sidecar_path);
        sin >> side;
    }
    json default_spec = side.contains("default") ? side.at("default") : json{{"type", "exact"}};
    const json subjects = side.contains("subjects") ? side.at("subjects") : json::object();

    auto spec_for = [&](int i) -> json {
        const std::string key = std::to_string(i);
        if (subjects.contains(key)) return subjects.at(key);
        return default_spec;
    };

    // First pass: classify rows, collect the error model, find the coordinate
    // ranges (noisy coordinates widened by four scales so that shifted
    // quadrature nodes stay inside the unit box).
    IngestResult out;
    Dataset& ds = out.data;
    ds.family = family;
    ds.kernel = kernel;
    ds.dim = d;
    ds.y = Eigen::Map<Vector>(ys.data(), n);
    for (int j = 0; j < d; ++j) out.x_names.push_back(header[j + 1]);

    std::optional<ErrorModel> error;
    bool any_missing = false;
    Vector lo = Vector::Constant(d, std::numeric_limits<double>::infinity());
    Vector hi = Vector::Constant(d, -std::numeric_limits<double>::infinity());
    auto widen = [&](const Vector& x, double margin_scale, const Vector* scale) {
        for (int j = 0; j < d; ++j) {
            if (std::isnan(x[j])) continue;
            const double m = scale ? margin_scale * (*scale)[j] : 0.0;
            lo[j] = std::min(lo[j], x[j] - m);
            hi[j] = std::max(hi[j], x[j] + m);
        }
    };

    std::vector<json> specs;
    for (int i = 0; i < n; ++i) {
        json sp = spec_for(i);
        const std::string type = sp.at("type").get<std::string>();
        if (type == "normal_error" || type == "uniform_error") {
            ErrorModel em;
            em.kind = type == "normal_error" ? ErrorModel::Kind::normal_iso : ErrorModel::Kind::uniform_sym;
            const auto& s = sp.at(type == "normal_error" ? "sigma" : "delta");
            em.scale = s.is_array() ? json_vector(s) : Vector::Constant(d, s.get<double>());
            em.known = sp.value("known", true);
            if (!error) {
                error = em;
            } else if (error->kind != em.kind || error->known != em.known ||
                       (error->scale - em.scale).cwiseAbs().maxCoeff() > 1e-12) {
                throw std::runtime_error("row " + std::to_string(i + 2) +
                                         ": error model differs across subjects (theta is shared)");
            }
            widen(xs[i], 4.0, &em.scale);
        } else {
            widen(xs[i], 0.0, nullptr);
        }
        if (type == "missing_model") any_missing = true;
        bool has_nan = false;
        for (int j = 0; j < d; ++j) has_nan = has_nan || std::isnan(xs[i][j]);
        if (has_nan && type != "missing_model")
            throw std::runtime_error("row " + std::to_string(i + 2) +
                                     ": NA coordinate without a missing_model spec");
        specs.push_back(sp);
    }

    RescaleMap map;
    map.lo = lo;
    map.range = Vector(d);
    for (int j = 0; j < d; ++j) map.range[j] = std::max(hi[j] - lo[j], 1e-12);
    ds.rescale = map;

    if (error) {
        error->scale = error->scale.cwiseQuotient(map.range);
        ds.error_model = error;
    }

    for (int i = 0; i < n; ++i) {
        const json& sp = specs[i];
        const std::string type = sp.at("type").get<std::string>();
        Vector xu(d);
        for (int j = 0; j < d; ++j)
            xu[j] = std::isnan(xs[i][j]) ? std::nan("") : (xs[i][j] - map.lo[j]) / map.range[j];
        if (type == "exact") {
            ds.obs.push_back(CovariateObservation::exact(xu));
        } else if (type == "normal_error" || type == "uniform_error") {
            ds.obs.push_back(CovariateObservation::noisy(xu));
        } else if (type == "missing_model") {
            ds.obs.push_back(std::isnan(xu.minCoeff()) || xu.hasNaN()
                                 ? CovariateObservation::partially_missing(xu)
                                 : CovariateObservation::exact(xu));
        } else if (type == "discrete") {
            QuadratureRule rule;
            const auto& vals = sp.at("values");
            Vector probs = json_vector(sp.at("probs"));
            if (std::abs(probs.sum() - 1.0) > 1e-9)
                throw std::runtime_error("row " + std::to_string(i + 2) + ": discrete probs do not sum to 1");
            Matrix nodes = vals[0].is_array() ? json_matrix(vals) : Matrix(json_vector(vals));
            if (nodes.cols() != d && nodes.cols() == 1 && d == 1) nodes = nodes;  // univariate column
            for (int r = 0; r < nodes.rows(); ++r)
                for (int j = 0; j < d; ++j) nodes(r, j) = (nodes(r, j) - map.lo[j]) / map.range[j];
            rule.nodes = nodes;
            rule.weights = probs;
            ds.obs.push_back(CovariateObservation::discrete(rule));
        } else if (type == "mvn") {
            Vector mu = json_vector(sp.at("mu"));
            Matrix sigma = json_matrix(sp.at("sigma"));
            for (int j = 0; j < d; ++j) mu[j] = (mu[j] - map.lo[j]) / map.range[j];
            for (int a = 0; a < d; ++a)
                for (int b2 = 0; b2 < d; ++b2) sigma(a, b2) /= map.range[a] * map.range[b2];
            ds.obs.push_back(CovariateObservation::distributional(mvn_chain(mu, sigma)));
        } else {
            throw std::runtime_error("row " + std::to_string(i + 2) + ": unknown observation type " + type);
        }
    }

    if (any_missing) {
        CovariateModel cm;
        if (side.contains("covariate_model")) {
            const json& cj = side.at("covariate_model");
            cm.gaussian_coords = cj.value("gaussian_coords", std::vector<int>{});
            cm.regressor_coords = cj.value("regressor_coords", std::vector<int>{});
            cm.binary_coords = cj.value("binary_coords", std::vector<int>{});
            cm.known = cj.value("known", false);
        }
        if (cm.gaussian_coords.empty() && cm.binary_coords.empty()) {
            for (int j = 0; j < d; ++j) cm.gaussian_coords.push_back(j);
        }
        ds.covariate_model = cm;
    }
    return out;
}

}  // namespace qple
