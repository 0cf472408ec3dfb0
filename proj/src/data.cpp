#include "tabret/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace tabret {

using nlohmann::json;

void TableSchema::validate() const {
    if (columns.empty()) throw ValidationError("schema has no columns");
    for (const auto& c : columns) {
        if (c.name.empty()) throw ValidationError("empty column name");
        if (c.kind == ColumnKind::Categorical && c.cardinality < 2)
            throw ValidationError("categorical column '" + c.name +
                                  "' needs cardinality >= 2");
    }
    for (size_t i = 0; i < columns.size(); ++i)
        for (size_t j = i + 1; j < columns.size(); ++j)
            if (columns[i].name == columns[j].name)
                throw ValidationError("duplicate column name '" + columns[i].name + "'");
    if (target) {
        const ColumnSpec* c = find(*target);
        if (!c) throw ValidationError("target '" + *target + "' not in schema");
    }
}

const ColumnSpec* TableSchema::find(const std::string& name) const {
    for (const auto& c : columns)
        if (c.name == name) return &c;
    return nullptr;
}

int TableSchema::index_of(const std::string& name) const {
    for (size_t i = 0; i < columns.size(); ++i)
        if (columns[i].name == name) return static_cast<int>(i);
    return -1;
}

std::vector<ColumnSpec> TableSchema::feature_columns() const {
    std::vector<ColumnSpec> out;
    for (const auto& c : columns)
        if (!target || c.name != *target) out.push_back(c);
    return out;
}

void Dataset::validate() const {
    schema.validate();
    for (const auto& c : schema.columns) {
        if (c.kind == ColumnKind::Numerical) {
            auto it = numerical.find(c.name);
            if (it == numerical.end() ||
                static_cast<int>(it->second.size()) != row_count)
                throw DataError("numerical column '" + c.name + "' has wrong length");
            for (double v : it->second)
                if (!std::isfinite(v)) throw DataError("non-finite value in '" + c.name + "'");
        } else {
            auto it = categorical.find(c.name);
            if (it == categorical.end() ||
                static_cast<int>(it->second.size()) != row_count)
                throw DataError("categorical column '" + c.name + "' has wrong length");
            for (int v : it->second)
                if (v < 0 || v >= c.cardinality)
                    throw DataError("category index out of range in '" + c.name + "'");
        }
    }
}

Dataset Dataset::select_rows(const std::vector<int>& rows) const {
    Dataset out;
    out.schema = schema;
    out.row_count = static_cast<int>(rows.size());
    out.categories = categories;
    for (const auto& [name, col] : numerical) {
        auto& dst = out.numerical[name];
        dst.reserve(rows.size());
        for (int r : rows) dst.push_back(col[r]);
    }
    for (const auto& [name, col] : categorical) {
        auto& dst = out.categorical[name];
        dst.reserve(rows.size());
        for (int r : rows) dst.push_back(col[r]);
    }
    return out;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

Dataset load_csv(const std::string& path, const TableSchema& schema,
                 const std::map<std::string, std::vector<std::string>>* category_maps,
                 UnseenCategoryPolicy policy) {
    schema.validate();
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty file: " + path);
    std::vector<std::string> header = split_line(line);

    std::vector<int> col_pos(schema.columns.size(), -1);
    for (size_t i = 0; i < schema.columns.size(); ++i) {
        auto it = std::find(header.begin(), header.end(), schema.columns[i].name);
        if (it == header.end())
            throw DataError("missing column '" + schema.columns[i].name + "' in " + path);
        col_pos[i] = static_cast<int>(it - header.begin());
    }

    Dataset out;
    out.schema = schema;
    std::map<std::string, std::map<std::string, int>> maps;
    if (category_maps) {
        for (const auto& [name, order] : *category_maps)
            for (size_t i = 0; i < order.size(); ++i) maps[name][order[i]] = static_cast<int>(i);
        out.categories = *category_maps;
    }

    int row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells = split_line(line);
        for (size_t i = 0; i < schema.columns.size(); ++i) {
            const ColumnSpec& c = schema.columns[i];
            if (col_pos[i] >= static_cast<int>(cells.size()))
                throw DataError("row " + std::to_string(row) + " too short in " + path);
            const std::string& cell = cells[col_pos[i]];
            if (cell.empty())
                throw DataError("missing value at row " + std::to_string(row) +
                                " column '" + c.name + "'");
            if (c.kind == ColumnKind::Numerical) {
                size_t used = 0;
                double v;
                try {
                    v = std::stod(cell, &used);
                } catch (const std::exception&) {
                    throw DataError("unparseable numerical cell '" + cell + "' in '" +
                                    c.name + "'");
                }
                if (used != cell.size())
                    throw DataError("unparseable numerical cell '" + cell + "' in '" +
                                    c.name + "'");
                out.numerical[c.name].push_back(v);
            } else {
                // columns absent from a supplied map fall back to
                // first-appearance encoding
                const bool mapped = category_maps && category_maps->count(c.name) > 0;
                auto& m = maps[c.name];
                auto it = m.find(cell);
                int code;
                if (it != m.end()) {
                    code = it->second;
                } else if (!mapped) {
                    code = static_cast<int>(m.size());
                    m[cell] = code;
                    out.categories[c.name].push_back(cell);
                } else if (policy == UnseenCategoryPolicy::ReservedIndex) {
                    // all unseen values share the reserved extra index
                    code = static_cast<int>(category_maps->at(c.name).size());
                } else {
                    throw DataError("unseen category '" + cell + "' in '" + c.name + "'");
                }
                if (code >= c.cardinality)
                    throw DataError("category index " + std::to_string(code) +
                                    " exceeds cardinality of '" + c.name + "'");
                out.categorical[c.name].push_back(code);
            }
        }
        ++row;
    }
    out.row_count = row;
    out.validate();
    return out;
}

void save_csv(const Dataset& data, const std::string& path) {
    std::ofstream outf(path);
    if (!outf) throw DataError("cannot write " + path);
    for (size_t i = 0; i < data.schema.columns.size(); ++i) {
        if (i) outf << ',';
        outf << data.schema.columns[i].name;
    }
    outf << '\n';
    outf.precision(17);
    for (int r = 0; r < data.row_count; ++r) {
        for (size_t i = 0; i < data.schema.columns.size(); ++i) {
            const ColumnSpec& c = data.schema.columns[i];
            if (i) outf << ',';
            if (c.kind == ColumnKind::Numerical) {
                outf << data.numerical.at(c.name)[r];
            } else {
                int code = data.categorical.at(c.name)[r];
                auto it = data.categories.find(c.name);
                if (it != data.categories.end() &&
                    code < static_cast<int>(it->second.size()))
                    outf << it->second[code];
                else
                    outf << code;
            }
        }
        outf << '\n';
    }
}

namespace {

// Linear-interpolated empirical quantile of sorted values at probability p.
double quantile_sorted(const std::vector<double>& sorted, double p) {
    const size_t n = sorted.size();
    double h = p * static_cast<double>(n - 1);
    size_t lo = static_cast<size_t>(h);
    if (lo >= n - 1) return sorted[n - 1];
    double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace

PreprocessorState fit_preprocessor(const Dataset& train, int n_quantiles) {
    if (train.row_count < 2) throw DataError("need at least 2 rows to fit preprocessor");
    PreprocessorState st;
    st.n_quantiles = std::min(n_quantiles, train.row_count);
    if (st.n_quantiles < 2) st.n_quantiles = 2;
    for (const auto& c : train.schema.columns) {
        if (c.kind == ColumnKind::Numerical) {
            std::vector<double> sorted = train.numerical.at(c.name);
            std::sort(sorted.begin(), sorted.end());
            auto& refs = st.references[c.name];
            refs.resize(st.n_quantiles);
            for (int i = 0; i < st.n_quantiles; ++i)
                refs[i] = quantile_sorted(sorted,
                                          static_cast<double>(i) / (st.n_quantiles - 1));
        } else {
            auto it = train.categories.find(c.name);
            if (it != train.categories.end()) st.category_order[c.name] = it->second;
        }
    }
    return st;
}

Dataset apply_preprocessor(const PreprocessorState& state, const Dataset& data) {
    Dataset out = data;
    for (auto& [name, refs] : state.references) {
        auto it = out.numerical.find(name);
        if (it == out.numerical.end()) continue;
        const int nq = static_cast<int>(refs.size());
        for (double& x : it->second) {
            if (x <= refs.front()) {
                x = 0.0;
            } else if (x >= refs.back()) {
                x = 1.0;
            } else {
                auto ub = std::upper_bound(refs.begin(), refs.end(), x);
                int u = static_cast<int>(ub - refs.begin());
                int l = u - 1;
                double pl = static_cast<double>(l) / (nq - 1);
                double pu = static_cast<double>(u) / (nq - 1);
                x = pl + (x - refs[l]) / (refs[u] - refs[l]) * (pu - pl);
            }
        }
    }
    return out;
}

SplitResult split_dataset(const Dataset& data, uint64_t seed, double test_frac,
                          double val_frac, int finetune_count) {
    if (test_frac <= 0.0 || test_frac >= 1.0 || val_frac <= 0.0 || val_frac >= 1.0)
        throw ValidationError("split fractions must lie in (0,1)");
    std::vector<int> idx(data.row_count);
    for (int i = 0; i < data.row_count; ++i) idx[i] = i;
    RngState rng = RngState(seed).split("split");
    rng.shuffle(idx);

    const int n_test = static_cast<int>(std::floor(test_frac * data.row_count));
    if (n_test + finetune_count >= data.row_count)
        throw DataError("not enough rows for requested splits");
    const int rest = data.row_count - n_test - finetune_count;
    const int n_val = static_cast<int>(std::floor(val_frac * rest));

    auto take = [&](int from, int count) {
        return data.select_rows({idx.begin() + from, idx.begin() + from + count});
    };
    SplitResult out{
        .pretrain = take(n_test + finetune_count + n_val, rest - n_val),
        .validation = take(n_test + finetune_count, n_val),
        .finetune = take(n_test, finetune_count),
        .test = take(0, n_test),
    };
    return out;
}

ColumnAlignment align_schemas(const TableSchema& pretext, const TableSchema& downstream) {
    ColumnAlignment out;
    for (const auto& c : downstream.columns) {
        if (downstream.target && c.name == *downstream.target) continue;
        const ColumnSpec* p = pretext.find(c.name);
        if (p) {
            if (p->kind != c.kind)
                throw ValidationError("column '" + c.name + "' kind mismatch");
            if (c.kind == ColumnKind::Categorical && p->cardinality != c.cardinality)
                throw ValidationError("column '" + c.name + "' cardinality mismatch");
            out.overlap.push_back(c.name);
        } else {
            out.new_columns.push_back(c.name);
        }
    }
    for (const auto& c : pretext.columns) {
        if (pretext.target && c.name == *pretext.target) continue;
        if (!downstream.find(c.name) ||
            (downstream.target && c.name == *downstream.target))
            out.dropped.push_back(c.name);
    }
    return out;
}

std::vector<Batch> make_batches(const Dataset& data, int batch_size, bool shuffle_rows,
                                uint64_t seed) {
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    std::vector<int> idx(data.row_count);
    for (int i = 0; i < data.row_count; ++i) idx[i] = i;
    if (shuffle_rows) {
        RngState rng = RngState(seed).split("batches");
        rng.shuffle(idx);
    }
    std::vector<Batch> out;
    for (int start = 0; start < data.row_count; start += batch_size) {
        int n = std::min(batch_size, data.row_count - start);
        Batch b;
        b.row_count = n;
        for (const auto& [name, col] : data.numerical) {
            auto& dst = b.numerical[name];
            dst.reserve(n);
            for (int i = 0; i < n; ++i) dst.push_back(col[idx[start + i]]);
        }
        for (const auto& [name, col] : data.categorical) {
            auto& dst = b.categorical[name];
            dst.reserve(n);
            for (int i = 0; i < n; ++i) dst.push_back(col[idx[start + i]]);
        }
        out.push_back(std::move(b));
    }
    return out;
}

std::string PreprocessorState::to_json() const {
    json j;
    j["n_quantiles"] = n_quantiles;
    j["references"] = references;
    j["category_order"] = category_order;
    return j.dump(2);
}

PreprocessorState PreprocessorState::from_json(const std::string& text) {
    json j = json::parse(text);
    PreprocessorState st;
    st.n_quantiles = j.at("n_quantiles").get<int>();
    st.references = j.at("references").get<std::map<std::string, std::vector<double>>>();
    st.category_order =
        j.at("category_order").get<std::map<std::string, std::vector<std::string>>>();
    for (const auto& [name, refs] : st.references)
        if (!std::is_sorted(refs.begin(), refs.end()))
            throw ValidationError("reference quantiles not sorted for '" + name + "'");
    return st;
}

std::string schema_to_json_string(const TableSchema& schema) {
    json cols = json::array();
    for (const auto& c : schema.columns) {
        json jc{{"name", c.name},
                {"kind", c.kind == ColumnKind::Numerical ? "numerical" : "categorical"}};
        if (c.kind == ColumnKind::Categorical) jc["cardinality"] = c.cardinality;
        cols.push_back(jc);
    }
    json j{{"columns", cols}};
    if (schema.target) j["target"] = *schema.target;
    return j.dump(2);
}

TableSchema schema_from_json_string(const std::string& text) {
    json j = json::parse(text);
    TableSchema s;
    for (const auto& jc : j.at("columns")) {
        ColumnSpec c;
        c.name = jc.at("name").get<std::string>();
        std::string kind = jc.at("kind").get<std::string>();
        if (kind == "numerical") {
            c.kind = ColumnKind::Numerical;
        } else if (kind == "categorical") {
            c.kind = ColumnKind::Categorical;
            c.cardinality = jc.at("cardinality").get<int>();
        } else {
            throw ValidationError("unknown column kind '" + kind + "'");
        }
        s.columns.push_back(c);
    }
    if (j.contains("target")) s.target = j.at("target").get<std::string>();
    s.validate();
    return s;
}

namespace {

// Acklam's rational approximation of the standard normal quantile.
double inv_normal_cdf(double p) {
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1 - plow;
    double q, r;
    if (p < plow) {
        q = std::sqrt(-2 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    if (p > phigh) {
        q = std::sqrt(-2 * std::log(1 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    q = p - 0.5;
    r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

struct SynthColumn {
    ColumnSpec spec;
    std::vector<double> readout;  // unit vector in latent space
    std::vector<double> edges;    // bucket edges for categorical columns
};

SynthColumn make_column(const std::string& name, bool categorical, int cardinality,
                        int latent_dim, double noise, RngState& rng) {
    SynthColumn col;
    col.spec.name = name;
    col.spec.kind = categorical ? ColumnKind::Categorical : ColumnKind::Numerical;
    col.spec.cardinality = categorical ? cardinality : 0;
    col.readout.resize(latent_dim);
    double norm = 0.0;
    for (double& w : col.readout) {
        w = rng.normal();
        norm += w * w;
    }
    norm = std::sqrt(norm);
    for (double& w : col.readout) w /= norm;
    if (categorical) {
        // readout is unit-norm, so the raw column value is N(0, 1 + noise^2)
        double sd = std::sqrt(1.0 + noise * noise);
        for (int i = 1; i < cardinality; ++i)
            col.edges.push_back(sd * inv_normal_cdf(static_cast<double>(i) / cardinality));
    }
    return col;
}

void fill_rows(Dataset& data, const std::vector<SynthColumn>& cols,
               const std::vector<double>& target_dir, double noise, int rows,
               RngState& rng) {
    const int latent_dim = static_cast<int>(cols.front().readout.size());
    data.row_count = rows;
    for (const auto& c : cols) {
        if (c.spec.kind == ColumnKind::Numerical)
            data.numerical[c.spec.name].reserve(rows);
        else
            data.categorical[c.spec.name].reserve(rows);
    }
    const bool with_target = !target_dir.empty();
    if (with_target) data.categorical["label"].reserve(rows);
    std::vector<double> z(latent_dim);
    for (int r = 0; r < rows; ++r) {
        for (double& v : z) v = rng.normal();
        for (const auto& c : cols) {
            double raw = 0.0;
            for (int l = 0; l < latent_dim; ++l) raw += c.readout[l] * z[l];
            raw += noise * rng.normal();
            if (c.spec.kind == ColumnKind::Numerical) {
                data.numerical[c.spec.name].push_back(raw);
            } else {
                int bucket = 0;
                while (bucket < static_cast<int>(c.edges.size()) &&
                       raw > c.edges[bucket])
                    ++bucket;
                data.categorical[c.spec.name].push_back(bucket);
            }
        }
        if (with_target) {
            double s = 0.0;
            for (int l = 0; l < latent_dim; ++l) s += target_dir[l] * z[l];
            data.categorical["label"].push_back(s > 0.0 ? 1 : 0);
        }
    }
}

}  // namespace

SyntheticResult generate_synthetic(const SyntheticSpec& spec, uint64_t seed) {
    if (spec.overlap > spec.pretext_columns || spec.overlap > spec.downstream_columns)
        throw ValidationError("overlap exceeds a table's column count");
    RngState root(seed);
    RngState structure = root.split("structure");

    auto is_cat = [&](int i) {
        return spec.categorical_every > 0 && (i % spec.categorical_every) ==
                                                 spec.categorical_every - 1;
    };

    std::vector<SynthColumn> shared, pretext_only, downstream_only;
    for (int i = 0; i < spec.overlap; ++i)
        shared.push_back(make_column("c" + std::to_string(i), is_cat(i),
                                     spec.cardinality, spec.latent_dim, spec.noise,
                                     structure));
    for (int i = spec.overlap; i < spec.pretext_columns; ++i)
        pretext_only.push_back(make_column("p" + std::to_string(i), is_cat(i),
                                           spec.cardinality, spec.latent_dim,
                                           spec.noise, structure));
    for (int i = spec.overlap; i < spec.downstream_columns; ++i)
        downstream_only.push_back(make_column("d" + std::to_string(i), is_cat(i),
                                              spec.cardinality, spec.latent_dim,
                                              spec.noise, structure));
    std::vector<double> target_dir(spec.latent_dim);
    double norm = 0.0;
    for (double& v : target_dir) {
        v = structure.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : target_dir) v /= norm;

    SyntheticResult out;
    std::vector<SynthColumn> pre_cols = shared;
    pre_cols.insert(pre_cols.end(), pretext_only.begin(), pretext_only.end());
    for (const auto& c : pre_cols) out.pretext.schema.columns.push_back(c.spec);
    RngState pre_rng = root.split("pretext_rows");
    fill_rows(out.pretext, pre_cols, {}, spec.noise, spec.pretext_rows, pre_rng);

    std::vector<SynthColumn> down_cols = shared;
    down_cols.insert(down_cols.end(), downstream_only.begin(), downstream_only.end());
    for (const auto& c : down_cols) out.downstream.schema.columns.push_back(c.spec);
    out.downstream.schema.columns.push_back(
        ColumnSpec{"label", ColumnKind::Categorical, 2});
    out.downstream.schema.target = "label";
    RngState down_rng = root.split("downstream_rows");
    fill_rows(out.downstream, down_cols, target_dir, spec.noise, spec.downstream_rows,
              down_rng);

    out.pretext.validate();
    out.downstream.validate();
    return out;
}

}  // namespace tabret
