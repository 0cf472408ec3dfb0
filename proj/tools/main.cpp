// Command-line driver: pretrain / retokenize / finetune / evaluate /
// gradcheck / synth. Every command is a pure function of (config, input
// files, seed); outputs are written atomically where it matters.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tabret/checkpoint.hpp"
#include "tabret/data.hpp"
#include "tabret/diagnostics.hpp"
#include "tabret/eval.hpp"
#include "tabret/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tabret;

namespace {

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("invalid JSON in '" + path + "': " + e.what());
    }
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
    if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key))
            throw ValidationError("unknown key '" + key + "' in " + where);
    }
}

// Paths inside a config resolve relative to the config file's directory.
std::string resolve_path(const std::string& config_path, const std::string& p) {
    fs::path fp(p);
    if (fp.is_absolute()) return p;
    return (fs::path(config_path).parent_path() / fp).string();
}

template <typename T>
void maybe_set(const json& j, const std::string& key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception&) {
            throw ValidationError("key '" + key + "' has the wrong type");
        }
    }
}

struct SplitConfig {
    double test_frac = 0.2;
    double val_frac = 0.1;
    int finetune_count = 100;
};

struct RunConfig {
    std::string path;  // config file location, for relative-path resolution
    std::string schema_path;
    std::string data_path;
    std::string categories_path;  // optional: column -> ordered category list
    json model = json::object();
    json phase = json::object();
    SplitConfig split;
    int n_quantiles = 1000;
};

RunConfig parse_run_config(const std::string& path) {
    json j = load_json_file(path);
    reject_unknown_keys(
        j, {"schema", "data", "categories", "model", "phase", "split", "n_quantiles"},
        "config");
    RunConfig cfg;
    cfg.path = path;
    if (!j.contains("schema") || !j.contains("data"))
        throw ValidationError("config requires 'schema' and 'data' paths");
    cfg.schema_path = resolve_path(path, j.at("schema").get<std::string>());
    cfg.data_path = resolve_path(path, j.at("data").get<std::string>());
    if (j.contains("categories"))
        cfg.categories_path = resolve_path(path, j.at("categories").get<std::string>());
    if (j.contains("model")) {
        reject_unknown_keys(j["model"],
                            {"n_blocks", "d_token", "n_heads", "ffn_size_factor",
                             "attn_dropout", "ffn_dropout", "residual_dropout", "d_pe",
                             "ln_eps"},
                            "config.model");
        cfg.model = j["model"];
    }
    if (j.contains("phase")) {
        reject_unknown_keys(j["phase"],
                            {"epochs", "batch_size", "base_lr", "warmup_epochs",
                             "weight_decay", "beta1", "beta2", "mask_ratio",
                             "shuffle_ratio", "early_stop_patience"},
                            "config.phase");
        cfg.phase = j["phase"];
    }
    if (j.contains("split")) {
        reject_unknown_keys(j["split"], {"test_frac", "val_frac", "finetune_count"},
                            "config.split");
        maybe_set(j["split"], "test_frac", cfg.split.test_frac);
        maybe_set(j["split"], "val_frac", cfg.split.val_frac);
        maybe_set(j["split"], "finetune_count", cfg.split.finetune_count);
    }
    maybe_set(j, "n_quantiles", cfg.n_quantiles);
    return cfg;
}

TabRetConfig model_config_from(const json& m) {
    TabRetConfig cfg;
    maybe_set(m, "n_blocks", cfg.n_blocks);
    maybe_set(m, "d_token", cfg.d_token);
    maybe_set(m, "n_heads", cfg.n_heads);
    maybe_set(m, "ffn_size_factor", cfg.ffn_size_factor);
    maybe_set(m, "attn_dropout", cfg.attn_dropout);
    maybe_set(m, "ffn_dropout", cfg.ffn_dropout);
    maybe_set(m, "residual_dropout", cfg.residual_dropout);
    maybe_set(m, "d_pe", cfg.d_pe);
    maybe_set(m, "ln_eps", cfg.ln_eps);
    cfg.validate();
    return cfg;
}

PhaseConfig phase_config_from(const json& p, Phase phase) {
    PhaseConfig cfg = PhaseConfig::defaults(phase);
    maybe_set(p, "epochs", cfg.epochs);
    maybe_set(p, "batch_size", cfg.batch_size);
    maybe_set(p, "base_lr", cfg.base_lr);
    maybe_set(p, "warmup_epochs", cfg.warmup_epochs);
    maybe_set(p, "weight_decay", cfg.weight_decay);
    maybe_set(p, "beta1", cfg.beta1);
    maybe_set(p, "beta2", cfg.beta2);
    maybe_set(p, "mask_ratio", cfg.mask_ratio);
    maybe_set(p, "shuffle_ratio", cfg.shuffle_ratio);
    maybe_set(p, "early_stop_patience", cfg.early_stop_patience);
    cfg.validate();
    return cfg;
}

using CategoryMaps = std::map<std::string, std::vector<std::string>>;

CategoryMaps load_categories(const std::string& path) {
    json j = load_json_file(path);
    if (!j.is_object()) throw ValidationError("categories file must map column -> list");
    CategoryMaps maps;
    for (const auto& [col, arr] : j.items()) {
        try {
            maps[col] = arr.get<std::vector<std::string>>();
        } catch (const json::exception&) {
            throw ValidationError("categories for '" + col + "' must be a string list");
        }
    }
    return maps;
}

UnseenCategoryPolicy policy_from(const std::string& s) {
    if (s == "error") return UnseenCategoryPolicy::Error;
    if (s == "reserved") return UnseenCategoryPolicy::ReservedIndex;
    throw ValidationError("--unseen-category-policy must be 'error' or 'reserved'");
}

void check_precision(const std::string& p) {
    if (p != "single" && p != "double")
        throw ValidationError("--precision must be 'single' or 'double'");
}

struct LoadedTable {
    TableSchema schema;
    Dataset data;
};

// Category maps precedence: `overrides` (e.g. a prior checkpoint's encoder
// state) win over the config's categories file; remaining columns get
// first-appearance encoding.
LoadedTable load_table(const RunConfig& cfg, UnseenCategoryPolicy policy,
                       const CategoryMaps* overrides = nullptr) {
    std::ifstream in(cfg.schema_path);
    if (!in) throw DataError("cannot open '" + cfg.schema_path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    LoadedTable t;
    t.schema = schema_from_json_string(text);
    CategoryMaps maps;
    if (!cfg.categories_path.empty()) maps = load_categories(cfg.categories_path);
    if (overrides)
        for (const auto& [col, order] : *overrides) maps[col] = order;
    t.data = load_csv(cfg.data_path, t.schema, maps.empty() ? nullptr : &maps, policy);
    return t;
}

void write_text_atomic(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw DataError("cannot write '" + path + "'");
        out << text;
    }
    fs::rename(tmp, path);
}

void write_history(const std::string& path, const std::vector<EpochRecord>& history) {
    std::string text;
    for (const auto& rec : history) text += rec.to_json_line() + "\n";
    write_text_atomic(path, text);
}

void write_report(const std::string& path, const json& j) {
    write_text_atomic(path, j.dump(2) + "\n");
}

std::string out_base(const std::string& out_dir, const std::string& name) {
    fs::create_directories(out_dir);
    return (fs::path(out_dir) / name).string();
}

void save_model(const TabRetModel& model, const PreprocessorState& prep,
                CheckpointMeta meta, const std::string& precision,
                const std::string& base) {
    meta.precision = precision;
    save_checkpoint(model, meta, base);
    write_text_atomic(base + ".prep.json", prep.to_json());
}

PreprocessorState load_prep(const std::string& ckpt_base) {
    std::ifstream in(ckpt_base + ".prep.json");
    if (!in)
        throw DataError("missing preprocessor state '" + ckpt_base + ".prep.json'");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    return PreprocessorState::from_json(text);
}

double test_auc(TabRetModel& model, const Dataset& test, int* n_test) {
    const ColumnSpec* target = test.schema.find(*test.schema.target);
    if (!target || target->kind != ColumnKind::Categorical || target->cardinality != 2)
        throw ValidationError("AUC evaluation needs a binary categorical target");
    std::vector<double> scores = predict_positive_scores(model, test);
    *n_test = test.row_count;
    return roc_auc(scores, test.categorical.at(target->name));
}

// -------------------------------------------------------------------------
// Commands

int cmd_synth(const std::string& config_path, uint64_t seed, const std::string& out) {
    SyntheticSpec spec;
    if (!config_path.empty()) {
        json j = load_json_file(config_path);
        reject_unknown_keys(j,
                            {"latent_dim", "pretext_columns", "downstream_columns",
                             "overlap", "noise", "pretext_rows", "downstream_rows",
                             "categorical_every", "cardinality"},
                            "synth config");
        maybe_set(j, "latent_dim", spec.latent_dim);
        maybe_set(j, "pretext_columns", spec.pretext_columns);
        maybe_set(j, "downstream_columns", spec.downstream_columns);
        maybe_set(j, "overlap", spec.overlap);
        maybe_set(j, "noise", spec.noise);
        maybe_set(j, "pretext_rows", spec.pretext_rows);
        maybe_set(j, "downstream_rows", spec.downstream_rows);
        maybe_set(j, "categorical_every", spec.categorical_every);
        maybe_set(j, "cardinality", spec.cardinality);
    }
    SyntheticResult r = generate_synthetic(spec, seed);
    auto emit = [&](const Dataset& d, const std::string& name) {
        save_csv(d, out_base(out, name + ".csv"));
        write_text_atomic(out_base(out, name + ".schema.json"),
                          schema_to_json_string(d.schema));
        json cats = json::object();
        for (const auto& c : d.schema.columns)
            if (c.kind == ColumnKind::Categorical) {
                std::vector<std::string> order;
                for (int v = 0; v < c.cardinality; ++v) order.push_back(std::to_string(v));
                cats[c.name] = order;
            }
        write_text_atomic(out_base(out, name + ".categories.json"), cats.dump(2) + "\n");
    };
    emit(r.pretext, "pretext");
    emit(r.downstream, "downstream");
    std::cout << "wrote " << out << "/{pretext,downstream}.{csv,schema.json,categories.json}\n";
    return 0;
}

int cmd_pretrain(const std::string& config_path, uint64_t seed, const std::string& out,
                 const std::string& precision, UnseenCategoryPolicy policy) {
    RunConfig cfg = parse_run_config(config_path);
    TabRetConfig mc = model_config_from(cfg.model);
    PhaseConfig pc = phase_config_from(cfg.phase, Phase::Pretrain);

    LoadedTable table = load_table(cfg, policy);
    // pretext tables carry no fine-tuning subset
    SplitResult split = split_dataset(table.data, seed, cfg.split.test_frac,
                                      cfg.split.val_frac, 0);
    PreprocessorState prep = fit_preprocessor(split.pretrain, cfg.n_quantiles);
    Dataset train = apply_preprocessor(prep, split.pretrain);
    Dataset val = apply_preprocessor(prep, split.validation);

    RngState init_rng = RngState(seed).split("init");
    TabRetModel model(table.schema, mc, init_rng);
    TrainResult r = run_pretraining(model, train, val, pc, seed);

    write_history(out_base(out, "pretrain.history.ndjson"), r.history);
    CheckpointMeta meta;
    meta.seed = seed;
    meta.phase_history = {"pretrain"};
    save_model(model, prep, meta, precision, out_base(out, "pretrain"));
    std::cout << "pretrain done: best_val=" << r.best_val
              << " epochs=" << r.history.size() << "\n";
    return 0;
}

int cmd_retokenize(const std::string& config_path, const std::string& ckpt,
                   uint64_t seed, const std::string& out, const std::string& precision,
                   UnseenCategoryPolicy policy) {
    RunConfig cfg = parse_run_config(config_path);
    PhaseConfig pc = phase_config_from(cfg.phase, Phase::Retokenize);

    LoadedCheckpoint loaded = load_checkpoint(ckpt);
    PreprocessorState prior = load_prep(ckpt);
    TabRetModel model = std::move(loaded.model);

    LoadedTable table = load_table(cfg, policy, &prior.category_order);
    ColumnAlignment align = align_schemas(model.schema(), table.schema);
    if (align.new_columns.empty())
        std::cerr << "warning: no new columns; parameters unchanged beyond copy\n";

    SplitResult split = split_dataset(table.data, seed, cfg.split.test_frac,
                                      cfg.split.val_frac, cfg.split.finetune_count);
    PreprocessorState prep = fit_preprocessor(split.finetune, cfg.n_quantiles);
    Dataset train = apply_preprocessor(prep, split.finetune);
    Dataset val = apply_preprocessor(prep, split.validation);

    RngState extend_rng = RngState(seed).split("extend");
    std::vector<ColumnSpec> new_specs;
    for (const auto& name : align.new_columns) new_specs.push_back(*table.schema.find(name));
    model.extend_for_columns(new_specs, extend_rng);
    if (table.schema.target &&
        !model.params().contains("post.pos." + *table.schema.target))
        model.extend_for_target(*table.schema.find(*table.schema.target), extend_rng);
    model.bind_schema(table.schema);

    TrainResult r = run_retokenizing(model, train, val, align, pc, seed);

    write_history(out_base(out, "retokenize.history.ndjson"), r.history);
    CheckpointMeta meta = loaded.meta;
    meta.seed = seed;
    meta.phase_history.push_back("retokenize");
    save_model(model, prep, meta, precision, out_base(out, "retokenize"));
    std::cout << "retokenize done: best_val=" << r.best_val
              << " new_columns=" << align.new_columns.size() << "\n";
    return 0;
}

int cmd_finetune(const std::string& config_path, const std::string& ckpt, uint64_t seed,
                 const std::string& out, const std::string& precision,
                 UnseenCategoryPolicy policy) {
    RunConfig cfg = parse_run_config(config_path);
    PhaseConfig pc = phase_config_from(cfg.phase, Phase::Finetune);

    LoadedCheckpoint loaded = load_checkpoint(ckpt);
    PreprocessorState prior = load_prep(ckpt);
    TabRetModel model = std::move(loaded.model);

    LoadedTable table = load_table(cfg, policy, &prior.category_order);
    if (!table.schema.target)
        throw ValidationError("fine-tuning requires a target column in the schema");

    SplitResult split = split_dataset(table.data, seed, cfg.split.test_frac,
                                      cfg.split.val_frac, cfg.split.finetune_count);
    PreprocessorState prep = fit_preprocessor(split.finetune, cfg.n_quantiles);
    Dataset train = apply_preprocessor(prep, split.finetune);
    Dataset val = apply_preprocessor(prep, split.validation);
    Dataset test = apply_preprocessor(prep, split.test);

    // IID mode: a pretrain checkpoint has no target head yet
    if (!model.params().contains("post.pos." + *table.schema.target)) {
        RngState extend_rng = RngState(seed).split("extend");
        model.extend_for_target(*table.schema.find(*table.schema.target), extend_rng);
    }
    model.bind_schema(table.schema);

    TrainResult r = run_finetuning(model, train, val, pc, seed);

    int n_test = 0;
    double auc = test_auc(model, test, &n_test);

    write_history(out_base(out, "finetune.history.ndjson"), r.history);
    CheckpointMeta meta = loaded.meta;
    meta.seed = seed;
    meta.phase_history.push_back("finetune");
    save_model(model, prep, meta, precision, out_base(out, "finetune"));
    write_report(out_base(out, "finetune.report.json"),
                 json{{"auc", auc}, {"seed", seed}, {"n_test", n_test}});
    std::cout << "finetune done: auc=" << auc << " n_test=" << n_test << "\n";
    return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& ckpt, uint64_t seed,
                 const std::string& out, UnseenCategoryPolicy policy) {
    RunConfig cfg = parse_run_config(config_path);

    LoadedCheckpoint loaded = load_checkpoint(ckpt);
    PreprocessorState prep = load_prep(ckpt);
    TabRetModel model = std::move(loaded.model);

    LoadedTable table = load_table(cfg, policy, &prep.category_order);
    if (!table.schema.target)
        throw ValidationError("evaluation requires a target column in the schema");
    SplitResult split = split_dataset(table.data, seed, cfg.split.test_frac,
                                      cfg.split.val_frac, cfg.split.finetune_count);
    Dataset test = apply_preprocessor(prep, split.test);

    model.bind_schema(table.schema);
    int n_test = 0;
    double auc = test_auc(model, test, &n_test);
    write_report(out_base(out, "evaluate.report.json"),
                 json{{"auc", auc}, {"seed", seed}, {"n_test", n_test}});
    std::cout << "evaluate done: auc=" << auc << " n_test=" << n_test << "\n";
    return 0;
}

int cmd_gradcheck(uint64_t seed, const std::string& out, const std::string& precision) {
    if (precision == "single")
        throw ValidationError("gradcheck requires double precision");
    GradCheckReport r = gradcheck_tiny_model(1e-6, seed);
    for (const auto& [name, err] : r.per_param)
        std::cout << name << " " << err << "\n";
    std::cout << "max_rel_error=" << r.max_rel_error << " worst=" << r.worst_param
              << "\n";
    if (!out.empty())
        write_report(out_base(out, "gradcheck.report.json"),
                     json{{"max_rel_error", r.max_rel_error},
                          {"worst_param", r.worst_param},
                          {"seed", seed}});
    if (r.max_rel_error > 1e-4)
        throw NumericalError("gradient check failed: max relative error " +
                             std::to_string(r.max_rel_error));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Masked tabular autoencoder with cross-schema transfer"};
    app.require_subcommand(1);

    std::string config, checkpoint, out = "out", precision = "double",
                                   unseen = "error";
    uint64_t seed = 0;

    auto add_common = [&](CLI::App* sub, bool needs_config, bool needs_ckpt) {
        auto* c = sub->add_option("--config", config, "JSON run configuration");
        if (needs_config) c->required();
        auto* k = sub->add_option("--checkpoint", checkpoint, "checkpoint base path");
        if (needs_ckpt) k->required();
        sub->add_option("--seed", seed, "RNG seed");
        sub->add_option("--out", out, "output directory");
        sub->add_option("--precision", precision, "checkpoint storage: single|double");
        sub->add_option("--unseen-category-policy", unseen,
                        "unseen categories at load: error|reserved");
    };

    CLI::App* s_pretrain = app.add_subcommand("pretrain", "masked pre-training");
    add_common(s_pretrain, true, false);
    CLI::App* s_retok = app.add_subcommand("retokenize", "train new-column tokenizers");
    add_common(s_retok, true, true);
    CLI::App* s_finetune = app.add_subcommand("finetune", "train the target head");
    add_common(s_finetune, true, true);
    CLI::App* s_eval = app.add_subcommand("evaluate", "test-split AUC report");
    add_common(s_eval, true, true);
    CLI::App* s_grad = app.add_subcommand("gradcheck", "finite-difference audit");
    add_common(s_grad, false, false);
    CLI::App* s_synth = app.add_subcommand("synth", "emit synthetic tables");
    add_common(s_synth, false, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        check_precision(precision);
        UnseenCategoryPolicy policy = policy_from(unseen);
        if (s_pretrain->parsed())
            return cmd_pretrain(config, seed, out, precision, policy);
        if (s_retok->parsed())
            return cmd_retokenize(config, checkpoint, seed, out, precision, policy);
        if (s_finetune->parsed())
            return cmd_finetune(config, checkpoint, seed, out, precision, policy);
        if (s_eval->parsed()) return cmd_evaluate(config, checkpoint, seed, out, policy);
        if (s_grad->parsed()) {
            // the reference init is seed 5 unless the caller overrides it
            uint64_t gseed = s_grad->get_option("--seed")->count() ? seed : 5;
            std::string gout = s_grad->get_option("--out")->count() ? out : "";
            return cmd_gradcheck(gseed, gout, precision);
        }
        if (s_synth->parsed()) return cmd_synth(config, seed, out);
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
