#include "tabret/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace tabret {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json schema_to_json(const TableSchema& s) {
    return json::parse(schema_to_json_string(s));
}

TableSchema schema_from_json(const json& j) {
    return schema_from_json_string(j.dump());
}

json config_to_json(const TabRetConfig& c) {
    return json{{"n_blocks", c.n_blocks},
                {"d_token", c.token_dim()},
                {"n_heads", c.n_heads},
                {"ffn_size_factor", c.ffn_size_factor},
                {"attn_dropout", c.attn_dropout},
                {"ffn_dropout", c.ffn_dropout},
                {"residual_dropout", c.residual_dropout},
                {"d_pe", c.pe_dim()},
                {"ln_eps", c.ln_eps}};
}

TabRetConfig config_from_json(const json& j) {
    TabRetConfig c;
    c.n_blocks = j.at("n_blocks").get<int>();
    c.d_token = j.at("d_token").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.ffn_size_factor = j.at("ffn_size_factor").get<double>();
    c.attn_dropout = j.at("attn_dropout").get<double>();
    c.ffn_dropout = j.at("ffn_dropout").get<double>();
    c.residual_dropout = j.at("residual_dropout").get<double>();
    c.d_pe = j.at("d_pe").get<int>();
    c.ln_eps = j.at("ln_eps").get<double>();
    c.validate();
    return c;
}

void atomic_write(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError("write failed for " + tmp);
    }
    fs::rename(tmp, path);
}

}  // namespace

void save_checkpoint(const TabRetModel& model, const CheckpointMeta& meta,
                     const std::string& base_path) {
    if (meta.precision != "single" && meta.precision != "double")
        throw ValidationError("precision must be 'single' or 'double'");
    const size_t width = meta.precision == "single" ? 4 : 8;

    json index = json::array();
    std::string blob;
    size_t offset = 0;
    for (const auto& [name, p] : model.params()) {
        index.push_back(json{{"name", name},
                             {"rows", p.value.rows},
                             {"cols", p.value.cols},
                             {"precision", meta.precision},
                             {"offset", offset},
                             {"trainable", p.trainable}});
        for (double v : p.value.data) {
            if (width == 4) {
                float f = static_cast<float>(v);
                char buf[4];
                std::memcpy(buf, &f, 4);
                blob.append(buf, 4);
            } else {
                char buf[8];
                std::memcpy(buf, &v, 8);
                blob.append(buf, 8);
            }
        }
        offset += p.value.size() * width;
    }

    json manifest{{"format_version", meta.format_version},
                  {"schema", schema_to_json(model.schema())},
                  {"config", config_to_json(model.config())},
                  {"params", index},
                  {"seed", meta.seed},
                  {"phase_history", meta.phase_history},
                  {"blob_bytes", blob.size()}};

    atomic_write(base_path + ".bin", blob);
    atomic_write(base_path + ".json", manifest.dump(2));
}

LoadedCheckpoint load_checkpoint(const std::string& base_path) {
    std::ifstream mf(base_path + ".json");
    if (!mf) throw DataError("cannot open " + base_path + ".json");
    json manifest = json::parse(mf);

    if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion)
        throw DataError("unsupported checkpoint format version");

    std::ifstream bf(base_path + ".bin", std::ios::binary);
    if (!bf) throw DataError("cannot open " + base_path + ".bin");
    std::string blob((std::istreambuf_iterator<char>(bf)),
                     std::istreambuf_iterator<char>());
    if (blob.size() != manifest.at("blob_bytes").get<size_t>())
        throw DataError("checkpoint blob size disagrees with manifest");

    TableSchema schema = schema_from_json(manifest.at("schema"));
    TabRetConfig config = config_from_json(manifest.at("config"));

    CheckpointMeta meta;
    meta.format_version = manifest.at("format_version").get<int>();
    meta.seed = manifest.at("seed").get<uint64_t>();
    meta.phase_history = manifest.at("phase_history").get<std::vector<std::string>>();

    RngState rng(0);
    LoadedCheckpoint out{TabRetModel(std::move(schema), config, rng), meta};

    size_t loaded = 0;
    for (const auto& entry : manifest.at("params")) {
        const std::string name = entry.at("name").get<std::string>();
        const int rows = entry.at("rows").get<int>();
        const int cols = entry.at("cols").get<int>();
        const std::string prec = entry.at("precision").get<std::string>();
        const size_t width = prec == "single" ? 4 : 8;
        const size_t offset = entry.at("offset").get<size_t>();
        const size_t count = static_cast<size_t>(rows) * cols;
        if (offset + count * width > blob.size())
            throw DataError("checkpoint blob truncated at parameter '" + name + "'");
        meta.precision = prec;

        Matrix value(rows, cols);
        for (size_t i = 0; i < count; ++i) {
            if (width == 4) {
                float f;
                std::memcpy(&f, blob.data() + offset + i * 4, 4);
                value.data[i] = static_cast<double>(f);
            } else {
                std::memcpy(&value.data[i], blob.data() + offset + i * 8, 8);
            }
        }
        Parameter* p;
        if (out.model.params().contains(name)) {
            p = &out.model.params().get(name);
            if (!p->value.same_shape(value))
                throw DataError("shape mismatch for parameter '" + name + "'");
            p->value = std::move(value);
        } else {
            // parameters for columns outside the current schema stay inert
            p = &out.model.params().add(name, std::move(value));
        }
        p->trainable = entry.at("trainable").get<bool>();
        ++loaded;
    }
    if (loaded < out.model.params().size())
        throw DataError("manifest parameter count disagrees with model registry");
    out.meta = meta;
    out.model.rebuild_views();
    return out;
}

}  // namespace tabret
