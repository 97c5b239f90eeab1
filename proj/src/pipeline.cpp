#include "chroma/pipeline.hpp"

#include <json.hpp>

#include <algorithm>

#include "chroma/error.hpp"

namespace chroma {

namespace {

// Restores `model`'s named tensors from the checkpoint, demanding an exact
// name and shape correspondence in both directions.
void restore_parameters(NamedTensors params,
                        const std::vector<std::pair<std::string, Tensor>>& saved,
                        const std::string& kind) {
    if (params.size() != saved.size())
        throw DataError("checkpoint restore (" + kind + "): model has " +
                        std::to_string(params.size()) + " tensors but the file carries " +
                        std::to_string(saved.size()));
    for (auto& [name, storage] : params) {
        const auto it =
            std::find_if(saved.begin(), saved.end(), [&](const auto& s) { return s.first == name; });
        if (it == saved.end())
            throw DataError("checkpoint restore (" + kind + "): missing tensor '" + name + "'");
        if (!it->second.same_shape(*storage))
            throw DataError("checkpoint restore (" + kind + "): tensor '" + name + "' is " +
                            Tensor::shape_str(it->second.shape()) + ", expected " +
                            Tensor::shape_str(storage->shape()));
        *storage = it->second;
    }
}

Tensor normalized_grey(const ColorField& field) {
    Tensor grey(field.L.shape());
    for (std::int64_t i = 0; i < grey.size(); ++i) grey[i] = field.L[i] / 100.0;
    return grey;
}

}  // namespace

Checkpoint vae_checkpoint(VaeModel& model, const PcaBasis& basis, const AbHistogram& hist,
                          std::uint64_t seed) {
    const VaeConfig& config = model.config();
    Checkpoint ckpt;
    ckpt.kind = config.variant == VaeConfig::Variant::cvae ? "cvae" : "vae";
    nlohmann::json j;
    j["field_size"] = config.field_size;
    j["embedding_dim"] = config.embedding_dim;
    j["channel_widths"] = config.channel_widths;
    j["use_batchnorm"] = config.use_batchnorm;
    j["skip_connections"] = config.skip_connections;
    ckpt.config_json = j.dump();
    ckpt.seed = seed;
    for (auto& [name, tensor] : model.parameters()) ckpt.tensors.emplace_back(name, *tensor);
    ckpt.basis = basis;
    ckpt.hist = hist;
    return ckpt;
}

VaeModel vae_from_checkpoint(const Checkpoint& ckpt, PcaBasis* basis_out,
                             AbHistogram* hist_out) {
    if (ckpt.kind != "vae" && ckpt.kind != "cvae")
        throw DataError("expected a vae or cvae checkpoint, found kind '" + ckpt.kind + "'");
    VaeConfig config;
    try {
        const nlohmann::json j = nlohmann::json::parse(ckpt.config_json);
        config.field_size = j.at("field_size").get<int>();
        config.embedding_dim = j.at("embedding_dim").get<int>();
        config.channel_widths = j.at("channel_widths").get<std::vector<int>>();
        config.use_batchnorm = j.at("use_batchnorm").get<bool>();
        config.skip_connections = j.at("skip_connections").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed vae checkpoint config: ") + e.what());
    }
    config.variant =
        ckpt.kind == "cvae" ? VaeConfig::Variant::cvae : VaeConfig::Variant::plain;
    Rng scratch(0);  // immediately overwritten by the restore
    VaeModel model(config, scratch);
    restore_parameters(model.parameters(), ckpt.tensors, ckpt.kind);
    if (basis_out) {
        if (!ckpt.basis) throw DataError("vae checkpoint carries no color basis");
        *basis_out = *ckpt.basis;
    }
    if (hist_out) {
        if (!ckpt.hist) throw DataError("vae checkpoint carries no color histogram");
        *hist_out = *ckpt.hist;
    }
    return model;
}

Checkpoint mdn_checkpoint(MdnModel& model, std::uint64_t seed) {
    const MdnConfig& config = model.config();
    Checkpoint ckpt;
    ckpt.kind = "mdn";
    nlohmann::json j;
    j["field_size"] = config.field_size;
    j["embedding_dim"] = config.embedding_dim;
    j["components"] = config.components;
    j["sigma_sq"] = config.sigma_sq;
    ckpt.config_json = j.dump();
    ckpt.seed = seed;
    for (auto& [name, tensor] : model.parameters()) ckpt.tensors.emplace_back(name, *tensor);
    return ckpt;
}

MdnModel mdn_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.kind != "mdn")
        throw DataError("expected an mdn checkpoint, found kind '" + ckpt.kind + "'");
    MdnConfig config;
    try {
        const nlohmann::json j = nlohmann::json::parse(ckpt.config_json);
        config.field_size = j.at("field_size").get<int>();
        config.embedding_dim = j.at("embedding_dim").get<int>();
        config.components = j.at("components").get<int>();
        config.sigma_sq = j.at("sigma_sq").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed mdn checkpoint config: ") + e.what());
    }
    Rng scratch(0);
    MdnModel model(config, scratch);
    restore_parameters(model.parameters(), ckpt.tensors, ckpt.kind);
    return model;
}

std::vector<std::pair<Tensor, Tensor>> embed_corpus(VaeModel& vae,
                                                    const std::vector<ColorField>& fields) {
    std::vector<std::pair<Tensor, Tensor>> pairs;
    pairs.reserve(fields.size());
    for (const ColorField& field : fields)
        pairs.emplace_back(normalized_grey(field), vae.encode(field).first);
    return pairs;
}

std::vector<ColorField> colorize_topk(VaeModel& vae, MdnModel& mdn, const Tensor& grey_raw,
                                      int k) {
    if (vae.config().field_size != mdn.config().field_size ||
        vae.config().embedding_dim != mdn.config().embedding_dim)
        throw UsageError("colorize: vae and mdn models disagree on field geometry");
    Tensor grey_norm(grey_raw.shape());
    for (std::int64_t i = 0; i < grey_raw.size(); ++i) grey_norm[i] = grey_raw[i] / 100.0;
    const GmmParams gmm = mdn.predict(grey_norm);
    const std::vector<Tensor> modes = sample_topk(gmm, k);
    std::vector<ColorField> fields;
    fields.reserve(modes.size());
    const bool cvae = vae.config().variant == VaeConfig::Variant::cvae;
    for (const Tensor& z : modes) {
        ColorField field = cvae ? vae.decode(z, grey_raw) : vae.decode(z);
        field.L = grey_raw;
        fields.push_back(std::move(field));
    }
    return fields;
}

EvalReport evaluate(VaeModel& vae, MdnModel& mdn, const AbHistogram& hist,
                    const CorpusManifest& manifest, const std::vector<ColorField>& fields,
                    int k) {
    if (manifest.files.size() != fields.size())
        throw ShapeError("evaluate: manifest lists " + std::to_string(manifest.files.size()) +
                         " files but " + std::to_string(fields.size()) + " fields were given");
    std::vector<ImageEval> rows;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (manifest.split[i] != 1) continue;
        const ColorField& target = fields[i];
        const std::vector<ColorField> preds = colorize_topk(vae, mdn, target.L, k);
        ImageEval row;
        row.name = manifest.files[i];
        row.mae_all = mae(preds.front(), target, EvalMode::all);
        row.mae_grid = mae(preds.front(), target, EvalMode::grid);
        row.wae_all = weighted_mae(preds.front(), target, hist, EvalMode::all);
        row.wae_grid = weighted_mae(preds.front(), target, hist, EvalMode::grid);
        row.eob = error_of_best(preds, target);
        row.variance = diversity_variance(preds);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError("evaluate: the manifest's test split is empty");
    return make_report(std::move(rows));
}

}  // namespace chroma
