#include "xdr/params.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "xdr/error.hpp"

namespace xdr {

namespace fs = std::filesystem;
using nlohmann::json;

ParameterPartition partition_parameters(const ModelConfig& config) {
    if (config.k_domain_layers < 0) throw Error("k must be non-negative");
    if (static_cast<std::size_t>(config.k_domain_layers) >= config.layers) {
        throw Error("k=" + std::to_string(config.k_domain_layers) + " with L=" +
                    std::to_string(config.layers) + ": no task layers remain");
    }
    ParameterPartition p;
    p.k = config.k_domain_layers;
    const auto k = static_cast<std::size_t>(config.k_domain_layers);
    for (const auto& name : parameter_names(config)) {
        bool domain = true;
        if (name.starts_with("layer.")) {
            const auto end = name.find('.', 6);
            const std::size_t layer = std::stoul(name.substr(6, end - 6));
            domain = layer < k;
        }
        (domain ? p.domain_names : p.task_names).insert(name);
    }
    return p;
}

std::string stage_name(Stage stage) {
    switch (stage) {
        case Stage::Base: return "base";
        case Stage::PretrainSource: return "pretrain_source";
        case Stage::PretrainTarget: return "pretrain_target";
        case Stage::FinetuneSource: return "finetune_source";
        case Stage::Composed: return "composed";
    }
    throw Error("invalid stage");
}

Stage parse_stage(const std::string& name) {
    for (Stage s : {Stage::Base, Stage::PretrainSource, Stage::PretrainTarget, Stage::FinetuneSource,
                    Stage::Composed}) {
        if (stage_name(s) == name) return s;
    }
    throw ParseError("unknown stage tag '" + name + "'");
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string checksum_hex(std::uint64_t checksum) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(checksum));
    return buf;
}

namespace {

std::uint64_t parse_hex(const std::string& s) {
    if (s.size() != 16) throw ParseError("bad checksum '" + s + "'");
    return std::stoull(s, nullptr, 16);
}

}  // namespace

std::vector<unsigned char> tensor_bytes(const Tensor<float>& t) {
    std::vector<unsigned char> out;
    out.reserve(t.size() * 4);
    for (float x : t.data()) {
        const auto u = std::bit_cast<std::uint32_t>(x);
        for (int s = 0; s < 32; s += 8) out.push_back(static_cast<unsigned char>(u >> s));
    }
    return out;
}

Checkpoint make_checkpoint(Weights weights, const ModelConfig& config, Stage stage,
                           std::vector<ParentLink> parents, std::uint64_t vocab_checksum,
                           std::map<std::string, std::string> notes) {
    config.validate();
    const auto shapes = parameter_shapes(config);
    for (const auto& [name, shape] : shapes) {
        auto it = weights.find(name);
        if (it == weights.end()) throw Error("missing tensor '" + name + "'");
        if (it->second.shape() != shape) {
            throw DimensionError("tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                                 ", config expects " + shape_str(shape));
        }
    }
    for (const auto& [name, t] : weights) {
        if (!shapes.contains(name)) throw Error("unexpected tensor '" + name + "'");
    }

    Checkpoint ckpt;
    ckpt.manifest.config = config;
    ckpt.manifest.stage = stage;
    ckpt.manifest.parents = std::move(parents);
    ckpt.manifest.vocab_checksum = vocab_checksum;
    ckpt.manifest.notes = std::move(notes);
    std::uint64_t offset = 0;
    std::uint64_t blob = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : weights) {
        const auto bytes = tensor_bytes(t);
        ckpt.manifest.tensors.push_back({name, t.shape(), offset, bytes.size(), fnv1a64(bytes)});
        blob = fnv1a64(bytes, blob);
        offset += bytes.size();
    }
    ckpt.manifest.blob_checksum = blob;
    ckpt.weights = std::move(weights);
    return ckpt;
}

std::vector<unsigned char> serialize_blob(const Checkpoint& ckpt) {
    std::vector<unsigned char> blob;
    for (const auto& rec : ckpt.manifest.tensors) {
        const auto bytes = tensor_bytes(ckpt.weights.at(rec.name));
        blob.insert(blob.end(), bytes.begin(), bytes.end());
    }
    return blob;
}

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"vocab_size", c.vocab_size}, {"layers", c.layers},   {"d_model", c.d_model},
                {"n_heads", c.n_heads},       {"d_ffn", c.d_ffn},     {"max_seq_len", c.max_seq_len},
                {"k_domain_layers", c.k_domain_layers}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ffn = j.at("d_ffn").get<std::size_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    c.k_domain_layers = j.at("k_domain_layers").get<std::int64_t>();
    return c;
}

json manifest_to_json(const Manifest& m) {
    json tensors = json::array();
    for (const auto& r : m.tensors) {
        tensors.push_back({{"name", r.name},
                           {"shape", r.shape},
                           {"dtype", "f32"},
                           {"offset", r.offset},
                           {"nbytes", r.nbytes},
                           {"checksum", checksum_hex(r.checksum)}});
    }
    json parents = json::array();
    for (const auto& p : m.parents) {
        parents.push_back({{"stage", stage_name(p.stage)}, {"checksum", checksum_hex(p.checksum)}});
    }
    return json{{"schema_version", Manifest::kSchemaVersion},
                {"stage", stage_name(m.stage)},
                {"k", m.config.k_domain_layers},
                {"config", config_to_json(m.config)},
                {"vocab_checksum", checksum_hex(m.vocab_checksum)},
                {"parents", parents},
                {"tensors", tensors},
                {"blob_checksum", checksum_hex(m.blob_checksum)},
                {"notes", m.notes}};
}

Manifest manifest_from_json(const json& j) {
    if (j.at("schema_version").get<int>() != Manifest::kSchemaVersion) {
        throw ParseError("unsupported checkpoint schema version");
    }
    Manifest m;
    m.config = config_from_json(j.at("config"));
    if (j.at("k").get<std::int64_t>() != m.config.k_domain_layers) {
        throw ParseError("manifest k disagrees with its model config");
    }
    m.stage = parse_stage(j.at("stage").get<std::string>());
    m.vocab_checksum = parse_hex(j.at("vocab_checksum").get<std::string>());
    m.blob_checksum = parse_hex(j.at("blob_checksum").get<std::string>());
    for (const auto& p : j.at("parents")) {
        m.parents.push_back({parse_stage(p.at("stage").get<std::string>()),
                             parse_hex(p.at("checksum").get<std::string>())});
    }
    for (const auto& t : j.at("tensors")) {
        if (t.at("dtype").get<std::string>() != "f32") throw ParseError("unsupported dtype");
        m.tensors.push_back({t.at("name").get<std::string>(), t.at("shape").get<Shape>(),
                             t.at("offset").get<std::uint64_t>(), t.at("nbytes").get<std::uint64_t>(),
                             parse_hex(t.at("checksum").get<std::string>())});
    }
    m.notes = j.at("notes").get<std::map<std::string, std::string>>();
    return m;
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
    const auto blob = serialize_blob(ckpt);
    if (fnv1a64(blob) != ckpt.manifest.blob_checksum) {
        throw CorruptionError("checkpoint weights changed after its manifest was built");
    }
    fs::path tmp = dir;
    tmp += ".tmp";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    write_file(tmp / "manifest.json", manifest_to_json(ckpt.manifest).dump(2) + "\n");
    write_file(tmp / "tensors.bin", std::string(blob.begin(), blob.end()));
    fs::remove_all(dir);
    if (dir.has_parent_path()) fs::create_directories(dir.parent_path());
    fs::rename(tmp, dir);
}

Checkpoint load_checkpoint(const fs::path& dir) {
    json j;
    try {
        j = json::parse(read_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw ParseError("bad manifest in " + dir.string() + ": " + e.what());
    }
    Checkpoint ckpt;
    try {
        ckpt.manifest = manifest_from_json(j);
    } catch (const json::exception& e) {
        throw ParseError("bad manifest in " + dir.string() + ": " + e.what());
    }
    const std::string blob = read_file(dir / "tensors.bin");
    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());

    const auto shapes = parameter_shapes(ckpt.manifest.config);
    std::string prev;
    for (const auto& rec : ckpt.manifest.tensors) {
        if (!prev.empty() && !(prev < rec.name)) throw ParseError("manifest tensors not in name order");
        prev = rec.name;
        auto expected = shapes.find(rec.name);
        if (expected == shapes.end()) throw Error("unexpected tensor '" + rec.name + "'");
        if (expected->second != rec.shape) {
            throw DimensionError("tensor '" + rec.name + "' shape " + shape_str(rec.shape) +
                                 " disagrees with config " + shape_str(expected->second));
        }
        if (rec.nbytes != shape_size(rec.shape) * 4 || rec.offset + rec.nbytes > blob.size()) {
            throw CorruptionError("tensor '" + rec.name + "' extends past the end of tensors.bin");
        }
        std::span<const unsigned char> raw(bytes + rec.offset, rec.nbytes);
        if (fnv1a64(raw) != rec.checksum) {
            throw CorruptionError("checksum mismatch in tensor '" + rec.name + "'");
        }
        Tensor<float> t(rec.shape);
        for (std::size_t i = 0; i < t.size(); ++i) {
            std::uint32_t u = 0;
            for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(raw[i * 4 + b]) << (8 * b);
            t[i] = std::bit_cast<float>(u);
        }
        ckpt.weights.emplace(rec.name, std::move(t));
    }
    for (const auto& [name, shape] : shapes) {
        if (!ckpt.weights.contains(name)) throw Error("checkpoint is missing tensor '" + name + "'");
    }
    if (fnv1a64(std::span<const unsigned char>(bytes, blob.size())) != ckpt.manifest.blob_checksum) {
        throw CorruptionError("tensors.bin checksum mismatch in " + dir.string());
    }
    return ckpt;
}

Checkpoint compose(const Checkpoint& domain, const Checkpoint& task, ComposeOptions options) {
    const ModelConfig& dc = domain.config();
    const ModelConfig& tc = task.config();
    if (dc.k_domain_layers != tc.k_domain_layers) {
        throw Error("compose: k mismatch (" + std::to_string(dc.k_domain_layers) + " vs " +
                    std::to_string(tc.k_domain_layers) + ")");
    }
    if (!(dc == tc)) throw Error("compose: model configs differ");
    if (domain.manifest.vocab_checksum != task.manifest.vocab_checksum) {
        throw Error("compose: parents were trained with different vocabularies");
    }
    if (options.enforce_stage_roles) {
        const Stage ds = domain.stage();
        if (ds != Stage::Base && ds != Stage::PretrainSource && ds != Stage::PretrainTarget) {
            throw Error("compose: domain parent has stage " + stage_name(ds) +
                        ", expected base or pretrain_*");
        }
        if (task.stage() != Stage::FinetuneSource) {
            throw Error("compose: task parent has stage " + stage_name(task.stage()) +
                        ", expected finetune_source");
        }
    }
    const ParameterPartition part = partition_parameters(dc);
    Weights out;
    for (const auto& name : part.domain_names) out.emplace(name, domain.weights.at(name));
    for (const auto& name : part.task_names) out.emplace(name, task.weights.at(name));
    for (const auto& [name, t] : out) {
        const auto& other = part.domain_names.contains(name) ? task.weights.at(name)
                                                             : domain.weights.at(name);
        if (other.shape() != t.shape()) {
            throw DimensionError("compose: tensor '" + name + "' shapes differ");
        }
    }
    auto notes = task.manifest.notes;
    notes["domain_parent_stage"] = stage_name(domain.stage());
    return make_checkpoint(std::move(out), dc, Stage::Composed, {domain.link(), task.link()},
                           domain.manifest.vocab_checksum, std::move(notes));
}

std::string FreezeReport::summary() const {
    std::string s = pass ? "PASS" : "FAIL";
    std::size_t changed = 0;
    for (const auto& t : tensors) changed += t.identical ? 0 : 1;
    s += " (" + std::to_string(changed) + "/" + std::to_string(tensors.size()) + " tensors changed)";
    for (const auto& f : failures) s += "\n  " + f;
    return s;
}

FreezeReport freeze_verify(const Checkpoint& before, const Checkpoint& after,
                           const std::set<std::string>& expected_frozen) {
    FreezeReport report;
    bool trained = false;
    bool frozen_ok = true;
    for (const auto& [name, t] : before.weights) {
        TensorDiff diff{name, false, expected_frozen.contains(name)};
        auto it = after.weights.find(name);
        if (it == after.weights.end()) {
            report.failures.push_back("tensor missing after training: " + name);
            frozen_ok = false;
        } else {
            diff.identical = tensor_bytes(t) == tensor_bytes(it->second);
        }
        if (diff.expected_frozen && !diff.identical) {
            report.failures.push_back("frozen tensor changed: " + name);
            frozen_ok = false;
        }
        if (!diff.expected_frozen && !diff.identical) trained = true;
        report.tensors.push_back(diff);
    }
    for (const auto& name : expected_frozen) {
        if (!before.weights.contains(name)) {
            report.failures.push_back("expected-frozen tensor does not exist: " + name);
            frozen_ok = false;
        }
    }
    if (!trained) report.failures.push_back("nothing trained: no non-frozen tensor changed");
    report.pass = frozen_ok && trained;
    return report;
}

}  // namespace xdr
