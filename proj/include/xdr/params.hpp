#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "xdr/model.hpp"

namespace xdr {

// ---------------------------------------------------------------------------
// Partition

/// Disjoint, exhaustive split of the encoder's tensors. The domain subset is
/// the embeddings, the MLM output bias and layers [0, k); the rest is task.
struct ParameterPartition {
    std::int64_t k = 0;
    std::set<std::string> domain_names;
    std::set<std::string> task_names;
};

ParameterPartition partition_parameters(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Checkpoints

enum class Stage { Base, PretrainSource, PretrainTarget, FinetuneSource, Composed };

std::string stage_name(Stage stage);
Stage parse_stage(const std::string& name);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string checksum_hex(std::uint64_t checksum);

/// Little-endian f32 bytes of a tensor, as stored on disk.
std::vector<unsigned char> tensor_bytes(const Tensor<float>& t);

struct TensorRecord {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;
    std::uint64_t nbytes = 0;
    std::uint64_t checksum = 0;
};

struct ParentLink {
    Stage stage = Stage::Base;
    std::uint64_t checksum = 0;
};

struct Manifest {
    static constexpr int kSchemaVersion = 1;

    ModelConfig config;
    Stage stage = Stage::Base;
    std::vector<TensorRecord> tensors;
    std::vector<ParentLink> parents;
    std::uint64_t vocab_checksum = 0;
    /// Checksum of the whole tensors.bin blob; identifies the checkpoint.
    std::uint64_t blob_checksum = 0;
    std::map<std::string, std::string> notes;
};

struct Checkpoint {
    Manifest manifest;
    Weights weights;

    std::uint64_t checksum() const noexcept { return manifest.blob_checksum; }
    Stage stage() const noexcept { return manifest.stage; }
    const ModelConfig& config() const noexcept { return manifest.config; }
    ParentLink link() const { return {manifest.stage, manifest.blob_checksum}; }
};

/// Builds the manifest (records, offsets, checksums) for a complete weight set.
Checkpoint make_checkpoint(Weights weights, const ModelConfig& config, Stage stage,
                           std::vector<ParentLink> parents, std::uint64_t vocab_checksum,
                           std::map<std::string, std::string> notes = {});

/// Concatenated tensors.bin contents in manifest order.
std::vector<unsigned char> serialize_blob(const Checkpoint& ckpt);

/// Writes {manifest.json, tensors.bin} into a temporary sibling directory and
/// renames it over `dir`.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);

/// Verifies every tensor checksum (naming the first bad tensor) and the blob
/// checksum, and that the tensor set matches the config's naming scheme.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

struct ComposeOptions {
    /// Require domain parent in {base, pretrain_*} and task parent in
    /// {finetune_source}. Surgery tests that compose arbitrary checkpoints
    /// turn this off.
    bool enforce_stage_roles = true;
};

/// Domain tensors byte-exactly from `domain`, task tensors from `task`.
Checkpoint compose(const Checkpoint& domain, const Checkpoint& task, ComposeOptions options = {});

struct TensorDiff {
    std::string name;
    bool identical = false;
    bool expected_frozen = false;
};

struct FreezeReport {
    bool pass = false;
    std::vector<TensorDiff> tensors;
    std::vector<std::string> failures;

    std::string summary() const;
};

/// PASS iff every expected-frozen tensor is byte-identical and at least one
/// other tensor changed.
FreezeReport freeze_verify(const Checkpoint& before, const Checkpoint& after,
                           const std::set<std::string>& expected_frozen);

}  // namespace xdr
